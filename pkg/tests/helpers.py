"""Small constructors shared by the unit tests."""

from __future__ import annotations

from pseudorect.core import AnchorRef, Box2D, ClassDistribution, Detection, DetectionSet


def det(probs, box=(0.0, 0.0, 1.0, 1.0), anchor=None, detector_id=0, image_id=0, score=None):
    return Detection(Box2D(*box), ClassDistribution(tuple(probs)),
                     None if anchor is None else AnchorRef(anchor),
                     detector_id=detector_id, image_id=image_id, score=score)


def dset(*dets, image_id=0):
    return DetectionSet(image_id, tuple(dets))


def peaked(c, k, s, box=(0.0, 0.0, 1.0, 1.0), **kw):
    return det(ClassDistribution.peaked(c, k, s).probs, box, **kw)
