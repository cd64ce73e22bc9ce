"""Line-oriented JSON dumps of detections and ground truth.

Native detection record::

    {"image_id": 3, "box": [x0, y0, x1, y1], "probs": [...], "anchor_id": 17, "detector_id": 0}

``anchor_id`` is optional. A record holding only ``image_id`` declares an
image with no detections, so empty outputs survive a round trip.

Score-only record (common detector exports)::

    {"image_id": 3, "box": [x, y, w, h], "category_id": 2, "score": 0.9}

Ground truth record::

    {"image_id": 3, "box": [x0, y0, x1, y1], "class_id": 1}
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

from ..core import AnchorRef, Box2D, ClassDistribution, Detection, DetectionSet, GroundTruthBox
from ..errors import IncompatibleDumps, IoError, ParseError, SchemaError, ValidationError

log = logging.getLogger(__name__)

FORMATS = ("native", "score_only")
# probability vectors this close to summing to 1 are renormalised; farther is an error
RENORM_TOL = 1e-6


def _lines(path: str | Path) -> Iterator[Tuple[int, dict]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, no) from exc
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", no)
        yield no, rec


def _field(rec: dict, name: str, no: int):
    if name not in rec:
        raise SchemaError(f"missing field {name!r}", no, name)
    return rec[name]


def _int(rec: dict, name: str, no: int) -> int:
    v = _field(rec, name, no)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"field {name!r} must be an integer", no, name)
    return v


def _reals(rec: dict, name: str, no: int, n: int | None = None) -> List[float]:
    v = _field(rec, name, no)
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                          for x in v):
        raise SchemaError(f"field {name!r} must be a list of numbers", no, name)
    if n is not None and len(v) != n:
        raise SchemaError(f"field {name!r} needs {n} numbers, got {len(v)}", no, name)
    return [float(x) for x in v]


def _box(rec: dict, no: int, xywh: bool = False) -> Box2D:
    vals = _reals(rec, "box", no, 4)
    try:
        return Box2D.from_xywh(*vals) if xywh else Box2D(*vals)
    except ValidationError as exc:
        raise SchemaError(str(exc), no, "box") from exc


def _probs(rec: dict, no: int) -> ClassDistribution:
    probs = _reals(rec, "probs", no)
    total = math.fsum(probs)
    if abs(total - 1.0) > 1e-9:
        if abs(total - 1.0) > RENORM_TOL or any(p < 0 for p in probs):
            raise SchemaError(f"probs sum to {total!r}, not 1", no, "probs")
        probs = [p / total for p in probs]
    try:
        return ClassDistribution(tuple(probs))
    except ValidationError as exc:
        raise SchemaError(str(exc), no, "probs") from exc


def _group(items: Sequence[Tuple[int, object]]) -> Dict[int, list]:
    out: Dict[int, list] = {}
    for image_id, item in items:
        bucket = out.setdefault(image_id, [])
        if item is not None:
            bucket.append(item)
    return out


def load_detection_dump(path: str | Path, fmt: str = "native",
                        num_classes: int | None = None) -> List[DetectionSet]:
    """Detection sets grouped by image id, in order of first appearance.

    Score-only records are expanded to a distribution with ``score`` on the
    class and the remaining mass spread uniformly; records whose score does
    not exceed ``1/C`` cannot be expanded that way and are skipped.
    """
    if fmt not in FORMATS:
        raise SchemaError(f"unknown dump format {fmt!r}")
    if fmt == "score_only" and (num_classes is None or num_classes < 2):
        raise SchemaError("score-only dumps need num_classes >= 2")
    items = []
    width = None
    skipped = 0
    for no, rec in _lines(path):
        image_id = _int(rec, "image_id", no)
        if fmt == "native" and set(rec) == {"image_id"}:
            items.append((image_id, None))
            continue
        if fmt == "native":
            box = _box(rec, no)
            dist = _probs(rec, no)
            if width is None:
                width = dist.num_classes
            elif dist.num_classes != width:
                raise SchemaError(f"probs length {dist.num_classes} differs from earlier {width}",
                                  no, "probs")
            anchor = AnchorRef(_int(rec, "anchor_id", no)) if "anchor_id" in rec else None
            det_id = _int(rec, "detector_id", no) if "detector_id" in rec else 0
        else:
            box = _box(rec, no, xywh=True)
            cls = _int(rec, "category_id", no)
            score = _reals({"score": [_field(rec, "score", no)]}, "score", no, 1)[0]
            if not (0 <= cls < num_classes):
                raise SchemaError(f"category_id {cls} outside [0, {num_classes})", no, "category_id")
            if not (0.0 <= score <= 1.0):
                raise SchemaError(f"score {score!r} outside [0, 1]", no, "score")
            if score <= 1.0 / num_classes:
                skipped += 1
                items.append((image_id, None))
                continue
            dist = ClassDistribution.peaked(num_classes, cls, score)
            anchor, det_id = None, 0
        items.append((image_id, Detection(box, dist, anchor, det_id, image_id)))
    if skipped:
        log.warning("%s: skipped %d score-only records with score <= 1/C", path, skipped)
    return [DetectionSet(i, tuple(dets)) for i, dets in _group(items).items()]


def load_ground_truth_dump(path: str | Path) -> Dict[int, Tuple[GroundTruthBox, ...]]:
    items = []
    for no, rec in _lines(path):
        image_id = _int(rec, "image_id", no)
        if set(rec) == {"image_id"}:
            items.append((image_id, None))
            continue
        box = _box(rec, no)
        cls = _int(rec, "class_id", no)
        if cls < 0:
            raise SchemaError(f"negative class_id {cls}", no, "class_id")
        items.append((image_id, GroundTruthBox(cls, box)))
    return {i: tuple(v) for i, v in _group(items).items()}


def _dump_lines(path: str | Path, lines: List[str]) -> None:
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def detection_records(sets: Sequence[DetectionSet]) -> List[str]:
    lines = []
    for s in sets:
        if len(s) == 0:
            lines.append(json.dumps({"image_id": s.image_id}))
        for d in s:
            rec = {"image_id": s.image_id, "box": list(d.geometry.as_tuple()),
                   "probs": list(d.dist.probs)}
            if d.anchor is not None:
                rec["anchor_id"] = d.anchor.anchor_id
            rec["detector_id"] = d.detector_id
            lines.append(json.dumps(rec))
    return lines


def write_detection_dump(path: str | Path, sets: Sequence[DetectionSet]) -> None:
    _dump_lines(path, detection_records(sets))


def write_ground_truth_dump(path: str | Path, gt: Mapping[int, Sequence[GroundTruthBox]]) -> None:
    lines = []
    for image_id, boxes in gt.items():
        if not boxes:
            lines.append(json.dumps({"image_id": image_id}))
        for g in boxes:
            lines.append(json.dumps({"image_id": image_id, "box": list(g.geometry.as_tuple()),
                                     "class_id": g.class_index}))
    _dump_lines(path, lines)


def check_compatible(sets_a: Sequence[DetectionSet], sets_b: Sequence[DetectionSet],
                     gt: Mapping[int, Sequence[GroundTruthBox]] | None = None) -> List[int]:
    """Shared image ids (sorted); raises when the two dumps cover different images."""
    ids_a = {s.image_id for s in sets_a}
    ids_b = {s.image_id for s in sets_b}
    if ids_a != ids_b:
        only_a, only_b = sorted(ids_a - ids_b)[:5], sorted(ids_b - ids_a)[:5]
        raise IncompatibleDumps(f"image ids differ: only in A {only_a}, only in B {only_b}")
    if gt is not None and not ids_a <= set(gt):
        raise IncompatibleDumps(f"detections for images without ground truth: "
                                f"{sorted(ids_a - set(gt))[:5]}")
    return sorted(ids_a)
