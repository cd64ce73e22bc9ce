import numpy as np
import pytest

from pseudorect.errors import ConfigError, ShapeMismatch
from pseudorect.toylab.detector import ToyDetectorParams, init_params
from pseudorect.toylab.oracle import NoiseModel
from pseudorect.toylab.scenes import generate_scenes, make_world
from pseudorect.toylab.training import (
    MODES,
    EmaState,
    OracleSeeding,
    TauSchedule,
    TrainConfig,
    ema_update,
    lambda_schedule,
    tau_at,
    train_run,
)


def test_lambda_schedule_examples():
    cfg = TrainConfig(iterations=1000, warmup_iterations=100, lambda_max=2.0, ramp_fraction=0.1)
    assert lambda_schedule(cfg, 0) == 0.0
    assert lambda_schedule(cfg, 99) == 0.0
    assert lambda_schedule(cfg, (100 + 999) // 2) == 2.0
    assert lambda_schedule(cfg, 999) == 0.0


def test_lambda_schedule_piecewise_linear_and_continuous():
    cfg = TrainConfig(iterations=500, warmup_iterations=50, lambda_max=1.5, ramp_fraction=0.2)
    vals = np.array([lambda_schedule(cfg, i) for i in range(500)])
    assert vals.min() >= 0.0 and vals.max() == 1.5
    ramp = 0.2 * (499 - 50)
    assert np.max(np.abs(np.diff(vals[50:]))) <= 1.5 / ramp + 1e-12
    assert vals[-1] == 0.0
    second = np.diff(vals[51:], 2)
    assert np.sum(np.abs(second) > 1e-9) <= 4  # only the kinks bend


def test_tau_schedule():
    cfg = TrainConfig(iterations=101, warmup_iterations=0, tau_schedule=TauSchedule("linear", 0.5, 0.8))
    assert tau_at(cfg, 0) == 0.5
    assert tau_at(cfg, 100) == pytest.approx(0.8)
    assert tau_at(cfg, 50) == pytest.approx(0.65)
    assert tau_at(TrainConfig(tau=0.6), 10) == 0.6


def _p(v, shape=(3, 3)):
    return ToyDetectorParams(np.full(shape, v), np.full(shape[:-1] + (4,), v))


def test_ema_update_examples():
    assert ema_update(EmaState(1.0, _p(1.0)), _p(0.0)).params.allclose(_p(1.0))
    assert ema_update(EmaState(0.0, _p(1.0)), _p(0.0)).params.allclose(_p(0.0))
    out = ema_update(EmaState(0.99, _p(1.0)), _p(0.0)).params
    assert np.all(out.cls_w == 0.99) and np.all(out.box_w == 0.99)
    with pytest.raises(ShapeMismatch):
        ema_update(EmaState(0.5, _p(1.0)), _p(0.0, (4, 3)))


@pytest.mark.parametrize("decay,n", [(0.9, 50), (0.99, 1000), (0.999, 10_000)])
def test_ema_closed_form(decay, n):
    rng = np.random.default_rng(n)
    p0 = init_params(rng, 6, 3, 1.0)
    s = init_params(rng, 6, 3, 1.0)
    state = EmaState(decay, p0)
    for _ in range(n):
        state = ema_update(state, s)
    dn = decay ** n
    want = p0.flat() * dn + (1 - dn) * s.flat()
    assert np.max(np.abs(state.params.flat() - want)) <= 1e-12


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(tau=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(iterations=10, warmup_iterations=20)
    with pytest.raises(ConfigError):
        TrainConfig(ramp_fraction=0.7)
    with pytest.raises(ConfigError):
        TrainConfig(tau_schedule=TauSchedule("cosine"))


@pytest.fixture(scope="module")
def data():
    world = make_world(0, 3, 6, 11, 3, objectness=0.85, signal=2.5)
    lab = generate_scenes(0, 6, world=world, first_image_id=0)
    unl = generate_scenes(0, 20, world=world, first_image_id=1000)
    test = generate_scenes(0, 10, world=world, first_image_id=2000)
    pool = generate_scenes(0, 20, world=world, first_image_id=3000)
    return lab, unl, test, pool


def _cfg(**kw):
    base = dict(num_classes=3, iterations=40, warmup_iterations=10, window=10, batch_labeled=3,
                batch_unlabeled=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("mode,detectors,unsupported_detectors", [
    ("cross_rectify", 1, True), ("co_rectify", 3, True), ("majority", 1, True),
    ("online_teacher", 2, True), ("self_label", 1, False), ("majority", 3, False),
])
def test_mode_detector_combinations(data, mode, detectors, unsupported_detectors):
    lab, unl, test, _ = data
    cfg = _cfg(mode=mode, detectors=detectors, iterations=12)
    if unsupported_detectors:
        with pytest.raises(ConfigError):
            train_run(cfg, lab, unl, test)
    else:
        assert len(train_run(cfg, lab, unl, test).ema) == detectors


def test_bad_mode_and_ablation(data):
    lab, unl, test, _ = data
    with pytest.raises(ConfigError):
        train_run(_cfg(mode="pi_model"), lab, unl, test)
    with pytest.raises(ConfigError):
        train_run(_cfg(ablation="drop_all"), lab, unl, test)
    with pytest.raises(ConfigError):
        train_run(_cfg(mode="consistency", ablation="discard_fp"), lab, unl, test)
    with pytest.raises(ConfigError):
        train_run(_cfg(), [], unl, test)


def test_supervised_equals_zero_weight_run(data):
    lab, unl, test, _ = data
    sup = train_run(_cfg(mode="supervised"), lab, [], test)
    zero = train_run(_cfg(mode="self_label", lambda_max=0.0), lab, unl, test)
    for a, b in zip(sup.params + sup.ema, zero.params + zero.ema):
        assert a.allclose(b)
    assert sup.ap50 == zero.ap50


def test_same_seed_same_result(data):
    lab, unl, test, _ = data
    cfg = _cfg(mode="cross_rectify", detectors=2, ablation="random_fp")
    a = train_run(cfg, lab, unl, test)
    b = train_run(cfg, lab, unl, test)
    for x, y in zip(a.params + a.ema, b.params + b.ema):
        assert x.allclose(y)
    assert a.windows == b.windows
    assert a.ap50 == b.ap50 and a.ap50_wbf == b.ap50_wbf
    c = train_run(_cfg(mode="cross_rectify", detectors=2, ablation="random_fp", seed=1), lab, unl, test)
    assert not a.params[0].allclose(c.params[0])


def test_detectors_start_differently(data):
    lab, unl, test, _ = data
    r = train_run(_cfg(mode="cps", detectors=2, iterations=1, warmup_iterations=1), lab, unl, test)
    assert not r.params[0].allclose(r.params[1])


@pytest.mark.parametrize("mode", [m for m in MODES if m not in ("supervised",)])
def test_every_mode_runs_and_logs_windows(data, mode):
    lab, unl, test, _ = data
    n = {"cross_rectify": 2, "co_rectify": 2, "cps": 2, "intersection": 2, "difference": 2,
         "majority": 3}.get(mode, 1)
    r = train_run(_cfg(mode=mode, detectors=n), lab, unl, test)
    assert len(r.windows) == 4
    assert [w.window_index for w in r.windows] == [0, 1, 2, 3]
    assert r.windows[0].pseudo_total == 0  # warm-up window
    for w in r.windows:
        assert w.mean_kl >= 0.0
        if w.pseudo_precision is not None:
            assert 0.0 <= w.pseudo_precision <= 1.0
            assert w.correct_count <= w.pseudo_total / 10
    assert len(r.ap50) == n
    assert (r.ap50_wbf is None) == (n == 1)


def test_offline_teacher_labels_are_fixed(data, monkeypatch):
    import pseudorect.toylab.training as tr
    lab, unl, test, _ = data
    calls = []
    real = tr.self_label

    def spy(dets, tau):
        calls.append(dets.image_id)
        return real(dets, tau)

    monkeypatch.setattr(tr, "self_label", spy)
    train_run(_cfg(mode="offline_teacher"), lab, unl, test)
    assert sorted(calls) == sorted(s.image_id for s in unl)


def test_oracle_seeding(data):
    lab, unl, test, pool = data
    seeding = OracleSeeding((NoiseModel.identity(3), NoiseModel.with_flips(3, {0: (1, 1.0)})),
                            scenes=20, steps=20)
    cfg = _cfg(mode="cross_rectify", detectors=2, oracle_seeding=seeding)
    r = train_run(cfg, lab, unl, test, pool)
    assert len(r.ap50) == 2
    with pytest.raises(ConfigError):
        train_run(cfg, lab, unl, test)
    with pytest.raises(ConfigError):
        train_run(_cfg(mode="self_label", oracle_seeding=seeding), lab, unl, test, pool)


def test_per_cell_head(data):
    lab, unl, test, _ = data
    r = train_run(_cfg(per_cell=True), lab, unl, test)
    assert r.params[0].per_cell


def test_ignoring_unlabeled_detections_changes_training(data):
    lab, unl, test, _ = data
    cfg = _cfg(mode="self_label", tau=0.6, lambda_max=1.0, warmup_iterations=20)
    plain = train_run(cfg, lab, unl, test)
    ignored = train_run(TrainConfig(**{**cfg.__dict__, "ignore_unlabeled_detections": True}), lab, unl, test)
    # detections below tau stop being background targets, so the heads differ
    assert sum(w.pseudo_total for w in plain.windows) > 0
    assert not plain.params[0].allclose(ignored.params[0])
