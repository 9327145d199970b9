import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerbwatch.exceptions import DomainError
from kerbwatch.geo import BoundingBox
from kerbwatch.ingest_io import DetectionEvent, FrameBatch
from kerbwatch.metrics import (
    ELEVATED_RISK,
    LOW_RISK,
    MEDIUM_RISK,
    NO_DATA,
    RoadStateMonitor,
    RollingWindow,
    ScoredBox,
    TruthBox,
    ZoneMap,
    classify_zone,
    eval_curves,
    f1_score,
    read_ras_rad_csv,
    threshold_sweep,
    update_road_state,
    write_road_state_csv,
)


# -- road state ------------------------------------------------------------------


def test_ras_mean_and_empty_windows():
    m = RoadStateMonitor(60.0)
    s = m.update([], [], 0.0)
    assert s.zone == NO_DATA and s.ras is None and s.rad is None
    s = update_road_state(m, [5.0, 10.0, 15.0], [4.0], 1.0)
    assert s.ras == 10.0 and s.rad == 4.0 and s.zone == NO_DATA


def test_old_samples_are_evicted():
    m = RoadStateMonitor(10.0)
    m.update([100.0], [1.0], 0.0)
    m.update([2.0], [3.0], 5.0)
    s = m.update([4.0], [5.0], 10.5)
    assert s.ras == 3.0 and s.rad == 4.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 5), st.lists(st.floats(0, 1e4), max_size=6)), min_size=1, max_size=40),
       st.floats(0.5, 30))
def test_rolling_mean_matches_brute_force(steps, duration):
    w = RollingWindow(duration)
    t = 0.0
    kept = []
    for dt, vals in steps:
        t += dt
        w.extend(t, vals)
        kept += [(t, v) for v in vals]
        kept = [(ti, v) for ti, v in kept if ti >= t - duration]
        if kept:
            brute = math.fsum(v for _, v in kept) / len(kept)
            assert w.mean() == pytest.approx(brute, rel=1e-12, abs=1e-300)
        else:
            assert w.mean() is None


def test_window_rejects_time_regression():
    w = RollingWindow(5)
    w.add(2.0, 1.0)
    with pytest.raises(ValueError):
        w.add(1.0, 1.0)
    with pytest.raises(DomainError):
        RollingWindow(0)


# -- zones -----------------------------------------------------------------------


def _bimodal(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal([2.0, 20.0], [0.5, 3.0], size=(n // 2, 2))
    b = rng.normal([8.0, 6.0], [1.0, 1.5], size=(n // 2, 2))
    return np.clip(np.vstack([a, b]), 0, None)


def _oracle_zones(counts, upper=0.5, lower=0.1):
    """Rank every bin individually and label it from cumulative mass."""
    flat = counts.ravel()
    total = flat.sum()
    labels = np.full(flat.shape, MEDIUM_RISK, dtype=object)
    order = sorted(range(len(flat)), key=lambda i: -flat[i])
    acc, cutoff = 0, None
    for i in order:
        acc += flat[i]
        if acc >= upper * total:
            cutoff = flat[i]
            break
    for i in range(len(flat)):
        below = flat[flat <= flat[i]].sum()
        if flat[i] == 0 or below <= lower * total:
            labels[i] = ELEVATED_RISK
        if flat[i] >= cutoff:
            labels[i] = LOW_RISK
    return labels.reshape(counts.shape)


def test_zone_map_matches_bin_ranking_oracle():
    zm = ZoneMap(bins=12).fit(_bimodal())
    want = _oracle_zones(zm.counts_)
    rc = (zm.ras_edges_[:-1] + zm.ras_edges_[1:]) / 2
    dc = (zm.rad_edges_[:-1] + zm.rad_edges_[1:]) / 2
    grid = np.array([[r, d] for r in rc for d in dc])
    got = zm.predict(grid).reshape(12, 12)
    assert (got == want).all()
    assert set(got.ravel()) == {LOW_RISK, MEDIUM_RISK, ELEVATED_RISK}


def test_densest_and_empty_bins():
    X = _bimodal()
    zm = ZoneMap(bins=10).fit(X)
    i, j = np.unravel_index(np.argmax(zm.counts_), zm.counts_.shape)
    r = (zm.ras_edges_[i] + zm.ras_edges_[i + 1]) / 2
    d = (zm.rad_edges_[j] + zm.rad_edges_[j + 1]) / 2
    assert classify_zone(zm, r, d) == LOW_RISK
    i, j = np.argwhere(zm.counts_ == 0)[0]
    r = (zm.ras_edges_[i] + zm.ras_edges_[i + 1]) / 2
    d = (zm.rad_edges_[j] + zm.rad_edges_[j + 1]) / 2
    assert classify_zone(zm, r, d) == ELEVATED_RISK


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_classify_total_and_deterministic(r, d):
    zm = ZoneMap(bins=8).fit(_bimodal(400, seed=3))
    z = classify_zone(zm, r, d)
    assert z in (LOW_RISK, MEDIUM_RISK, ELEVATED_RISK)
    assert classify_zone(zm, r, d) == z


def test_monitor_uses_zone_map():
    zm = ZoneMap(bins=10).fit(_bimodal())
    s = RoadStateMonitor(60.0, zm).update([2.0], [20.0], 0.0)
    assert s.zone == classify_zone(zm, 2.0, 20.0)


def test_zone_map_validation():
    with pytest.raises(ValueError):
        ZoneMap().fit(np.zeros((10, 2)))
    with pytest.raises(ValueError):
        ZoneMap(upper_mass=0.95, lower_mass=0.1).fit(_bimodal())
    assert ZoneMap(bins=5).get_params()["bins"] == 5


def test_road_state_csv_round_trip(tmp_path):
    from kerbwatch.metrics import RoadState

    states = [RoadState(None, None, 0.0, NO_DATA), RoadState(1.5, 7.25, 1.0, LOW_RISK)]
    write_road_state_csv(tmp_path / "rs.csv", states)
    assert (tmp_path / "rs.csv").read_text() == "t,ras,rad,zone\n0.0,,,no_data\n1.0,1.5,7.25,low_risk\n"
    assert read_ras_rad_csv(tmp_path / "rs.csv").tolist() == [[1.5, 7.25]]


# -- evaluation ------------------------------------------------------------------


def _box(k):
    return BoundingBox(10.0 * k, 0.0, 10.0 * k + 8.0, 8.0)


def test_perfect_detections():
    truth = [TruthBox(f, _box(f), "person") for f in range(5)]
    dets = [ScoredBox(f, _box(f), 0.5 + 0.1 * f, "person") for f in range(5)]
    c = eval_curves(dets, truth, [0.1, 0.3, 0.5])
    assert c.precision == c.recall == c.f1 == [1.0, 1.0, 1.0]


def test_f1_value():
    assert f1_score(0.8, 0.6) == pytest.approx(0.6857, abs=1e-4)
    assert f1_score(0.0, 0.0) == 0.0


@settings(max_examples=500, deadline=None)
@given(st.just(0.0) | st.floats(1e-100, 1), st.just(0.0) | st.floats(1e-100, 1))
def test_f1_identity_and_mean_ordering(p, r):
    f = f1_score(p, r)
    if p + r > 0:
        assert f == pytest.approx(2 * p * r / (p + r), rel=1e-12, abs=1e-300)
    assert f <= math.sqrt(p * r) * (1 + 1e-12) + 1e-300
    assert math.sqrt(p * r) <= (p + r) / 2 * (1 + 1e-12) + 1e-300


def peaked_fixture():
    """Ten objects; eight true hits sit just above 0.2, clutter just below it."""
    truth = [TruthBox(f, _box(0), "car") for f in range(10)]
    dets = [ScoredBox(f, _box(0), 0.22 if f < 8 else 0.6, "car") for f in range(10)]
    dets += [ScoredBox(f, _box(3), 0.18, "car") for f in range(10)]
    dets.append(ScoredBox(0, _box(5), 0.7, "car"))
    return dets, truth


def test_f1_peaks_at_constructed_threshold():
    dets, truth = peaked_fixture()
    grid = [round(0.05 * k, 2) for k in range(1, 20)]
    c = eval_curves(dets, truth, grid)
    assert c.best_threshold() == 0.2
    assert c.f1[grid.index(0.2)] > max(f for t, f in zip(grid, c.f1) if t != 0.2)


def test_empty_kept_set_reports_precision_one():
    truth = [TruthBox(0, _box(0))]
    c = eval_curves([ScoredBox(0, _box(0), 0.3)], truth, [0.9])
    assert (c.precision[0], c.recall[0], c.f1[0]) == (1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        eval_curves([], [], [0.5])


def _random_batch(rng, frame):
    n = int(rng.integers(0, 12))
    dets = []
    for _ in range(n):
        x, y = rng.uniform(0, 200, 2)
        w, h = rng.uniform(5, 40, 2)
        dets.append(DetectionEvent("c", frame, frame * 0.04, BoundingBox(x, y, x + w, y + h),
                                   str(rng.choice(["car", "person"])), float(rng.uniform())))
    return FrameBatch("c", frame, frame * 0.04, dets)


def test_threshold_sweep_confidence_zero_counts_everything():
    rng = np.random.default_rng(5)
    batches = [_random_batch(rng, f) for f in range(20)]
    out = threshold_sweep(batches, [0.0, 0.5], [1.0])
    assert out[0, 0] == sum(len(b) for b in batches)


def test_threshold_sweep_antitone_in_confidence():
    rng = np.random.default_rng(11)
    batches = [_random_batch(rng, f) for f in range(100)]
    grid_c = np.linspace(0, 1, 21)
    out = threshold_sweep(batches, grid_c, [0.3, 0.5, 0.7, 1.0])
    assert (np.diff(out, axis=0) <= 0).all()
    # and monotone non-decreasing in the IoU suppression threshold
    assert (np.diff(out, axis=1) >= 0).all()
