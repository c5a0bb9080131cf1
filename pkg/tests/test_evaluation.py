import math

import numpy as np
import pytest

from jointloc.core import ConfigError
from jointloc.evaluation import (DEFAULT_THRESHOLDS, error_cdf, load_queries, make_queries,
                                 run_accuracy_experiment, run_experiment, run_grid_sweep,
                                 run_latency_bench, save_queries)

from conftest import small_config


def test_cdf_hand_count():
    assert error_cdf([1, 2, 3], [2]) == [(2.0, 2 / 3)]


def test_cdf_extremes():
    pts = error_cdf([0.5, 0.7, 1.1], [0.1, 0.49, 1.1, 9.0])
    assert [f for _, f in pts] == [0.0, 0.0, 1.0, 1.0]


def test_cdf_matches_brute_force_counting():
    rng = np.random.default_rng(0)
    errs = rng.exponential(size=1000)
    errs[:50] = np.round(errs[:50], 1)  # some exact hits on thresholds
    ts = np.linspace(0, 6, 121)
    got = error_cdf(errs, ts)
    for (t, f), t0 in zip(got, ts):
        assert t == t0
        assert f == sum(1 for e in errs if e <= t0) / 1000
    fr = [f for _, f in got]
    assert fr == sorted(fr)


def test_cdf_rejects_bad_input():
    with pytest.raises(ValueError):
        error_cdf([], [1.0])
    with pytest.raises(ValueError):
        error_cdf([0.5, -0.1], [1.0])


@pytest.fixture(scope="module")
def experiment():
    return run_experiment(small_config())


def test_report_shape(experiment):
    r = experiment.report
    assert set(r.errors) == {"baseline_wifi", "jvwl"}
    assert all(len(v) == 20 for v in r.errors.values())
    for method, errs in r.errors.items():
        assert r.median[method] == float(np.median(errs))
        fr = [f for _, f in r.cdf[method]]
        assert fr == sorted(fr) and fr[-1] <= 1.0 and fr[0] >= 0.0
        assert len(fr) == len(DEFAULT_THRESHOLDS)
    assert 0.0 <= r.containment_rate <= 1.0
    assert 0.0 < r.search_fraction <= 1.0
    assert r.n_rp == 24 and r.seed == 1
    assert set(r.latency) == {"baseline_wifi", "jvwl"}


def test_default_query_count():
    cfg = small_config(n_queries=100)
    assert cfg.n_queries == 100
    from jointloc.sim import Environment

    qs = make_queries(Environment.from_config(cfg), cfg.n_queries)
    assert len(qs) == 100
    lo, hi = np.array(cfg.floor_lo), np.array(cfg.floor_hi)
    for q in qs:
        v = q.location.as_array()
        assert np.all(v >= lo) and np.all(v <= hi)


def test_queries_disjoint_from_survey(experiment):
    survey = {tuple(e.location.as_array()) for e in experiment.images.entries}
    survey |= {tuple(rp.location.as_array()) for rp in experiment.wifi.reference_points}
    assert not survey & {tuple(q.location.as_array()) for q in experiment.queries}


def test_every_estimate_lies_on_the_floor(experiment):
    cfg = experiment.system.cfg
    lo, hi = np.array(cfg.floor_lo), np.array(cfg.floor_hi)
    for q in experiment.queries:
        for est in (experiment.system.baseline(q.rssi), experiment.system.localize(q.rssi, q.features)[1]):
            v = est.as_array()
            assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)


def test_report_deterministic(experiment):
    again = run_accuracy_experiment(small_config())
    assert again.to_dict() == experiment.report.to_dict()


def test_seed_changes_report(experiment):
    other = run_accuracy_experiment(small_config(seed=2))
    assert other.errors != experiment.report.errors


def test_queries_round_trip(tmp_path, experiment):
    cfg = experiment.system.cfg
    path = tmp_path / "q.jsonl"
    save_queries(experiment.queries[:5], path, cfg.config_hash(), cfg.seed)
    header, back = load_queries(path)
    assert header["count"] == 5
    for a, b in zip(experiment.queries, back):
        assert a.location == b.location
        assert np.array_equal(a.rssi.samples, b.rssi.samples)
        assert np.array_equal(a.features.features, b.features.features)
    save_queries(experiment.queries[:2], path, cfg.config_hash(), cfg.seed, with_truth=False)
    assert all(q.location is None for q in load_queries(path)[1])


# ---------------------------------------------------------------- sweep

def _grid_count(ext, s):
    # RPs sit at the centres of whole s-by-s cells laid along the axis
    n = 0
    while (n + 1) * s <= ext + 1e-9:
        n += 1
    return n


def test_sweep_single_spacing_equals_accuracy_run(experiment):
    (r,) = run_grid_sweep(small_config(), [1.5])
    assert r.to_dict() == experiment.report.to_dict()


@pytest.mark.slow
def test_sweep_three_spacings_and_rp_counts():
    cfg = small_config(n_queries=5, fine=small_config().fine.__class__(epochs=5))
    reports = run_grid_sweep(cfg, [1.0, 1.5, 2.0])
    assert [r.grid_spacing for r in reports] == [1.0, 1.5, 2.0]
    ext = np.array(cfg.floor_hi) - np.array(cfg.floor_lo)
    for r in reports:
        brute = _grid_count(ext[0], r.grid_spacing) * _grid_count(ext[1], r.grid_spacing)
        assert r.n_rp == brute
    assert [r.n_rp for r in reports] == [60, 24, 15]


@pytest.mark.parametrize("bad", [[0.0], [-1.0], [6.5], []])
def test_sweep_rejects_bad_spacings(bad):
    with pytest.raises(ConfigError):
        run_grid_sweep(small_config(), bad)


# ---------------------------------------------------------------- latency

def test_latency_table_shape(experiment):
    qs = experiment.queries
    table = run_latency_bench(experiment.system, qs, [1, 10, 20], reps=2)
    d = table.to_dict()
    assert d["query_counts"] == [1, 10, 20]
    assert set(d["total_s"]) == {"baseline_wifi", "jvwl"}
    assert all(len(v) == 3 and all(t > 0 and math.isfinite(t) for t in v) for v in d["total_s"].values())
    assert [q for q, _ in table.rows()] == [1, 10, 20]


@pytest.mark.parametrize("counts", [[0], [], [1, 0]])
def test_latency_rejects_empty_counts(experiment, counts):
    with pytest.raises(ValueError):
        run_latency_bench(experiment.system, experiment.queries, counts)


def test_latency_needs_enough_queries(experiment):
    with pytest.raises(ValueError):
        run_latency_bench(experiment.system, experiment.queries[:3], [1, 10])
