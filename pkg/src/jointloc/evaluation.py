"""Experiment harness: accuracy CDFs, grid-spacing sweep and latency table."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .core import ConfigError, ImageFeatures, Location, RssiObservation
from .db import (ImageDb, MalformedLineError, WifiDb, read_envelope,
                 restrict_image_db, write_envelope)
from .pipeline import TrainedSystem, train_system
from .sim import STREAM_QUERY, STREAM_QUERY_LOC, Environment, rng_stream, run_survey

METHODS = ("baseline_wifi", "jvwl")
DEFAULT_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(101))


def error_cdf(errors: Sequence[float], thresholds: Sequence[float]) -> list[tuple[float, float]]:
    """Fraction of errors at or below each threshold."""
    e = np.sort(np.asarray(errors, dtype=float))
    if e.size == 0:
        raise ValueError("error list is empty")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and nonnegative")
    t = np.asarray(thresholds, dtype=float)
    frac = np.searchsorted(e, t, side="right") / e.size
    return [(float(a), float(b)) for a, b in zip(t, frac)]


@dataclass
class Query:
    location: Location | None
    rssi: RssiObservation
    features: ImageFeatures


def make_queries(env: Environment, n: int, seed: int | None = None) -> list[Query]:
    """Uniform query positions over the floor, drawn from streams disjoint from the survey."""
    cfg = env.cfg
    seed = cfg.seed if seed is None else seed
    pos = rng_stream(seed, STREAM_QUERY_LOC).uniform(cfg.floor_lo, cfg.floor_hi, size=(n, 3))
    out = []
    for m, p in enumerate(pos):
        loc = Location.from_array(p)
        rng = rng_stream(seed, STREAM_QUERY, m)
        out.append(Query(loc, env.rssi(loc, rng), env.features(loc, rng)))
    return out


def save_queries(queries: Sequence[Query], path, config_hash: str, seed: int,
                 with_truth: bool = True) -> None:
    """Write queries in the shared envelope (kind ``query``); ``location`` may be null."""
    recs = [{"location": q.location.to_dict() if with_truth and q.location is not None else None,
             "payload": {"rssi": q.rssi.samples.tolist(), "features": q.features.features.tolist()}}
            for q in queries]
    write_envelope(path, "query", recs, config_hash, seed)


def load_queries(path) -> tuple[dict, list[Query]]:
    header, recs = read_envelope(path, "query")
    out = []
    for n, r in enumerate(recs):
        try:
            loc = None if r.get("location") is None else Location.from_dict(r["location"])
            p = r["payload"]
            out.append(Query(loc, RssiObservation(np.array(p["rssi"], dtype=float)),
                             ImageFeatures(np.array(p["features"], dtype=float))))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedLineError(n + 2, f"bad query record ({e})") from e
    return header, out


@dataclass
class EvaluationReport:
    errors: dict[str, list[float]]
    cdf: dict[str, list[tuple[float, float]]]
    median: dict[str, float]
    mean: dict[str, float]
    containment_rate: float
    search_fraction: float
    n_rp: int
    grid_spacing: float
    config: dict
    seed: int
    latency: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Deterministic content only; wall-clock latency lives in :meth:`latency_dict`."""
        return {
            "seed": self.seed,
            "grid_spacing": self.grid_spacing,
            "n_rp": self.n_rp,
            "n_queries": len(self.errors["jvwl"]),
            "median_error_m": self.median,
            "mean_error_m": self.mean,
            "coarse_containment_rate": self.containment_rate,
            "image_db_search_fraction": self.search_fraction,
            "errors_m": self.errors,
            "cdf": {k: [list(p) for p in v] for k, v in self.cdf.items()},
            "config": self.config,
        }

    def latency_dict(self) -> dict:
        return {"seed": self.seed, "grid_spacing": self.grid_spacing, "per_query_s": self.latency}


def _latency_stats(ts: list[float]) -> dict[str, float]:
    a = np.asarray(ts)
    return {"mean": float(a.mean()), "median": float(np.median(a)), "p95": float(np.percentile(a, 95))}


def evaluate_system(system: TrainedSystem, images: ImageDb, queries: Sequence[Query],
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> EvaluationReport:
    cfg = system.cfg
    errs = {k: [] for k in METHODS}
    lat = {k: [] for k in METHODS}
    contained = 0
    searched = 0
    for q in queries:
        t0 = time.perf_counter()
        b = system.baseline(q.rssi)
        t1 = time.perf_counter()
        sel, est = system.localize(q.rssi, q.features)
        t2 = time.perf_counter()
        errs["baseline_wifi"].append(b.distance(q.location))
        errs["jvwl"].append(est.distance(q.location))
        lat["baseline_wifi"].append(t1 - t0)
        lat["jvwl"].append(t2 - t1)
        contained += system.partition.area_of(q.location) in sel.area_indices
        searched += len(restrict_image_db(images, sel))
    n = len(queries)
    return EvaluationReport(
        errors=errs,
        cdf={k: error_cdf(v, thresholds) for k, v in errs.items()},
        median={k: float(np.median(v)) for k, v in errs.items()},
        mean={k: float(np.mean(v)) for k, v in errs.items()},
        containment_rate=contained / n,
        search_fraction=searched / (n * len(images)),
        n_rp=len(system.rps),
        grid_spacing=cfg.grid_spacing,
        config=cfg.to_dict(),
        seed=cfg.seed,
        latency={k: _latency_stats(v) for k, v in lat.items()},
    )


@dataclass
class Experiment:
    """A fully trained run, kept around for follow-up benchmarks."""

    env: Environment
    wifi: WifiDb
    images: ImageDb
    system: TrainedSystem
    queries: list[Query]
    report: EvaluationReport


def run_experiment(cfg: ExperimentConfig, progress=None) -> Experiment:
    env = Environment.from_config(cfg)
    wifi, images = run_survey(cfg, env)
    system = train_system(cfg, wifi, images, progress)
    queries = make_queries(env, cfg.n_queries)
    surveyed = {tuple(e.location.as_array()) for e in images.entries}
    surveyed |= {tuple(rp.location.as_array()) for rp in wifi.reference_points}
    leaked = [q for q in queries if tuple(q.location.as_array()) in surveyed]
    if leaked:
        raise RuntimeError(f"{len(leaked)} query locations coincide with survey locations")
    return Experiment(env, wifi, images, system, queries, evaluate_system(system, images, queries))


def run_accuracy_experiment(cfg: ExperimentConfig) -> EvaluationReport:
    return run_experiment(cfg).report


def run_grid_sweep(cfg: ExperimentConfig, spacings: Sequence[float]) -> list[EvaluationReport]:
    if not spacings:
        raise ConfigError("no grid spacings given")
    lo, hi = np.asarray(cfg.floor_lo), np.asarray(cfg.floor_hi)
    for s in spacings:
        if s <= 0:
            raise ConfigError(f"grid spacing must be positive, got {s}")
        if s > min(hi[:2] - lo[:2]):
            raise ConfigError(f"grid spacing {s} m is larger than the floor")
    return [run_accuracy_experiment(cfg.replace(grid_spacing=float(s))) for s in spacings]


@dataclass
class LatencyTable:
    query_counts: list[int]
    totals_s: dict[str, list[float]]
    reps: int

    def to_dict(self) -> dict:
        return {"query_counts": self.query_counts, "reps": self.reps, "total_s": self.totals_s}

    def rows(self):
        for k, q in enumerate(self.query_counts):
            yield q, {m: self.totals_s[m][k] for m in self.totals_s}


def run_latency_bench(system: TrainedSystem, queries: Sequence[Query], query_counts: Sequence[int],
                      reps: int = 5) -> LatencyTable:
    """Median-of-``reps`` wall-clock totals for localizing the first N queries."""
    counts = [int(c) for c in query_counts]
    if not counts or min(counts) < 1:
        raise ValueError("query counts must be positive")
    if max(counts) > len(queries):
        raise ValueError(f"need {max(counts)} queries, have {len(queries)}")
    totals = {m: [] for m in METHODS}
    for c in counts:
        sub = queries[:c]
        runs = {m: [] for m in METHODS}
        for _ in range(reps):
            t0 = time.perf_counter()
            for q in sub:
                system.baseline(q.rssi)
            t1 = time.perf_counter()
            for q in sub:
                system.localize(q.rssi, q.features)
            t2 = time.perf_counter()
            runs["baseline_wifi"].append(t1 - t0)
            runs["jvwl"].append(t2 - t1)
        for m in METHODS:
            totals[m].append(statistics.median(runs[m]))
    return LatencyTable(counts, totals, reps)
