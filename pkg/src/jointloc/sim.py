"""Synthetic survey environment: RSSI from a log-distance channel and
location-dependent feature vectors from a seeded sinusoidal map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ChannelParams, ExperimentConfig, SceneParams
from .core import (ImageFeatures, ImageFeatureSpec, Location, ReferencePoint, RSSI_MAX_DBM,
                   RSSI_MIN_DBM, RssiObservation, make_grid_partition)
from .db import ImageDb, ImageEntry, WifiDb, build_image_db, build_wifi_db, partition_image_db

# Stream purposes; every random draw is keyed by (seed, purpose, index).
STREAM_SCENE = 0
STREAM_WIFI = 1
STREAM_IMAGE = 2
STREAM_IMAGE_RSSI = 3
STREAM_QUERY_LOC = 4
STREAM_QUERY = 5
STREAM_FINE_INIT = 6
STREAM_FINE_SHUFFLE = 7


def rng_stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), int(index)])


def mean_rssi(loc, aps, ch: ChannelParams) -> np.ndarray:
    """Noise-free received power (dBm) at ``loc`` from each AP, before clamping."""
    p = np.asarray(loc.as_array() if isinstance(loc, Location) else loc, dtype=float)
    d = np.linalg.norm(np.asarray(aps, dtype=float) - p, axis=-1)
    d = np.maximum(d, ch.d0)
    return ch.tx_power_at_d0 - 10.0 * ch.path_loss_exponent * np.log10(d / ch.d0)


def synth_rssi(loc: Location, aps, ch: ChannelParams, rng: np.random.Generator,
               n_s: int = 50) -> RssiObservation:
    mu = mean_rssi(loc, aps, ch)
    samples = np.broadcast_to(mu, (n_s, mu.size))
    if ch.shadowing_sigma > 0:
        samples = samples + rng.normal(0.0, ch.shadowing_sigma, size=samples.shape)
    return RssiObservation(np.clip(samples, RSSI_MIN_DBM, RSSI_MAX_DBM))


@dataclass(frozen=True, eq=False)
class Scene:
    """Materialised feature map ``phi(p) = mixing @ sin(freqs @ p + phases)``."""

    params: SceneParams
    freqs: np.ndarray    # n_basis x 3, rad/m
    phases: np.ndarray   # n_basis
    mixing: np.ndarray   # F x n_basis

    def phi(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = np.sin(pts @ self.freqs.T + self.phases) @ self.mixing.T
        return out[0] if single else out

    def lipschitz(self) -> float:
        # sin is 1-Lipschitz elementwise, so ||phi(a) - phi(b)|| <= ||M|| ||W|| ||a - b||
        return float(np.linalg.norm(self.mixing, 2) * np.linalg.norm(self.freqs, 2))


def make_scene(params: SceneParams, seed: int, floor_lo=None, floor_hi=None,
               check_points: int = 400) -> Scene:
    """Draw the basis from ``seed``; optionally check injectivity on the floor by sampling."""
    rng = rng_stream(seed, STREAM_SCENE)
    freqs = rng.uniform(-params.freq_scale, params.freq_scale, size=(params.n_basis, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=params.n_basis)
    mixing = rng.normal(0.0, 1.0, size=(params.feature_dim, params.n_basis)) / np.sqrt(params.n_basis)
    scene = Scene(params, freqs, phases, mixing)
    if floor_lo is not None and check_points > 1:
        lo, hi = np.asarray(floor_lo, float), np.asarray(floor_hi, float)
        pts = rng.uniform(lo, hi, size=(check_points, 3))
        f = scene.phi(pts)
        dp = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        df = np.linalg.norm(f[:, None] - f[None], axis=-1)
        off = ~np.eye(check_points, dtype=bool)
        if np.min(df[off] / dp[off]) <= 1e-9:
            raise ValueError("feature map is not injective on the floor; change the seed or n_basis")
    return scene


def synth_features(loc: Location, scene: Scene, rng: np.random.Generator, n_p: int = 104,
                   spec: ImageFeatureSpec | None = None) -> ImageFeatures:
    row = scene.phi(loc.as_array())
    feats = np.broadcast_to(row, (n_p, row.size))
    sigma = scene.params.noise_sigma
    if sigma > 0:
        feats = feats + rng.normal(0.0, sigma, size=feats.shape)
    return ImageFeatures(np.array(feats), spec)


def image_survey_locations(rps: list[ReferencePoint]) -> list[Location]:
    """RP grid plus the midpoint of every edge between grid neighbours."""
    pts = np.array([r.location.as_array() for r in rps])
    xs = np.unique(pts[:, 0])
    ys = np.unique(pts[:, 1])
    z = float(pts[0, 2])
    out = [r.location for r in rps]
    for y in ys:
        for a, b in zip(xs[:-1], xs[1:]):
            out.append(Location(0.5 * (a + b), y, z))
    for x in xs:
        for a, b in zip(ys[:-1], ys[1:]):
            out.append(Location(x, 0.5 * (a + b), z))
    return out


@dataclass(frozen=True)
class Environment:
    """Everything needed to synthesise observations for one configuration."""

    cfg: ExperimentConfig
    scene: Scene

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Environment":
        return cls(cfg, make_scene(cfg.scene, cfg.seed, cfg.floor_lo, cfg.floor_hi))

    def rssi(self, loc: Location, rng) -> RssiObservation:
        return synth_rssi(loc, self.cfg.ap_layout, self.cfg.channel, rng, self.cfg.n_s)

    def features(self, loc: Location, rng) -> ImageFeatures:
        return synth_features(loc, self.scene, rng, self.cfg.n_p, self.cfg.image)


def run_survey(cfg: ExperimentConfig, env: Environment | None = None) -> tuple[WifiDb, ImageDb]:
    """Replay the offline site survey: N_W RSSI rounds per RP, N_I image rounds per image location.

    Each image round also records a synchronised RSSI block at the same spot.
    The returned image database is already indexed by area.
    """
    env = env or Environment.from_config(cfg)
    h = cfg.config_hash()
    rps = cfg.reference_points()
    partition = make_grid_partition(cfg.floor_lo, cfg.floor_hi, cfg.n_cells_x, cfg.n_cells_y, rps)

    survey = []
    for rp in rps:
        rng = rng_stream(cfg.seed, STREAM_WIFI, rp.index)
        survey.append((rp, [env.rssi(rp.location, rng) for _ in range(cfg.n_w)]))
    wifi = build_wifi_db(survey, h, cfg.seed)

    entries = []
    for k, loc in enumerate(image_survey_locations(rps)):
        rng_f = rng_stream(cfg.seed, STREAM_IMAGE, k)
        rng_r = rng_stream(cfg.seed, STREAM_IMAGE_RSSI, k)
        feats = tuple(env.features(loc, rng_f) for _ in range(cfg.n_i))
        rssi = tuple(env.rssi(loc, rng_r) for _ in range(cfg.n_i))
        entries.append(ImageEntry(loc, feats, rssi))
    images = partition_image_db(build_image_db(entries, h, cfg.seed), partition)
    return wifi, images
