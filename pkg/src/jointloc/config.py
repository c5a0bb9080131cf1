"""Experiment configuration, loaded from and written to a single JSON document."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import ConfigError, ImageFeatureSpec, rp_grid


@dataclass(frozen=True)
class ChannelParams:
    """Log-distance path loss with Gaussian (in dB) shadowing."""

    tx_power_at_d0: float = -40.0
    d0: float = 1.0
    path_loss_exponent: float = 3.0
    shadowing_sigma: float = 4.0

    def __post_init__(self):
        if not self.d0 > 0:
            raise ConfigError("d0 must be positive")
        if not 1.0 <= self.path_loss_exponent <= 6.0:
            raise ConfigError("path loss exponent must lie in [1, 6]")
        if not self.shadowing_sigma >= 0:
            raise ConfigError("shadowing sigma must be nonnegative")


@dataclass(frozen=True)
class SceneParams:
    """Parameters of the synthetic location-to-feature map.

    The basis frequencies and phases are drawn from the experiment seed;
    ``freq_scale`` bounds each frequency component in rad/m.
    """

    feature_dim: int = 16
    n_basis: int = 24
    freq_scale: float = 0.5
    noise_sigma: float = 0.3

    def __post_init__(self):
        if self.feature_dim <= 0 or self.n_basis <= 0:
            raise ConfigError("feature_dim and n_basis must be positive")
        if not self.freq_scale > 0:
            raise ConfigError("freq_scale must be positive")
        if not self.noise_sigma >= 0:
            raise ConfigError("scene noise sigma must be nonnegative")


@dataclass(frozen=True)
class CoarseHyperparams:
    l2: float = 1e-3
    max_iter: int = 5000
    grad_tol: float = 1e-6
    checkpoint_every: int = 50


@dataclass(frozen=True)
class FineHyperparams:
    hidden: tuple[int, int] = (64, 64)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 5000
    init_scale: float = 0.1
    drop_missed_areas: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("invalid fine-stage hyperparameters")


def _default_aps():
    return (
        (0.5, 0.5, 2.5),
        (9.5, 0.5, 2.5),
        (0.5, 5.5, 2.5),
        (9.5, 5.5, 2.5),
        (4.0, 2.5, 2.5),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    floor_lo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    floor_hi: tuple[float, float, float] = (10.0, 6.0, 0.1)
    ap_layout: tuple[tuple[float, float, float], ...] = field(default_factory=_default_aps)
    n_s: int = 50
    n_w: int = 2
    n_i: int = 2
    grid_spacing: float = 1.5
    n_cells_x: int = 5
    n_cells_y: int = 3
    j_star: int = 4
    n_queries: int = 100
    seed: int = 1
    image: ImageFeatureSpec = field(default_factory=ImageFeatureSpec)
    channel: ChannelParams = field(default_factory=ChannelParams)
    scene: SceneParams = field(default_factory=SceneParams)
    coarse: CoarseHyperparams = field(default_factory=CoarseHyperparams)
    fine: FineHyperparams = field(default_factory=FineHyperparams)
    sweep_spacings: tuple[float, ...] = (1.0, 1.5, 2.0)
    latency_query_counts: tuple[int, ...] = (1, 10, 100)
    latency_reps: int = 5

    def __post_init__(self):
        object.__setattr__(self, "floor_lo", tuple(float(v) for v in self.floor_lo))
        object.__setattr__(self, "floor_hi", tuple(float(v) for v in self.floor_hi))
        object.__setattr__(self, "ap_layout", tuple(tuple(float(c) for c in ap) for ap in self.ap_layout))
        object.__setattr__(self, "sweep_spacings", tuple(float(s) for s in self.sweep_spacings))
        object.__setattr__(self, "latency_query_counts", tuple(int(q) for q in self.latency_query_counts))
        if len(self.floor_lo) != 3 or len(self.floor_hi) != 3:
            raise ConfigError("floor bounds must be 3-D")
        if any(h <= l for l, h in zip(self.floor_lo, self.floor_hi)):
            raise ConfigError("floor box must have positive extent on every axis")
        if not self.ap_layout or any(len(ap) != 3 for ap in self.ap_layout):
            raise ConfigError("ap_layout must be a non-empty list of 3-D positions")
        for name in ("n_s", "n_w", "n_i", "n_cells_x", "n_cells_y", "j_star", "n_queries", "latency_reps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.image.feature_dim != self.scene.feature_dim:
            raise ConfigError("image.feature_dim must equal scene.feature_dim")
        if self.j_star > self.n_areas:
            raise ConfigError(f"j_star={self.j_star} exceeds the number of areas {self.n_areas}")
        if self.n_rp < self.n_areas:
            raise ConfigError(f"grid spacing {self.grid_spacing} m yields {self.n_rp} RPs, fewer than "
                              f"{self.n_areas} areas")

    @property
    def n_ap(self) -> int:
        return len(self.ap_layout)

    @property
    def n_p(self) -> int:
        return self.image.n_p

    @property
    def n_areas(self) -> int:
        return self.n_cells_x * self.n_cells_y

    @property
    def n_rp(self) -> int:
        return len(self.reference_points())

    def reference_points(self):
        return rp_grid(self.floor_lo, self.floor_hi, self.grid_spacing)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ap_layout"] = [list(ap) for ap in self.ap_layout]
        d["floor_lo"] = list(self.floor_lo)
        d["floor_hi"] = list(self.floor_hi)
        d["sweep_spacings"] = list(self.sweep_spacings)
        d["latency_query_counts"] = list(self.latency_query_counts)
        d["fine"]["hidden"] = list(self.fine.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        nested = {"image": ImageFeatureSpec, "channel": ChannelParams, "scene": SceneParams,
                  "coarse": CoarseHyperparams, "fine": FineHyperparams}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        try:
            for k, v in d.items():
                if k in nested:
                    sub = nested[k]
                    sub_known = {f.name for f in dataclasses.fields(sub)}
                    bad = set(v) - sub_known
                    if bad:
                        raise ConfigError(f"unknown keys in {k}: {sorted(bad)}")
                    kwargs[k] = sub(**v)
                else:
                    kwargs[k] = v
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def config_hash(self) -> str:
        """Hash of everything except the seed, which is recorded separately."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(d)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
