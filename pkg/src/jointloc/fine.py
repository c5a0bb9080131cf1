"""Visual fine stage: an MLP regressor from pooled image features to a 3-D
position, trained with the likelihood-weighted squared error and constrained
to the candidate areas at inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import FineHyperparams
from .core import (AreaPartition, CandidateSelection, DivergenceError, ImageFeatures,
                   JointLocError, Location)
from .sim import STREAM_FINE_INIT, STREAM_FINE_SHUFFLE, rng_stream


class FineError(JointLocError, ValueError):
    pass


def pool_features(img: ImageFeatures) -> np.ndarray:
    f = img.features if isinstance(img, ImageFeatures) else np.asarray(img, dtype=float)
    return f.mean(axis=0)


def _max_retained(selection: CandidateSelection) -> float:
    if np.any(selection.probs <= 0):
        raise FineError("a retained area has zero probability; the loss weight is undefined")
    return float(selection.probs.max())


def _as_vec(loc) -> np.ndarray:
    return loc.as_array() if isinstance(loc, Location) else np.asarray(loc, dtype=float)


def joint_loss(pred, truth, selection: CandidateSelection) -> float:
    """Squared error divided by the largest retained area likelihood.

    The minimum over retained areas of ``err / p_j`` has a numerator that does
    not depend on ``j``, so it is attained at the largest ``p_j``.
    """
    d = _as_vec(pred) - _as_vec(truth)
    return float(d @ d) / _max_retained(selection)


def loss_gradient(pred, truth, selection: CandidateSelection) -> np.ndarray:
    """Gradient of :func:`joint_loss` w.r.t. ``pred``; likelihoods are constants."""
    return 2.0 * (_as_vec(pred) - _as_vec(truth)) / _max_retained(selection)


@dataclass(frozen=True, eq=False)
class TrainingSample:
    pooled_features: np.ndarray
    true_location: Location
    selection: CandidateSelection
    true_area_selected: bool = True
    weight: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "weight", 1.0 / _max_retained(self.selection))


# ---------------------------------------------------------------- network

class Params:
    """All weights in one flat buffer; per-layer arrays are views into it."""

    def __init__(self, sizes: Sequence[int], flat: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            shapes += [(fan_out, fan_in), (fan_out,)]
        self.shapes = shapes
        total = sum(int(np.prod(s)) for s in shapes)
        self.flat = np.zeros(total) if flat is None else np.array(flat, dtype=float)
        if self.flat.size != total:
            raise FineError(f"parameter vector has {self.flat.size} entries, expected {total}")
        self.arrays = []
        off = 0
        for s in shapes:
            n = int(np.prod(s))
            self.arrays.append(self.flat[off:off + n].reshape(s))
            off += n

    @property
    def weights(self):
        return self.arrays[0::2]

    @property
    def biases(self):
        return self.arrays[1::2]

    def copy(self) -> "Params":
        return Params(self.sizes, self.flat.copy())


def init_params(sizes: Sequence[int], seed: int, scale: float = 0.1) -> Params:
    """Weights ~ Normal(0, scale / sqrt(fan_in)), biases zero."""
    p = Params(sizes)
    rng = rng_stream(seed, STREAM_FINE_INIT)
    for W in p.weights:
        W[...] = rng.normal(0.0, scale / np.sqrt(W.shape[1]), size=W.shape)
    return p


def mlp_forward(p: Params, X: np.ndarray):
    """tanh hidden layers, linear output. Returns (output, activations)."""
    acts = [X]
    h = X
    n_layers = len(p.weights)
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ W.T + b
        if k < n_layers - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(p: Params, acts: list[np.ndarray], d_out: np.ndarray, grad: Params) -> None:
    """Accumulate d(loss)/d(params) into ``grad`` given d(loss)/d(output)."""
    delta = d_out
    n_layers = len(p.weights)
    for k in range(n_layers - 1, -1, -1):
        grad.weights[k][...] = delta.T @ acts[k]
        grad.biases[k][...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ p.weights[k]) * (1.0 - acts[k] ** 2)


class Adam:
    def __init__(self, n: int, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True, eq=False)
class RegressorModel:
    """MLP with fixed input standardisation and output affine map.

    ``predict(x) = out_center + out_scale * mlp((x - in_mean) / in_scale)``
    """

    params: Params
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_center: np.ndarray
    out_scale: np.ndarray
    epochs: int = 0
    loss_curve: tuple[float, ...] = ()
    config_hash: str = ""

    def __post_init__(self):
        if self.params.sizes[-1] != 3:
            raise FineError("regressor output must be 3-D")
        if not np.all(np.isfinite(self.params.flat)):
            raise FineError("regressor parameters are not finite")

    @property
    def feature_dim(self) -> int:
        return self.params.sizes[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_dim:
            raise FineError(f"features have dimension {X.shape[1]}, model expects {self.feature_dim}")
        out, _ = mlp_forward(self.params, (X - self.in_mean) / self.in_scale)
        return self.out_center + self.out_scale * out

    def __eq__(self, other):
        if not isinstance(other, RegressorModel):
            return False
        return (self.params.sizes == other.params.sizes
                and np.array_equal(self.params.flat, other.params.flat)
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("in_mean", "in_scale", "out_center", "out_scale"))
                and self.epochs == other.epochs
                and self.loss_curve == other.loss_curve
                and self.config_hash == other.config_hash)


def batch_loss_and_grad(model: RegressorModel, X: np.ndarray, Y: np.ndarray, w: np.ndarray,
                        grad: Params) -> float:
    """Mean weighted loss over a batch; fills ``grad`` with its parameter gradient."""
    out, acts = mlp_forward(model.params, (X - model.in_mean) / model.in_scale)
    diff = model.out_center + model.out_scale * out - Y
    per = w * np.einsum("ij,ij->i", diff, diff)
    d_out = (2.0 / len(X)) * w[:, None] * diff * model.out_scale
    mlp_backward(model.params, acts, d_out, grad)
    return float(per.mean())


def train_fine(samples: Sequence[TrainingSample], hp: FineHyperparams | None = None, seed: int = 0,
               config_hash: str = "", progress=None) -> RegressorModel:
    """Mini-batch Adam on the mean joint loss over ``samples``."""
    hp = hp or FineHyperparams()
    if hp.drop_missed_areas:
        samples = [s for s in samples if s.true_area_selected]
    if len(samples) < 10:
        raise FineError(f"need at least 10 training samples, got {len(samples)}")
    X = np.array([s.pooled_features for s in samples])
    Y = np.array([s.true_location.as_array() for s in samples])
    w = np.array([s.weight for s in samples])

    in_mean = X.mean(axis=0)
    in_scale = X.std(axis=0)
    in_scale[in_scale < 1e-12] = 1.0
    out_center = Y.mean(axis=0)
    out_scale = Y.std(axis=0)
    out_scale[out_scale < 1e-12] = 1.0

    sizes = (X.shape[1],) + tuple(hp.hidden) + (3,)
    params = init_params(sizes, seed, hp.init_scale)
    model = RegressorModel(params, in_mean, in_scale, out_center, out_scale, 0, (), config_hash)
    grad = Params(sizes)
    opt = Adam(params.flat.size, hp.lr, hp.beta1, hp.beta2, hp.eps)
    rng = rng_stream(seed, STREAM_FINE_SHUFFLE)

    n = len(X)
    curve = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, hp.batch_size)):
            idx = order[start:start + hp.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss = batch_loss_and_grad(model, X[idx], Y[idx], w[idx], grad)
            if not np.isfinite(loss):
                raise DivergenceError(f"fine loss is not finite at epoch {epoch}, batch {b}",
                                      {"epoch": epoch, "batch": b})
            total += loss * len(idx)
            opt.step(params.flat, grad.flat)
        curve.append(total / n)
        if progress is not None:
            progress(epoch, curve[-1])
    return RegressorModel(params, in_mean, in_scale, out_center, out_scale, hp.epochs,
                          tuple(curve), config_hash)


def project_to_area(pred, selection: CandidateSelection, partition: AreaPartition) -> Location:
    """Nearest point of the union of selected areas; identity for points already inside."""
    p = _as_vec(pred)
    best, best_d = None, np.inf
    for j in sorted(selection.area_indices):
        c = partition.areas[j].clamp(p)
        d = float(np.sum((c - p) ** 2))
        if d < best_d:
            best, best_d = c, d
    return Location.from_array(best)


def fine_localize(img: ImageFeatures, model: RegressorModel, selection: CandidateSelection,
                  partition: AreaPartition) -> Location:
    raw = model.predict(pool_features(img))[0]
    return project_to_area(raw, selection, partition)


# ---------------------------------------------------------------- persistence

def fine_model_record(model: RegressorModel) -> dict:
    return {
        "sizes": list(model.params.sizes),
        "activation": "tanh",
        "layers": [{"W": W.tolist(), "b": b.tolist()}
                   for W, b in zip(model.params.weights, model.params.biases)],
        "in_mean": model.in_mean.tolist(), "in_scale": model.in_scale.tolist(),
        "out_center": model.out_center.tolist(), "out_scale": model.out_scale.tolist(),
        "epochs": model.epochs, "loss_curve": list(model.loss_curve),
    }


def fine_model_from_record(rec: dict, config_hash: str) -> RegressorModel:
    params = Params(rec["sizes"])
    if len(rec["layers"]) != len(params.weights):
        raise FineError("layer count does not match sizes")
    for W, b, layer in zip(params.weights, params.biases, rec["layers"]):
        W[...] = np.array(layer["W"], dtype=float)
        b[...] = np.array(layer["b"], dtype=float)
    arr = lambda k: np.array(rec[k], dtype=float)
    return RegressorModel(params, arr("in_mean"), arr("in_scale"), arr("out_center"),
                          arr("out_scale"), int(rec["epochs"]),
                          tuple(float(v) for v in rec["loss_curve"]), config_hash)
