"""WiFi coarse stage: RP likelihoods from a softmax classifier, area likelihoods,
and top-J* candidate-area selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import CoarseHyperparams
from .core import (AreaPartition, CandidateSelection, DivergenceError, JointLocError,
                   LikelihoodVector, Location, ReferencePoint, RssiObservation, locations_array)
from .db import WifiDb


class CoarseError(JointLocError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RpClassifierModel:
    """Linear scores ``weights @ featurize(obs)`` over RPs; weights are N_RP x (N_AP + 1)."""

    weights: np.ndarray
    iterations: int = 0
    final_loss: float = float("nan")
    converged: bool = False
    loss_history: tuple[tuple[int, float], ...] = ()
    config_hash: str = ""

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] < 2:
            raise CoarseError(f"weights must be N_RP x (N_AP + 1), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise CoarseError("classifier weights are not finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_rp(self) -> int:
        return self.weights.shape[0]

    @property
    def n_ap(self) -> int:
        return self.weights.shape[1] - 1

    def __eq__(self, other):
        return (isinstance(other, RpClassifierModel)
                and np.array_equal(self.weights, other.weights)
                and self.iterations == other.iterations
                and self.final_loss == other.final_loss
                and self.converged == other.converged
                and self.loss_history == other.loss_history
                and self.config_hash == other.config_hash)


def featurize(obs: RssiObservation) -> np.ndarray:
    """Per-AP mean over the N_s samples, with a trailing 1 for the bias."""
    s = obs.samples if isinstance(obs, RssiObservation) else np.asarray(obs, dtype=float)
    return np.append(s.mean(axis=0), 1.0)


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classifier_loss_and_grad(weights: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 * ||W[:, :-1]||^2``; the bias column is not penalised.

    ``X`` carries the bias as its last column.
    """
    n = X.shape[0]
    scores = X @ weights.T
    z = scores - scores.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    ce = np.mean(logsum - z[np.arange(n), y])
    reg = 0.5 * l2 * np.sum(weights[:, :-1] ** 2)
    P = np.exp(z - logsum[:, None])
    P[np.arange(n), y] -= 1.0
    grad = P.T @ X / n
    grad[:, :-1] += l2 * weights[:, :-1]
    return ce + reg, grad


def _design(db: WifiDb):
    X, y = [], []
    for e in db.entries:
        for o in e.observations:
            X.append(featurize(o))
            y.append(e.rp.index)
    return np.array(X), np.array(y, dtype=int)


def train_classifier(db: WifiDb, hp: CoarseHyperparams | None = None) -> RpClassifierModel:
    """Fit the RP classifier by full-batch gradient descent.

    Descent runs on standardised features with the fixed step ``1/L`` (``L``
    bounds the Hessian), which keeps the loss monotone; the result is mapped
    back so the weights apply to raw ``featurize`` output.
    """
    hp = hp or CoarseHyperparams()
    if len(db) < 2:
        raise CoarseError("need at least two reference points to train a classifier")
    X, y = _design(db)
    n, d = X.shape
    k = len(db)
    mu = X[:, :-1].mean(axis=0)
    sd = X[:, :-1].std(axis=0)
    sd[sd == 0] = 1.0
    Z = np.hstack([(X[:, :-1] - mu) / sd, np.ones((n, 1))])

    lip = 0.5 * np.linalg.eigvalsh(Z.T @ Z / n)[-1] + hp.l2
    step = 1.0 / lip
    V = np.zeros((k, d))
    history = []
    loss = float("nan")
    it = 0
    converged = False
    for it in range(hp.max_iter + 1):
        loss, grad = classifier_loss_and_grad(V, Z, y, hp.l2)
        if not np.isfinite(loss):
            raise DivergenceError(f"classifier loss is not finite at iteration {it}", {"iteration": it})
        if it % hp.checkpoint_every == 0:
            history.append((it, float(loss)))
        if np.linalg.norm(grad) < hp.grad_tol:
            converged = True
            break
        if it == hp.max_iter:
            break
        V -= step * grad
    if history[-1][0] != it:
        history.append((it, float(loss)))

    W = np.empty_like(V)
    W[:, :-1] = V[:, :-1] / sd
    W[:, -1] = V[:, -1] - W[:, :-1] @ mu
    return RpClassifierModel(W, it, float(loss), converged, tuple(history), db.config_hash)


def rp_likelihoods(obs: RssiObservation, model: RpClassifierModel) -> LikelihoodVector:
    x = featurize(obs)
    if x.size != model.weights.shape[1]:
        raise CoarseError(f"observation has {x.size - 1} APs, model expects {model.n_ap}")
    return LikelihoodVector(softmax(model.weights @ x))


def area_likelihoods(p_rp: LikelihoodVector, partition: AreaPartition) -> LikelihoodVector:
    p = p_rp.probs
    if p.size != partition.n_rp:
        raise CoarseError(f"likelihood over {p.size} RPs, partition has {partition.n_rp}")
    return LikelihoodVector(np.bincount(partition.rp_membership, weights=p, minlength=partition.n_areas))


def select_candidate_areas(p_a: LikelihoodVector, j_star: int) -> CandidateSelection:
    """The ``j_star`` most likely areas, ties going to the lower index."""
    p = p_a.probs if isinstance(p_a, LikelihoodVector) else np.asarray(p_a, dtype=float)
    if not 1 <= j_star <= p.size:
        raise CoarseError(f"j_star={j_star} outside [1, {p.size}]")
    order = np.lexsort((np.arange(p.size), -p))[:j_star]
    return CandidateSelection(tuple(int(j) for j in order), p[order])


def coarse_localize(obs: RssiObservation, model: RpClassifierModel, partition: AreaPartition,
                    j_star: int) -> CandidateSelection:
    return select_candidate_areas(area_likelihoods(rp_likelihoods(obs, model), partition), j_star)


def baseline_wifi_only(obs: RssiObservation, model: RpClassifierModel, rps: list[ReferencePoint],
                       use_argmax: bool = False) -> Location:
    """WiFi-only position: likelihood-weighted RP centroid, or the most likely RP."""
    p = rp_likelihoods(obs, model).probs
    locs = locations_array(r.location for r in sorted(rps, key=lambda r: r.index))
    if use_argmax:
        return Location.from_array(locs[int(np.argmax(p))])
    return Location.from_array(p @ locs)


# ---------------------------------------------------------------- persistence

def coarse_model_record(model: RpClassifierModel) -> dict:
    return {"weights": model.weights.tolist(), "iterations": model.iterations,
            "final_loss": model.final_loss, "converged": model.converged,
            "loss_history": [list(h) for h in model.loss_history]}


def coarse_model_from_record(rec: dict, config_hash: str) -> RpClassifierModel:
    return RpClassifierModel(np.array(rec["weights"], dtype=float), int(rec["iterations"]),
                             float(rec["final_loss"]), bool(rec["converged"]),
                             tuple((int(i), float(l)) for i, l in rec["loss_history"]), config_hash)
