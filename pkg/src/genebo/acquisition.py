"""Averaged-task expected improvement and the sequence evaluation function."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatch, EmptyCandidates
from .genome import extract_features

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
AVERAGING = np.array([0.5, 0.5])


@dataclass(frozen=True)
class AveragedObjective:
    mean: float
    variance: float


@dataclass(frozen=True)
class DesignRules:
    """The selected design ``x_star`` (raw feature space) and where it came from."""

    x_star: np.ndarray
    provenance: str
    acquisition_value: float

    def to_dict(self):
        return {
            "x_star": np.asarray(self.x_star).tolist(),
            "provenance": self.provenance,
            "acquisition_value": float(self.acquisition_value),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["x_star"], dtype=float), d["provenance"],
                   float(d["acquisition_value"]))


@dataclass(frozen=True)
class EvaluationWeights:
    """Inverse ARD lengthscales.

    ``w`` lives in the model's standardized space and ``scale`` converts raw
    feature deviations into that space, so the effective raw-space weight
    of feature j is ``w[j] / scale[j]``.
    """

    w: np.ndarray
    scale: np.ndarray = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be non-negative with at least one positive entry")
        scale = np.ones_like(w) if self.scale is None else np.asarray(self.scale, dtype=float)
        if scale.shape != w.shape:
            raise DimensionMismatch(f"{scale.size} scales for {w.size} weights")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "scale", scale)

    def raw(self):
        return self.w / self.scale


def averaged_objective(pred):
    return AveragedObjective(
        float(AVERAGING @ pred.mean), float(AVERAGING @ pred.cov @ AVERAGING)
    )


def averaged_arrays(means, covs):
    """Vectorized :func:`averaged_objective` over ``(m, 2)`` / ``(m, 2, 2)``."""
    return means @ AVERAGING, np.einsum("a,iab,b->i", AVERAGING, covs, AVERAGING)


def ei_arrays(mean, variance, incumbent, xi=0.0):
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    improvement = mean - incumbent - xi
    out = np.maximum(improvement, 0.0)
    pos = sigma > 0
    z = improvement[pos] / sigma[pos]
    out[pos] = improvement[pos] * ndtr(z) + sigma[pos] * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.maximum(out, 0.0)


def expected_improvement(obj, incumbent, xi=0.0):
    """EI of the averaged objective over ``incumbent`` (maximization)."""
    return float(ei_arrays(np.atleast_1d(obj.mean), np.atleast_1d(obj.variance), incumbent, xi)[0])


def incumbent(data):
    """Best averaged rate among fully observed training rows."""
    full = data.mask.all(axis=1)
    if not full.any():
        raise ValueError("no fully observed rows to define an incumbent")
    return float(data.averaged_rates()[full].max())


def pool_ei(model, X, incumbent_value, xi=0.0):
    means, covs = model.predict_arrays(X)
    m, v = averaged_arrays(means, covs)
    return ei_arrays(m, v, incumbent_value, xi)


def propose(model, candidates, incumbent_value, xi=0.0):
    """Pick the candidate with the largest EI; ties go to the lowest index.

    ``candidates`` is a sequence of ``(id, feature_vector)`` pairs.
    """
    if len(candidates) == 0:
        raise EmptyCandidates("no candidates to propose from")
    ids = [c[0] for c in candidates]
    X = np.array([np.asarray(c[1], dtype=float) for c in candidates])
    ei = pool_ei(model, X, incumbent_value, xi)
    best = int(np.argmax(ei))
    return DesignRules(X[best].copy(), ids[best], float(ei[best]))


def evaluation_weights(model):
    return EvaluationWeights(model.inverse_lengthscales(), model.standardizer.scale.copy())


def _deviations(x, x_star, weights):
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x.shape[-1] != x_star.size or x_star.size != weights.w.size:
        raise DimensionMismatch(
            f"features of size {x.shape[-1]}, design of size {x_star.size}, "
            f"{weights.w.size} weights"
        )
    return np.abs(x - x_star) / weights.scale


def evaluate_sequence(x, rules, weights):
    """Weighted L1 distance from ``x`` to the design; lower is better."""
    x_star = rules.x_star if isinstance(rules, DesignRules) else rules
    return float(np.sum(weights.w * _deviations(x, x_star, weights)))


def rank_sequences(candidates, rules, weights):
    """Sort ``candidates`` by evaluation score, ascending and stable."""
    if len(candidates) == 0:
        raise EmptyCandidates("no candidate sequences to rank")
    X = np.array([extract_features(s) for s in candidates])
    scores = np.sum(weights.w * _deviations(X, rules.x_star, weights), axis=1)
    order = np.argsort(scores, kind="stable")
    return [(candidates[i], float(scores[i])) for i in order]
