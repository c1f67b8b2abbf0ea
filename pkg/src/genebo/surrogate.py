"""Two-output Gaussian process with a linear + ARD squared-exponential ICM kernel.

The joint covariance over the two rates is::

    K = kron(B_lin, K_lin(X, X)) + kron(B_se, K_se(X, X)) + diag(noise)

with ``B = w w^T + diag(kappa)`` for each component. Rows are task-major:
all task-0 (transcription) entries first, then task-1 (translation).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

from .errors import (
    AllRestartsFailed,
    DimensionMismatch,
    FactorizationFailure,
    NonPositiveLengthscale,
)

N_TASKS = 2
JITTER_START = 1e-9
JITTER_MAX = 1e-4
MODEL_FORMAT = "genebo-model/1"

_LOG2PI = np.log(2.0 * np.pi)


# ----------------------------------------------------------------------------
# data and parameters
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Features ``(N, p)`` and paired rates ``(N, 2)``.

    ``mask`` marks which rates were observed; unobserved entries are
    excluded from the likelihood. Fully observed by default.
    """

    features: np.ndarray
    rates: np.ndarray
    ids: tuple = ()
    mask: np.ndarray = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        Y = np.asarray(self.rates, dtype=float).reshape(-1, N_TASKS)
        if X.shape[0] != Y.shape[0] or X.shape[0] < 1:
            raise DimensionMismatch(
                f"{X.shape[0]} feature rows but {Y.shape[0]} rate rows"
            )
        mask = (
            np.ones(Y.shape, dtype=bool)
            if self.mask is None
            else np.asarray(self.mask, dtype=bool).reshape(Y.shape)
        )
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y[mask])):
            raise ValueError("dataset contains non-finite entries")
        ids = tuple(self.ids) if len(self.ids) else tuple(f"g{i}" for i in range(len(X)))
        if len(ids) != len(X):
            raise DimensionMismatch(f"{len(ids)} ids for {len(X)} rows")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "rates", Y)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def append(self, x, y, gene_id):
        return Dataset(
            np.vstack([self.features, np.asarray(x, dtype=float)[None, :]]),
            np.vstack([self.rates, np.asarray(y, dtype=float)[None, :]]),
            self.ids + (gene_id,),
            np.vstack([self.mask, np.ones((1, N_TASKS), dtype=bool)]),
        )

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.features[idx], self.rates[idx],
            tuple(self.ids[i] for i in idx), self.mask[idx],
        )

    def averaged_rates(self):
        return self.rates.mean(axis=1)

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.features, self.rates, self.mask.astype(np.uint8)):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x00".join(self.ids).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class Coregionalization:
    w: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(N_TASKS)
        kappa = np.asarray(self.kappa, dtype=float).reshape(N_TASKS)
        if np.any(kappa < 0):
            raise ValueError("kappa entries must be non-negative")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "kappa", kappa)

    @property
    def B(self):
        return np.outer(self.w, self.w) + np.diag(self.kappa)


@dataclass(frozen=True)
class Hyperparameters:
    coreg_lin: Coregionalization
    coreg_se: Coregionalization
    lengthscales: np.ndarray
    lin_variance: float = 1.0
    se_variance: float = 1.0
    noise: np.ndarray = field(default_factory=lambda: np.full(N_TASKS, 1e-2))
    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_TASKS))

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise NonPositiveLengthscale("lengthscales must be finite and > 0")
        noise = np.asarray(self.noise, dtype=float).reshape(N_TASKS)
        if np.any(noise <= 0) or self.lin_variance <= 0 or self.se_variance <= 0:
            raise ValueError("noise and kernel variances must be > 0")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "noise", noise)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(N_TASKS))
        object.__setattr__(self, "lin_variance", float(self.lin_variance))
        object.__setattr__(self, "se_variance", float(self.se_variance))

    @property
    def n_features(self):
        return self.lengthscales.size

    # The unconstrained vector: positive quantities are log-transformed.
    # Layout: w_lin(2) log_kappa_lin(2) w_se(2) log_kappa_se(2) log_ls(p)
    #         log_lin_var log_se_var log_noise(2) mean(2)
    def to_vector(self):
        return np.concatenate([
            self.coreg_lin.w, np.log(self.coreg_lin.kappa),
            self.coreg_se.w, np.log(self.coreg_se.kappa),
            np.log(self.lengthscales),
            [np.log(self.lin_variance), np.log(self.se_variance)],
            np.log(self.noise), self.mean,
        ])

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        p = theta.size - 14
        if p < 1:
            raise DimensionMismatch(f"parameter vector of length {theta.size} is too short")
        return cls(
            coreg_lin=Coregionalization(theta[0:2], np.exp(theta[2:4])),
            coreg_se=Coregionalization(theta[4:6], np.exp(theta[6:8])),
            lengthscales=np.exp(theta[8:8 + p]),
            lin_variance=np.exp(theta[8 + p]),
            se_variance=np.exp(theta[9 + p]),
            noise=np.exp(theta[10 + p:12 + p]),
            mean=theta[12 + p:14 + p],
        )

    def to_dict(self):
        return {
            "coreg_lin": {"w": self.coreg_lin.w.tolist(), "kappa": self.coreg_lin.kappa.tolist()},
            "coreg_se": {"w": self.coreg_se.w.tolist(), "kappa": self.coreg_se.kappa.tolist()},
            "lengthscales": self.lengthscales.tolist(),
            "lin_variance": self.lin_variance,
            "se_variance": self.se_variance,
            "noise": self.noise.tolist(),
            "mean": self.mean.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            coreg_lin=Coregionalization(**d["coreg_lin"]),
            coreg_se=Coregionalization(**d["coreg_se"]),
            lengthscales=d["lengthscales"],
            lin_variance=d["lin_variance"],
            se_variance=d["se_variance"],
            noise=d["noise"],
            mean=d["mean"],
        )


def vector_size(p):
    return 14 + p


# ----------------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------------


def _check_pair(X, Z):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise DimensionMismatch(f"inputs have {X.shape[1]} and {Z.shape[1]} columns")
    return X, Z


def linear_kernel(X, Z, variance=1.0):
    X, Z = _check_pair(X, Z)
    return variance * (X @ Z.T)


def se_ard_kernel(X, Z, variance=1.0, lengthscales=1.0):
    X, Z = _check_pair(X, Z)
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],))
    if np.any(ls <= 0):
        raise NonPositiveLengthscale("lengthscales must be > 0")
    Xs, Zs = X / ls, Z / ls
    sq = (
        np.sum(Xs**2, axis=1)[:, None]
        + np.sum(Zs**2, axis=1)[None, :]
        - 2.0 * Xs @ Zs.T
    )
    return variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def _component_kernels(X, Z, params):
    if X.shape[1] != params.n_features:
        raise DimensionMismatch(
            f"inputs have {X.shape[1]} columns, model expects {params.n_features}"
        )
    Klin = linear_kernel(X, Z, params.lin_variance)
    Kse = se_ard_kernel(X, Z, params.se_variance, params.lengthscales)
    return Klin, Kse


def build_covariance(X, Z, params):
    """Joint ``(2n, 2m)`` prior covariance between inputs ``X`` and ``Z``."""
    X, Z = _check_pair(X, Z)
    Klin, Kse = _component_kernels(X, Z, params)
    return np.kron(params.coreg_lin.B, Klin) + np.kron(params.coreg_se.B, Kse)


def jittered_cholesky(K):
    """Lower Cholesky factor of ``K + jitter*I`` and the jitter that worked.

    Jitter starts at 1e-9 and grows tenfold up to 1e-4.
    """
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            return linalg.cholesky(K + jitter * eye, lower=True), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationFailure("covariance is not positive definite even with jitter 1e-4")


# ----------------------------------------------------------------------------
# marginal likelihood
# ----------------------------------------------------------------------------


def _observed(data):
    # task-major flattening to match build_covariance
    obs = data.mask.T.reshape(-1)
    return np.flatnonzero(obs)


def log_marginal_likelihood(params, data, grad=True):
    """Log evidence of ``data`` under ``params``.

    Returns ``(value, gradient)`` where the gradient is taken with respect
    to :meth:`Hyperparameters.to_vector`. With ``grad=False`` the gradient
    is ``None``.
    """
    X = data.features
    n = X.shape[0]
    Klin, Kse = _component_kernels(X, X, params)
    Blin, Bse = params.coreg_lin.B, params.coreg_se.B
    K = np.kron(Blin, Klin) + np.kron(Bse, Kse)
    K[np.diag_indices_from(K)] += np.repeat(params.noise, n)

    obs = _observed(data)
    if obs.size == 0:
        raise ValueError("dataset has no observed rates")
    y = data.rates.T.reshape(-1)[obs]
    r = y - np.repeat(params.mean, n)[obs]
    L, _ = jittered_cholesky(K[np.ix_(obs, obs)])
    alpha = linalg.cho_solve((L, True), r)
    value = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * obs.size * _LOG2PI
    if not grad:
        return value, None

    Kinv, info = linalg.lapack.dpotri(L, lower=1)
    if info:
        raise FactorizationFailure(f"dpotri failed with info={info}")
    Kinv = np.tril(Kinv)
    Kinv += np.tril(Kinv, -1).T
    W = np.zeros((N_TASKS * n, N_TASKS * n))
    W[np.ix_(obs, obs)] = np.outer(alpha, alpha) - Kinv
    W4 = W.reshape(N_TASKS, n, N_TASKS, n)

    # dL/dB for each component: half the blockwise Frobenius products
    Mlin = 0.5 * np.einsum("aibj,ij->ab", W4, Klin)
    Mse = 0.5 * np.einsum("aibj,ij->ab", W4, Kse)

    p = params.n_features
    g = np.empty(vector_size(p))
    g[0:2] = 2.0 * Mlin @ params.coreg_lin.w
    g[2:4] = np.diag(Mlin) * params.coreg_lin.kappa
    g[4:6] = 2.0 * Mse @ params.coreg_se.w
    g[6:8] = np.diag(Mse) * params.coreg_se.kappa

    A = np.einsum("ab,aibj->ij", Bse, W4) * Kse
    A = 0.5 * (A + A.T)
    rows = A.sum(axis=1)
    # sum_ij A_ij (x_id - x_jd)^2 for every d at once
    sqdist = 2.0 * (rows @ X**2) - 2.0 * np.sum(X * (A @ X), axis=0)
    g[8:8 + p] = 0.5 * sqdist / params.lengthscales**2

    g[8 + p] = np.sum(Blin * Mlin)
    g[9 + p] = np.sum(Bse * Mse)
    Wdiag = np.diagonal(W).reshape(N_TASKS, n)
    g[10 + p:12 + p] = 0.5 * params.noise * Wdiag.sum(axis=1)
    full_alpha = np.zeros(N_TASKS * n)
    full_alpha[obs] = alpha
    g[12 + p:14 + p] = full_alpha.reshape(N_TASKS, n).sum(axis=1)
    return value, g


# ----------------------------------------------------------------------------
# fitting
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 1000
    n_restarts: int = 10
    seed: int = 0
    tie_kappa: bool = True
    fit_variances: bool = False
    fit_mean: bool = False
    standardize: bool = True

    def __post_init__(self):
        if self.max_iters < 1 or self.n_restarts < 1:
            raise ValueError("max_iters and n_restarts must be >= 1")


@dataclass(frozen=True)
class Standardizer:
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(center, scale)

    @classmethod
    def identity(cls, p):
        return cls(np.zeros(p), np.ones(p))

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.center.size:
            raise DimensionMismatch(
                f"inputs have {X.shape[1]} columns, model expects {self.center.size}"
            )
        return (X - self.center) / self.scale


class _Packing:
    """Maps the optimizer's free vector onto the full parameter vector."""

    def __init__(self, p, config, base):
        self.base = np.asarray(base, dtype=float)
        index = []  # full position -> free position (or -1 for fixed)
        nxt = 0

        def add(k, shared=False):
            nonlocal nxt
            if shared:
                index.extend([nxt] * k)
                nxt += 1
            else:
                index.extend(range(nxt, nxt + k))
                nxt += k

        def fixed(k):
            index.extend([-1] * k)

        add(2)
        add(2, shared=config.tie_kappa)
        add(2)
        add(2, shared=config.tie_kappa)
        add(p)
        add(2) if config.fit_variances else fixed(2)
        add(2)
        add(2) if config.fit_mean else fixed(2)
        self.index = np.array(index)
        self.free = self.index >= 0
        self.n_free = nxt

    def expand(self, z):
        theta = self.base.copy()
        theta[self.free] = z[self.index[self.free]]
        return theta

    def contract_grad(self, g):
        out = np.zeros(self.n_free)
        np.add.at(out, self.index[self.free], g[self.free])
        return out

    def contract(self, theta):
        # tied entries are averaged, which is exact for vectors built by expand
        out = np.zeros(self.n_free)
        counts = np.zeros(self.n_free)
        np.add.at(out, self.index[self.free], theta[self.free])
        np.add.at(counts, self.index[self.free], 1.0)
        return out / counts


def default_hyperparameters(data, config=FitConfig()):
    """Data-scaled starting point in the standardized input space."""
    Y = np.where(data.mask, data.rates, np.nan)
    mean = np.nan_to_num(np.nanmean(Y, axis=0))
    var = np.nan_to_num(np.nanvar(Y, axis=0))
    var = np.where(var > 0, var, 1.0)
    p = data.n_features
    sd = np.sqrt(var)
    kappa_se = var / 4.0
    kappa_lin = var / (4.0 * p)
    if config.tie_kappa:
        kappa_se = np.full(2, kappa_se.mean())
        kappa_lin = np.full(2, kappa_lin.mean())
    return Hyperparameters(
        coreg_lin=Coregionalization(sd / (2.0 * np.sqrt(p)), kappa_lin),
        coreg_se=Coregionalization(sd / 2.0, kappa_se),
        lengthscales=np.full(p, np.sqrt(p)),
        noise=var / 10.0,
        mean=mean,
    )


def _random_start(default, packing, rng, config):
    """Perturb the default start: N(0, 1) on log scales, N(0, 1)*scale on w."""
    theta = default.to_vector()
    p = default.n_features
    log_idx = np.r_[2:4, 6:8, 8:8 + p, 10 + p:12 + p]
    if config.fit_variances:
        log_idx = np.r_[log_idx, 8 + p, 9 + p]
    theta[log_idx] += rng.standard_normal(log_idx.size)
    theta[0:2] = rng.standard_normal(2) * np.abs(default.coreg_lin.w)
    theta[4:6] = rng.standard_normal(2) * np.abs(default.coreg_se.w)
    return packing.contract(theta)


def _bounds(default, packing):
    p = default.n_features
    v = np.concatenate([default.noise, default.coreg_se.kappa])
    lo_scale, hi_scale = np.log(v.min()) - 25.0, np.log(v.max()) + 12.0
    full = [(None, None)] * vector_size(p)
    for i in np.r_[2:4, 6:8, 10 + p:12 + p]:
        full[i] = (lo_scale, hi_scale)
    for i in range(8, 8 + p):
        full[i] = (np.log(1e-2), np.log(1e5))
    for i in (8 + p, 9 + p):
        full[i] = (-25.0, 25.0)
    out = [None] * packing.n_free
    for j, k in enumerate(packing.index):
        if k >= 0:
            out[k] = full[j]
    return out


@dataclass(frozen=True)
class FitResult:
    params: Hyperparameters
    log_likelihood: float
    restart_values: tuple


def optimize_hyperparameters(data, config=FitConfig()):
    """Maximize the log marginal likelihood of already-standardized ``data``.

    Start 0 is :func:`default_hyperparameters`; starts 1..n_restarts are
    random perturbations seeded by ``(seed, restart index)``. The best
    parameters seen in any evaluation of any restart are returned.
    """
    default = default_hyperparameters(data, config)
    packing = _Packing(data.n_features, config, default.to_vector())
    bounds = _bounds(default, packing)

    best = {"value": -np.inf, "theta": None}
    values = []
    for r in range(config.n_restarts + 1):
        if r == 0:
            z0 = packing.contract(default.to_vector())
        else:
            rng = np.random.default_rng([config.seed, r])
            z0 = _random_start(default, packing, rng, config)
        z0 = np.clip(z0, [b[0] if b[0] is not None else -np.inf for b in bounds],
                     [b[1] if b[1] is not None else np.inf for b in bounds])
        run_best = {"value": -np.inf}

        def objective(z):
            theta = packing.expand(z)
            try:
                value, g = log_marginal_likelihood(Hyperparameters.from_vector(theta), data)
            except FactorizationFailure:
                return 1e20, np.zeros_like(z)
            if not np.isfinite(value):
                return 1e20, np.zeros_like(z)
            if value > run_best["value"]:
                run_best["value"] = value
            if value > best["value"]:
                best["value"] = value
                best["theta"] = theta
            return -value, -packing.contract_grad(g)

        minimize(objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                 options={"maxiter": config.max_iters})
        values.append(run_best["value"])

    if best["theta"] is None:
        raise AllRestartsFailed(
            f"all {config.n_restarts + 1} starts failed to factorize the covariance"
        )
    return FitResult(Hyperparameters.from_vector(best["theta"]), best["value"], tuple(values))


# ----------------------------------------------------------------------------
# fitted model
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: np.ndarray
    cov: np.ndarray


class FittedModel:
    """An exact GP posterior: hyperparameters, training data and factorization.

    ``data`` holds raw features; ``standardizer`` maps them (and every query)
    into the space the kernel sees.
    """

    def __init__(self, params, data, standardizer=None):
        if standardizer is None:
            standardizer = Standardizer.identity(data.n_features)
        if params.n_features != data.n_features:
            raise DimensionMismatch(
                f"{params.n_features} lengthscales for {data.n_features} features"
            )
        self.params = params
        self.data = data
        self.standardizer = standardizer
        self._X = standardizer.transform(data.features)
        n = len(data)
        K = build_covariance(self._X, self._X, params)
        K[np.diag_indices_from(K)] += np.repeat(params.noise, n)
        self._obs = _observed(data)
        self._L, self.jitter = jittered_cholesky(K[np.ix_(self._obs, self._obs)])
        r = data.rates.T.reshape(-1)[self._obs] - np.repeat(params.mean, n)[self._obs]
        self._alpha = linalg.cho_solve((self._L, True), r)
        self.log_likelihood = float(
            -0.5 * r @ self._alpha
            - np.sum(np.log(np.diag(self._L)))
            - 0.5 * self._obs.size * _LOG2PI
        )

    @property
    def n_features(self):
        return self.data.n_features

    def predict_arrays(self, X_star):
        """Posterior means ``(m, 2)`` and covariances ``(m, 2, 2)``."""
        Xs = self.standardizer.transform(X_star)
        m = Xs.shape[0]
        Kxs = build_covariance(self._X, Xs, self.params)[self._obs]
        mean = np.repeat(self.params.mean, m) + Kxs.T @ self._alpha
        V = linalg.solve_triangular(self._L, Kxs, lower=True)
        V = V.reshape(-1, N_TASKS, m)
        prior = (
            self.params.coreg_lin.B[None]
            * (self.params.lin_variance * np.sum(Xs * Xs, axis=1))[:, None, None]
            + self.params.coreg_se.B[None] * self.params.se_variance
        )
        cov = prior - np.einsum("kai,kbi->iab", V, V)
        cov = 0.5 * (cov + cov.transpose(0, 2, 1))
        return mean.reshape(N_TASKS, m).T, cov

    def predict(self, X_star):
        means, covs = self.predict_arrays(X_star)
        return [PosteriorPrediction(mu, c) for mu, c in zip(means, covs)]

    def inverse_lengthscales(self):
        return 1.0 / self.params.lengthscales

    # -- persistence ---------------------------------------------------------

    def to_dict(self, feature_layout=None):
        d = self.data
        return {
            "format": MODEL_FORMAT,
            "feature_layout": feature_layout,
            "n_features": d.n_features,
            "hyperparameters": self.params.to_dict(),
            "standardizer": {
                "center": self.standardizer.center.tolist(),
                "scale": self.standardizer.scale.tolist(),
            },
            "log_likelihood": self.log_likelihood,
            "training_data": {
                "fingerprint": d.fingerprint(),
                "ids": list(d.ids),
                "features": d.features.tolist(),
                "rates": d.rates.tolist(),
                "mask": d.mask.astype(int).tolist(),
            },
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        td = doc["training_data"]
        data = Dataset(td["features"], td["rates"], tuple(td["ids"]), td["mask"])
        if data.fingerprint() != td["fingerprint"]:
            raise ValueError("training data does not match its fingerprint")
        std = Standardizer(np.array(doc["standardizer"]["center"]),
                           np.array(doc["standardizer"]["scale"]))
        return cls(Hyperparameters.from_dict(doc["hyperparameters"]), data, std)

    def dumps(self, feature_layout=None):
        # float repr is the shortest string that round-trips bit-exactly
        return json.dumps(self.to_dict(feature_layout), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def fit(data, config=FitConfig()):
    """Fit hyperparameters by multi-start L-BFGS and return the posterior."""
    std = Standardizer.fit(data.features) if config.standardize else Standardizer.identity(data.n_features)
    scaled = replace(data, features=std.transform(data.features))
    result = optimize_hyperparameters(scaled, config)
    return FittedModel(result.params, data, std)


def predict(model, X_star):
    return model.predict(X_star)
