"""Learning primitives: epsilon-SVR via SMO, k-means codebooks, standardization.

The SVR solver works on the 2n-variable dual with a maximal-violating-pair
working set. Everything here is deterministic given the seed: k-means++ draws
from a seeded generator, and the SMO pair selection is argmax-based with
fixed tie-breaking, so repeated fits on the same data are bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

SUPPORTED_KERNELS = ("linear", "rbf")


def _cross_products(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    # einsum without optimize keeps each entry an independent reduction, so a
    # row's result never depends on how many other rows share the batch
    # (BLAS matmul picks different kernels by shape and breaks that)
    return np.einsum("ij,kj->ik", x, z)


def kernel_matrix(kind: str, x: np.ndarray, z: np.ndarray, gamma: float) -> np.ndarray:
    """Gram matrix K[i, j] = k(x_i, z_j) for the supported kernels.

    Entries are computed with batch-size-independent rounding: a cell's
    kernel row is the same whether it is evaluated alone or inside a
    larger grid.
    """
    x = np.ascontiguousarray(x)
    z = np.ascontiguousarray(z)
    if kind == "linear":
        return _cross_products(x, z)
    if kind == "rbf":
        # squared distances via the expansion; clamp tiny negatives from rounding
        sq = (
            np.sum(x * x, axis=1)[:, None]
            + np.sum(z * z, axis=1)[None, :]
            - 2.0 * _cross_products(x, z)
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-gamma * sq)
    raise ConfigError(f"unknown kernel {kind!r}, expected one of {SUPPORTED_KERNELS}")


@dataclass
class SvrModel:
    """Fitted epsilon-SVR: support vectors, coefficients, bias, diagnostics."""

    kernel: str
    gamma: float
    c: float
    epsilon: float
    support_vectors: np.ndarray  # (m, d)
    coef: np.ndarray  # beta = alpha - alpha*, shape (m,)
    bias: float
    iterations: int
    converged: bool
    dual_objective: float

    @property
    def n_support(self) -> int:
        return int(self.support_vectors.shape[0])


def svr_fit(
    x: np.ndarray,
    y: np.ndarray,
    *,
    kernel: str = "rbf",
    c: float = 1.0,
    epsilon: float = 0.1,
    gamma: float | None = None,
    tol: float = 1e-3,
    max_iter: int = 200_000,
    seed: int | None = None,
) -> SvrModel:
    """Train epsilon-SVR by sequential minimal optimization.

    Solves the dual over a = (alpha, alpha*) with signs z = (+1, -1) and
    linear term p = (eps - y, eps + y), picking the maximal violating pair
    each step and stopping when the KKT gap m(a) - M(a) <= tol.

    ``seed`` is accepted for interface uniformity with the other trainers;
    the pair schedule is argmax-based with fixed tie-breaking, so the fit
    is deterministic with or without it.
    """
    del seed
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise DataError(f"svr_fit expects 2-D features, got shape {x.shape}")
    n, d = x.shape
    if y.shape[0] != n:
        raise DataError(f"feature/target length mismatch: {n} vs {y.shape[0]}")
    if n < 2:
        raise DataError("svr_fit needs at least two samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("svr_fit requires finite features and targets")
    if c <= 0 or epsilon < 0 or tol <= 0:
        raise ConfigError(f"bad SVR hyperparameters c={c}, epsilon={epsilon}, tol={tol}")
    if kernel not in SUPPORTED_KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}, expected one of {SUPPORTED_KERNELS}")
    if gamma is None:
        gamma = 1.0 / d
    k = kernel_matrix(kernel, x, x, gamma)

    # doubled dual: indices 0..n-1 are alpha, n..2n-1 are alpha*; the pair
    # shares one sample, so Gram lookups go through base = s mod n
    z = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    a = np.zeros(2 * n)
    grad = p.copy()  # gradient of the dual objective at a = 0
    idx = np.arange(2 * n)
    base = idx % n

    it = 0
    converged = False
    while it < max_iter:
        it += 1
        up = np.where(z > 0, a < c, a > 0)
        low = np.where(z > 0, a > 0, a < c)
        mzg = -z * grad
        m_val = float(np.max(mzg[up]))
        bi = int(idx[up][np.argmax(mzg[up])])
        m_low = float(np.min(mzg[low]))
        bj = int(idx[low][np.argmin(mzg[low])])
        if m_val - m_low <= tol:
            converged = True
            break
        i_base, j_base = int(base[bi]), int(base[bj])
        eta = k[i_base, i_base] + k[j_base, j_base] - 2.0 * k[i_base, j_base]
        # box room along the feasible direction (a_i moves by +z_i t, a_j by -z_j t)
        room_i = (c - a[bi]) if z[bi] > 0 else a[bi]
        room_j = a[bj] if z[bj] > 0 else (c - a[bj])
        tmax = min(room_i, room_j)
        t = min((m_val - m_low) / eta, tmax) if eta > 1e-12 else tmax
        if t <= 0:
            break
        a[bi] += z[bi] * t
        a[bj] -= z[bj] * t
        grad += t * z * (k[base, i_base] - k[base, j_base])

    beta = a[:n] - a[n:]
    u = k @ beta
    # bias: average over free variables, else midpoint of the KKT interval
    free_vals = []
    lo_b: list[float] = []
    hi_b: list[float] = []
    for ii in range(n):
        al, als = a[ii], a[n + ii]
        if 0 < al < c:
            free_vals.append(y[ii] - u[ii] - epsilon)
        if 0 < als < c:
            free_vals.append(y[ii] - u[ii] + epsilon)
        if al == 0:
            lo_b.append(y[ii] - u[ii] - epsilon)
        if al == c:
            hi_b.append(y[ii] - u[ii] - epsilon)
        if als == 0:
            hi_b.append(y[ii] - u[ii] + epsilon)
        if als == c:
            lo_b.append(y[ii] - u[ii] + epsilon)
    if free_vals:
        bias = float(np.mean(free_vals))
    else:
        lo_v = max(lo_b) if lo_b else -np.inf
        hi_v = min(hi_b) if hi_b else np.inf
        bias = float((lo_v + hi_v) / 2.0)

    # SMO keeps alpha_i * alpha*_i = 0, so sum(alpha + alpha*) = sum|beta|
    dual_obj = float(-(0.5 * beta @ (k @ beta) + epsilon * np.abs(beta).sum() - y @ beta))

    sv_mask = beta != 0.0
    return SvrModel(
        kernel=kernel,
        gamma=float(gamma),
        c=float(c),
        epsilon=float(epsilon),
        support_vectors=x[sv_mask].copy(),
        coef=beta[sv_mask].copy(),
        bias=bias,
        iterations=it,
        converged=converged,
        dual_objective=dual_obj,
    )


def svr_predict(model: SvrModel, x: np.ndarray) -> np.ndarray:
    """Batch prediction f(x) = sum_i beta_i k(sv_i, x) + b."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if model.n_support == 0:
        return np.full(x.shape[0], model.bias)
    k = kernel_matrix(model.kernel, x, model.support_vectors, model.gamma)
    # same batch-independence argument as in kernel_matrix
    return np.einsum("ij,j->i", k, model.coef) + model.bias


@dataclass
class Standardizer:
    """Per-column affine map to zero mean, unit scale.

    Uses population standard deviation; constant columns get scale 1 so
    they map to exactly zero instead of dividing by zero.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError(f"standardizer needs a nonempty 2-D array, got {x.shape}")
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale == 0.0, 1.0, scale)
        return cls(mean=mean, scale=scale)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) / self.scale

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.mean


@dataclass
class Codebook:
    """k-means centroids over descriptor space."""

    centroids: np.ndarray  # (k, d)
    inertia: float

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def assign_clusters(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels, ties going to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def kmeans_fit(
    x: np.ndarray, k: int, seed: int | np.random.SeedSequence, max_iter: int = 300
) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Runs to an assignment fixpoint (or max_iter). Empty clusters are
    reseeded to the point farthest from its assigned centroid.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"kmeans expects 2-D descriptors, got shape {x.shape}")
    n = x.shape[0]
    if k < 1:
        raise ConfigError(f"codebook size must be positive, got {k}")
    if n < k:
        raise DataError(f"cannot fit {k} clusters to {n} descriptors")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(x, k, rng)
    labels = assign_clusters(x, centroids)
    for _ in range(max_iter):
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = x[mask].mean(axis=0)
            else:
                d2 = np.sum((x - centroids[labels]) ** 2, axis=1)
                far = int(np.argmax(d2))
                centroids[j] = x[far]
                labels[far] = j
        new_labels = assign_clusters(x, centroids)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    inertia = float(np.sum((x - centroids[labels]) ** 2))
    return Codebook(centroids=centroids, inertia=inertia)


@dataclass
class SourceRegressor:
    """SVR over standardized features with standardized count targets.

    Feature standardization comes from the training matrix; targets are
    mapped through (y - y_mean) / y_scale before fitting, and predictions
    are mapped back and clamped to be nonnegative. epsilon is given in
    count units and divided by y_scale so the tube width is meaningful on
    the standardized targets.
    """

    x_std: Standardizer
    y_mean: float
    y_scale: float
    svr: SvrModel

    @classmethod
    def fit(
        cls,
        x: np.ndarray,
        y: np.ndarray,
        *,
        kernel: str = "rbf",
        c: float = 1.0,
        epsilon: float = 0.5,
        gamma: float | None = None,
        tol: float = 1e-3,
        max_iter: int = 200_000,
    ) -> "SourceRegressor":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        x_std = Standardizer.fit(x)
        y_mean = float(y.mean())
        y_scale = float(y.std())
        if y_scale == 0.0:
            y_scale = 1.0
        ys = (y - y_mean) / y_scale
        model = svr_fit(
            x_std.transform(x),
            ys,
            kernel=kernel,
            c=c,
            epsilon=epsilon / y_scale,
            gamma=gamma,
            tol=tol,
            max_iter=max_iter,
        )
        return cls(x_std=x_std, y_mean=y_mean, y_scale=y_scale, svr=model)

    def predict(self, x: np.ndarray) -> np.ndarray:
        xs = self.x_std.transform(np.asarray(x, dtype=np.float64))
        ys = svr_predict(self.svr, xs)
        return np.maximum(ys * self.y_scale + self.y_mean, 0.0)
