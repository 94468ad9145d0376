"""nu-one-class SVM (RBF kernel) solved in the dual with SMO."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverFailed, ValidationError


def rbf(A, B, gamma):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def median_gamma(X, seed=0, max_points=2000):
    """1 / (2 median^2) over pairwise distances of (a seeded subsample of) X."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) > max_points:
        X = X[np.random.default_rng(seed).choice(len(X), max_points, replace=False)]
    diff = X[:, None, :] - X[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))[np.triu_indices(len(X), 1)]
    d = d[d > 0]
    if len(d) == 0:
        return 1.0
    med = float(np.median(d))
    return 1.0 / (2.0 * med * med)


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray
    rho: float
    gamma: float
    nu: float
    n_train: int = 0
    iterations: int = 0

    def decision_function(self, X, chunk=4096):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(len(X))
        for s in range(0, len(X), chunk):
            out[s:s + chunk] = rbf(X[s:s + chunk], self.support_vectors, self.gamma) @ self.alpha
        return out - self.rho

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def to_dict(self):
        return {
            "nu": self.nu, "gamma": self.gamma, "rho": self.rho,
            "support_vectors": self.support_vectors.tolist(),
            "alpha": self.alpha.tolist(), "n_train": self.n_train,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, 2),
                   np.asarray(d["alpha"], dtype=np.float64), float(d["rho"]),
                   float(d["gamma"]), float(d["nu"]), int(d.get("n_train", 0)))


class _KernelColumns:
    def __init__(self, X, gamma, cache_limit):
        self.X = X
        self.gamma = gamma
        self.sq = np.sum(X * X, axis=1)
        self.full = rbf(X, X, gamma) if len(X) <= cache_limit else None
        self.cache = {}

    def diag(self):
        return np.ones(len(self.X))

    def col(self, i):
        if self.full is not None:
            return self.full[:, i]
        c = self.cache.get(i)
        if c is None:
            d2 = self.sq + self.sq[i] - 2.0 * self.X @ self.X[i]
            c = np.exp(-self.gamma * np.maximum(d2, 0.0))
            if len(self.cache) > 512:
                self.cache.pop(next(iter(self.cache)))
            self.cache[i] = c
        return c


def solve_dual(X, nu, gamma, tol=1e-6, max_iter=None, cache_limit=6000):
    """SMO on  min 1/2 a'Ka  s.t.  0 <= a_i <= 1/(nu n), sum a = 1.

    Working pair = maximal KKT violators. Returns (alpha, rho, gradient, iterations).
    """
    n = len(X)
    C = 1.0 / (nu * n)
    K = _KernelColumns(X, gamma, cache_limit)
    alpha = np.zeros(n)
    full = int(np.floor(nu * n))
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    alpha = np.clip(alpha, 0.0, C)
    def exact_grad():
        g = np.zeros(n)
        for k in np.flatnonzero(alpha):
            g += alpha[k] * K.col(k)
        return g

    grad = exact_grad()
    # the incremental update drifts by roundoff; resync on a fixed cadence
    # and before declaring convergence
    refresh = max(2000, 10 * n)
    max_iter = max_iter or max(100000, 50 * n)
    eps = 1e-12 * C
    it = 0
    gap = np.inf
    while it < max_iter:
        up = alpha < C - eps
        low = alpha > eps
        g_up = np.where(up, grad, np.inf)
        g_low = np.where(low, grad, -np.inf)
        i = int(np.argmin(g_up))
        j = int(np.argmax(g_low))
        gap = g_low[j] - g_up[i]
        if gap <= tol:
            fresh = exact_grad()
            if np.max(np.abs(fresh - grad)) <= 0.5 * tol:
                grad = fresh
                break
            grad = fresh
            continue
        Ki, Kj = K.col(i), K.col(j)
        eta = max(2.0 - 2.0 * Ki[j], 1e-12)
        delta = min(gap / eta, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        grad += delta * (Ki - Kj)
        it += 1
        if it % refresh == 0:
            grad = exact_grad()
    else:
        raise SolverFailed(f"SMO did not converge in {max_iter} iterations", residual=float(gap))
    alpha = np.clip(alpha, 0.0, C)
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        rho = float(np.mean(grad[free]))
    else:
        at_c = grad[alpha >= C - eps]
        at_0 = grad[alpha <= eps]
        hi = at_c.max() if len(at_c) else at_0.min()
        lo = at_0.min() if len(at_0) else at_c.max()
        rho = float(0.5 * (hi + lo))
    return alpha, rho, grad, it


def fit_ocsvm(pairs, nu=0.1, gamma=None, seed=0, max_pairs=20000, tol=1e-6) -> OcsvmModel:
    """Fit on score pairs. ``gamma=None`` uses the median heuristic.

    Pairs are put in lexicographic order before solving so the result does
    not depend on the caller's ordering.
    """
    X = np.asarray(pairs, dtype=np.float64)
    if X.ndim != 2 or len(X) < 8:
        raise ValidationError("OCSVM needs at least 8 training pairs")
    if not np.all(np.isfinite(X)):
        raise ValidationError("OCSVM training pairs must be finite")
    if not 0 < nu <= 1:
        raise ValidationError(f"nu must lie in (0, 1], got {nu}")
    if len(X) > max_pairs:
        X = X[np.random.default_rng(seed).choice(len(X), max_pairs, replace=False)]
    X = X[np.lexsort(X.T[::-1])]
    if gamma is None:
        gamma = median_gamma(X, seed)
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    alpha, rho, _, it = solve_dual(X, nu, gamma, tol)
    sv = alpha > 0
    return OcsvmModel(X[sv], alpha[sv], rho, float(gamma), float(nu), len(X), it)
