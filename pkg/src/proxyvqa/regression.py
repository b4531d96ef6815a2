"""Frozen-feature quality regressors: closed-form Ridge and an SMO-trained RBF epsilon-SVR.

Both models standardize features (per-feature mean and scale) before fitting
and store the statistics, so predictions are reproducible from the stored
fields alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from proxyvqa.errors import ValidationError
from proxyvqa.metrics import srcc

C_GRID = (0.1, 1.0, 10.0, 100.0)
RIDGE_LAMBDA = 1.0
SVR_TOL = 1e-3


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


def _xy(features, labels):
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise ValidationError(f"{X.shape[0]} feature rows but {y.size} labels")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("features/labels contain non-finite values")
    return X, y


@dataclass
class RidgeModel:
    weights: np.ndarray  # on standardized features
    intercept: float
    lam: float
    standardizer: Standardizer
    degenerate: bool = False

    kind = "ridge"

    @property
    def coef(self) -> np.ndarray:
        """Weights in raw feature units."""
        return self.weights / self.standardizer.scale

    def predict(self, features) -> np.ndarray:
        return self.standardizer.transform(np.atleast_2d(features)) @ self.weights + self.intercept


def ridge_fit(features, labels, lam: float = RIDGE_LAMBDA) -> RidgeModel:
    X, y = _xy(features, labels)
    if not lam > 0:
        raise ValidationError("ridge lambda must be > 0")
    std = Standardizer.fit(X)
    Xs = std.transform(X)
    ybar = float(y.mean())
    if np.all(y == y[0]):
        return RidgeModel(np.zeros(X.shape[1]), ybar, lam, std, degenerate=True)
    A = Xs.T @ Xs + lam * np.eye(X.shape[1])
    w = linalg.cho_solve(linalg.cho_factor(A), Xs.T @ (y - ybar))
    return RidgeModel(w, ybar, lam, std)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # standardized
    dual_coef: np.ndarray  # beta_i = alpha_i - alpha*_i, in [-C, C]
    bias: float
    gamma: float
    epsilon: float
    C: float
    standardizer: Standardizer
    iterations: int = 0
    converged: bool = True
    kkt_residual: float = 0.0
    dual_objective: float = 0.0

    kind = "svr"

    def predict(self, features) -> np.ndarray:
        Xs = self.standardizer.transform(np.atleast_2d(features))
        if self.dual_coef.size == 0:
            return np.full(Xs.shape[0], self.bias)
        return rbf_kernel(Xs, self.support_vectors, self.gamma) @ self.dual_coef + self.bias


def svr_dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    """0.5 b'Kb - y'b + eps*|b|_1 (minimization form)."""
    return float(0.5 * beta @ K @ beta - y @ beta + epsilon * np.abs(beta).sum())


def svr_kkt_residual(K, y, beta, bias, C, epsilon, bound_tol=1e-12) -> float:
    """Largest violation of the epsilon-tube optimality conditions."""
    r = y - (K @ beta + bias)
    at_upper = beta >= C - bound_tol
    at_lower = beta <= -C + bound_tol
    zero = np.abs(beta) <= bound_tol
    pos = (beta > bound_tol) & ~at_upper
    neg = (beta < -bound_tol) & ~at_lower
    v = np.zeros_like(r)
    v[pos] = np.abs(r[pos] - epsilon)
    v[neg] = np.abs(r[neg] + epsilon)
    v[zero] = np.maximum(np.abs(r[zero]) - epsilon, 0.0)
    v[at_upper] = np.maximum(epsilon - r[at_upper], 0.0)
    v[at_lower] = np.maximum(r[at_lower] + epsilon, 0.0)
    return float(v.max()) if v.size else 0.0


def _smo(K: np.ndarray, y: np.ndarray, C: float, epsilon: float, tol: float, max_iter: int):
    """SMO on the 2n-variable dual with second-order working-set selection.

    Variables a = [alpha, alpha*] with signs s = [+1, -1]; minimizes
    0.5 a'Qa + p'a subject to s'a = 0, 0 <= a <= C.
    """
    n = y.size
    s = np.concatenate([np.ones(n), -np.ones(n)])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    a = np.zeros(2 * n)
    G = np.concatenate([epsilon - y, epsilon + y])
    kdiag = np.diag(K)
    tau = 1e-12
    converged = False
    it = 0
    for it in range(max_iter):
        up = ((s > 0) & (a < C)) | ((s < 0) & (a > 0))
        low = ((s > 0) & (a > 0)) | ((s < 0) & (a < C))
        msG = -s * G
        if not up.any() or not low.any():
            converged = True
            break
        cand = np.where(up, msG, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        gmax2 = np.max(np.where(low, -msG, -np.inf))
        if gmax + gmax2 < tol:
            converged = True
            break
        ki = idx[i]
        b = gmax + s * G  # gmax - (-s G)
        quad = kdiag[ki] + kdiag[idx] - 2.0 * K[ki, idx]
        quad = np.where(quad > 0, quad, tau)
        obj = np.where(low & (b > 0), -(b * b) / quad, np.inf)
        j = int(np.argmin(obj))
        kj = idx[j]

        qij = s[i] * s[j] * K[ki, kj]
        ai_old, aj_old = a[i], a[j]
        if s[i] != s[j]:
            q = kdiag[ki] + kdiag[kj] + 2.0 * qij
            q = q if q > 0 else tau
            delta = (-G[i] - G[j]) / q
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            q = kdiag[ki] + kdiag[kj] - 2.0 * qij
            q = q if q > 0 else tau
            delta = (G[i] - G[j]) / q
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i], a[j] = C, total - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, total
            if total > C:
                if a[j] > C:
                    a[j], a[i] = C, total - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, total
        dai, daj = a[i] - ai_old, a[j] - aj_old
        G += s * (s[i] * K[ki, idx] * dai + s[j] * K[kj, idx] * daj)

    # bias: average over free variables, else midpoint of the feasible interval
    yG = s * G
    at_ub = a >= C
    at_lb = a <= 0
    free = ~at_ub & ~at_lb
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_set = (at_ub & (s < 0)) | (at_lb & (s > 0))
        lb_set = (at_ub & (s > 0)) | (at_lb & (s < 0))
        ub = yG[ub_set].min() if ub_set.any() else np.inf
        lb = yG[lb_set].max() if lb_set.any() else -np.inf
        rho = float((ub + lb) / 2)
    beta = a[:n] - a[n:]
    return beta, -rho, it, converged


def svr_fit(features, labels, C: float = 1.0, gamma: Optional[float] = None,
            epsilon: Optional[float] = None, tol: float = SVR_TOL, max_iter: int = 100_000) -> SvrModel:
    X, y = _xy(features, labels)
    if not C > 0:
        raise ValidationError("C must be > 0")
    std = Standardizer.fit(X)
    Xs = std.transform(X)
    if gamma is None:
        gamma = default_gamma(Xs)
    if not gamma > 0:
        raise ValidationError("gamma must be > 0")
    if epsilon is None:
        epsilon = default_epsilon(y)
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    K = rbf_kernel(Xs, Xs, gamma)
    beta, bias, it, ok = _smo(K, y, C, epsilon, tol, max_iter)
    sv = np.abs(beta) > 0
    return SvrModel(
        support_vectors=Xs[sv], dual_coef=beta[sv], bias=bias, gamma=float(gamma), epsilon=float(epsilon),
        C=float(C), standardizer=std, iterations=it, converged=ok,
        kkt_residual=svr_kkt_residual(K, y, beta, bias, C, epsilon),
        dual_objective=svr_dual_objective(K, y, beta, epsilon),
    )


def default_gamma(Xs: np.ndarray) -> float:
    var = float(Xs.var())
    return 1.0 / (Xs.shape[1] * var) if var > 0 else 1.0


def default_epsilon(y: np.ndarray) -> float:
    return 0.1 * float(np.std(y))


def default_gamma_grid(features) -> tuple:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return (default_gamma(Standardizer.fit(X).transform(X)), 0.01, 0.1, 1.0)


def content_folds(content_ids: Sequence[int], n_folds: int = 5, seed: int = 0):
    """Assign whole contents to folds. Returns (fold index per sample, folds used)."""
    content_ids = np.asarray(content_ids)
    uniq = np.unique(content_ids)
    k = min(n_folds, uniq.size)
    perm = np.random.default_rng([seed, 5]).permutation(uniq)
    fold_of = {int(c): i % k for i, c in enumerate(perm)}
    return np.array([fold_of[int(c)] for c in content_ids]), k


@dataclass
class GridSearchResult:
    C: float
    gamma: float
    model: SvrModel
    n_folds: int
    reduced_folds: bool
    scores: list = field(default_factory=list)  # (C, gamma, mean validation SRCC)


def grid_search_cv(features, labels, content_ids, C_grid: Sequence[float] = C_GRID,
                   gamma_grid: Optional[Sequence[float]] = None, epsilon: Optional[float] = None,
                   n_folds: int = 5, seed: int = 0) -> GridSearchResult:
    """Content-disjoint k-fold CV over (C, gamma), maximizing mean validation SRCC.

    Ties go to the smaller C, then the smaller gamma.
    """
    X, y = _xy(features, labels)
    content_ids = np.asarray(content_ids)
    if content_ids.size != y.size:
        raise ValidationError("content id count does not match samples")
    if np.unique(content_ids).size < 2:
        raise ValidationError("grid search needs at least 2 distinct contents")
    folds, k = content_folds(content_ids, n_folds, seed)
    if gamma_grid is None:
        gamma_grid = default_gamma_grid(X)
    if epsilon is None:
        epsilon = default_epsilon(y)

    cells = sorted((float(c), float(g)) for c in C_grid for g in gamma_grid)
    best, scores = None, []
    for C, gamma in cells:
        vals = []
        for f in range(k):
            tr, va = folds != f, folds == f
            if va.sum() < 3:
                continue
            m = svr_fit(X[tr], y[tr], C, gamma, epsilon)
            vals.append(srcc(m.predict(X[va]), y[va]))
        vals = np.array(vals)
        vals = vals[np.isfinite(vals)]
        score = float(vals.mean()) if vals.size else -np.inf
        scores.append((C, gamma, score))
        if best is None or score > best[2]:
            best = (C, gamma, score)
    C, gamma, _ = best
    model = svr_fit(X, y, C, gamma, epsilon)
    return GridSearchResult(C, gamma, model, k, k < n_folds, scores)


def predict(model, features) -> np.ndarray:
    out = model.predict(features)
    if not np.all(np.isfinite(out)):
        raise ValidationError("model produced non-finite predictions")
    return out
