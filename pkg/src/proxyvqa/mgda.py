"""Min-norm point in the convex hull of task gradients (MGDA / MinNormSolver).

For two tasks the problem has a closed form. For three or more, Frank-Wolfe
runs entirely on the T x T Gram matrix: each step picks the vertex with the
smallest inner product against the current point and line-searches on the
segment between them with the two-point rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from proxyvqa import autodiff as ad
from proxyvqa.errors import ValidationError


@dataclass
class GradientBundle:
    task_names: tuple
    vectors: np.ndarray  # (T, P)
    gram: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if len(self.task_names) != self.vectors.shape[0]:
            raise ValidationError(f"{len(self.task_names)} task names for {self.vectors.shape[0]} vectors")
        if self.gram is None:
            self.gram = gram_matrix(self.vectors)

    @classmethod
    def from_list(cls, vectors: Sequence, task_names: Optional[Sequence[str]] = None) -> "GradientBundle":
        vectors = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
        if not vectors:
            raise ValidationError("empty gradient bundle")
        if len({v.size for v in vectors}) != 1:
            raise ValidationError("gradient vectors have mismatched lengths")
        names = tuple(task_names) if task_names is not None else tuple(f"t{i}" for i in range(len(vectors)))
        return cls(names, np.stack(vectors))

    @property
    def n_tasks(self) -> int:
        return self.vectors.shape[0]


@dataclass
class SimplexWeights:
    alpha: np.ndarray
    achieved_norm_sq: float
    iterations: int = 0
    degenerate: bool = False
    trace: list = field(default_factory=list)

    def combine(self, vectors) -> np.ndarray:
        return np.tensordot(self.alpha, np.asarray(vectors, dtype=np.float64), axes=1)


def gram_matrix(vectors: np.ndarray) -> np.ndarray:
    g = vectors @ vectors.T
    return 0.5 * (g + g.T)


def _pair_from_gram(v11: float, v12: float, v22: float):
    """gamma minimizing ||gamma*a + (1-gamma)*b||^2 given <a,a>, <a,b>, <b,b>."""
    denom = v11 + v22 - 2.0 * v12
    if denom <= 0.0:
        # a == b (or numerically so): first index wins
        return 1.0, v11
    if v12 >= v11:
        return 1.0, v11
    if v12 >= v22:
        return 0.0, v22
    gamma = (v22 - v12) / denom
    return gamma, gamma * gamma * v11 + 2 * gamma * (1 - gamma) * v12 + (1 - gamma) ** 2 * v22


def min_norm_pair(g1, g2) -> SimplexWeights:
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise ValidationError(f"gradient length mismatch: {g1.size} vs {g2.size}")
    v11, v12, v22 = float(g1 @ g1), float(g1 @ g2), float(g2 @ g2)
    if v11 == 0.0 and v22 == 0.0:
        return SimplexWeights(np.array([0.5, 0.5]), 0.0, 0, degenerate=True)
    gamma, _ = _pair_from_gram(v11, v12, v22)
    combined = gamma * g1 + (1 - gamma) * g2
    return SimplexWeights(np.array([gamma, 1.0 - gamma]), float(combined @ combined), 1)


def _best_pair_start(gram: np.ndarray):
    # optimum on an edge is then exact, which plain Frank-Wolfe only reaches by zig-zagging
    n = gram.shape[0]
    best = None
    for i in range(n):
        for j in range(i + 1, n):
            gamma, val = _pair_from_gram(gram[i, i], gram[i, j], gram[j, j])
            if best is None or val < best[0]:
                best = (val, i, j, gamma)
    val, i, j, gamma = best
    sol = np.zeros(n)
    sol[i], sol[j] = gamma, 1.0 - gamma
    return sol, float(val)


def min_norm_solve(bundle: GradientBundle, tol: float = 1e-7, max_iter: int = 250) -> SimplexWeights:
    n = bundle.n_tasks
    if n == 1:
        v = bundle.vectors[0]
        return SimplexWeights(np.array([1.0]), float(v @ v), 0)
    if n == 2:
        return min_norm_pair(bundle.vectors[0], bundle.vectors[1])

    gram = bundle.gram
    if not np.any(gram):
        return SimplexWeights(np.full(n, 1.0 / n), 0.0, 0, degenerate=True)

    sol, norm_sq = _best_pair_start(gram)
    trace = [(sol.copy(), norm_sq)]
    it = 0
    for it in range(1, max_iter + 1):
        grad_dir = gram @ sol
        t = int(np.argmin(grad_dir))
        v11 = float(sol @ grad_dir)
        v12 = float(grad_dir[t])
        v22 = float(gram[t, t])
        gamma, new_norm = _pair_from_gram(v11, v12, v22)
        if gamma >= 1.0:
            break
        new_sol = gamma * sol
        new_sol[t] += 1.0 - gamma
        decrease = norm_sq - new_norm
        if decrease < 0:
            break
        sol, norm_sq = new_sol, new_norm
        trace.append((sol.copy(), norm_sq))
        if decrease < tol:
            break

    sol = np.clip(sol, 0.0, None)
    sol /= sol.sum()
    norm_sq = float(max(sol @ gram @ sol, 0.0))
    return SimplexWeights(sol, norm_sq, it, trace=trace)


def compose_joint_loss(alpha: SimplexWeights, losses: Sequence) -> ad.Tensor:
    """sum_t alpha_t * L_t with alpha held constant."""
    weights = alpha.alpha if isinstance(alpha, SimplexWeights) else np.asarray(alpha, dtype=np.float64)
    if len(weights) != len(losses):
        raise ValidationError(f"{len(weights)} weights for {len(losses)} losses")
    return ad.weighted_sum(losses, weights)


def write_trace_csv(path, weights: SimplexWeights) -> None:
    """Per-iteration dump: step, alpha_0..alpha_{T-1}, norm_sq."""
    n = len(weights.alpha)
    with open(path, "w") as f:
        f.write(",".join(["step"] + [f"alpha_{i}" for i in range(n)] + ["norm_sq"]) + "\n")
        for i, (a, v) in enumerate(weights.trace):
            f.write(",".join([str(i)] + [repr(float(x)) for x in a] + [repr(float(v))]) + "\n")
