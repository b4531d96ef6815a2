"""Evaluation protocols over frozen clip features: standard split, few-shot, zero-shot."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from proxyvqa import autodiff as ad
from proxyvqa import model as M
from proxyvqa.errors import ValidationError
from proxyvqa.metrics import CorrelationReport, evaluate_predictions, median_report
from proxyvqa.regression import (C_GRID, Standardizer, grid_search_cv,
                                 ridge_fit, svr_fit)

FEW_SHOT_KS = (10, 20, 50, 100)


@dataclass
class SplitPlan:
    run_id: int
    train_contents: np.ndarray
    test_contents: np.ndarray

    @property
    def disjoint(self) -> bool:
        return np.intersect1d(self.train_contents, self.test_contents).size == 0


def make_split(content_ids, run_id: int, seed: int, test_fraction: float = 0.2) -> SplitPlan:
    uniq = np.unique(content_ids)
    n_test = min(max(1, int(round(test_fraction * uniq.size))), uniq.size - 1)
    perm = np.random.default_rng([seed, 11, run_id]).permutation(uniq)
    return SplitPlan(run_id, np.sort(perm[n_test:]), np.sort(perm[:n_test]))


@dataclass
class ProtocolResult:
    summary: CorrelationReport
    runs: list = field(default_factory=list)  # dicts, one per run / sampling
    surrogate_labels: bool = True


def _as_arrays(features, labels):
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise ValidationError(f"{X.shape[0]} feature rows but {y.size} labels")
    return X, y


def standard_split_protocol(features, labels, content_ids, n_runs: int = 100, seed: int = 0,
                            C_grid: Sequence[float] = C_GRID, gamma_grid=None,
                            n_folds: int = 5) -> ProtocolResult:
    """Content-disjoint 80/20 splits; per run grid-searched SVR; per-metric medians."""
    X, y = _as_arrays(features, labels)
    content_ids = np.asarray(content_ids)
    if np.unique(content_ids).size < 5:
        raise ValidationError("standard split protocol needs at least 5 distinct contents")
    runs, reports = [], []
    for run in range(n_runs):
        plan = make_split(content_ids, run, seed)
        assert plan.disjoint
        tr = np.isin(content_ids, plan.train_contents)
        te = ~tr
        gs = grid_search_cv(X[tr], y[tr], content_ids[tr], C_grid, gamma_grid, n_folds=n_folds,
                            seed=seed * 1000 + run)
        rep = evaluate_predictions(gs.model.predict(X[te]), y[te])
        reports.append(rep)
        runs.append(dict(run_id=run, **rep.as_row(), C=gs.C, gamma=gs.gamma, n_train=int(tr.sum()),
                         test_contents=" ".join(str(int(c)) for c in plan.test_contents)))
    return ProtocolResult(median_report(reports), runs)


def _fit_regressor(kind: str, X, y, ridge_lambda: float, svr_params: Optional[dict]):
    if kind == "ridge":
        return ridge_fit(X, y, ridge_lambda)
    if kind == "svr":
        params = dict(C=1.0, gamma=None, epsilon=None)
        params.update(svr_params or {})
        return svr_fit(X, y, **params)
    raise ValidationError(f"unknown regressor {kind!r}; expected ridge or svr")


def few_shot_protocol(features, labels, K: int, regressor: str = "ridge", n_samplings: int = 100,
                      seed: int = 0, ridge_lambda: float = 1.0,
                      svr_params: Optional[dict] = None) -> ProtocolResult:
    """Fit on K random clips, evaluate on the rest; medians over samplings."""
    X, y = _as_arrays(features, labels)
    if not 2 <= K < y.size:
        raise ValidationError(f"K={K} must satisfy 2 <= K < {y.size}")
    runs, reports = [], []
    for s in range(n_samplings):
        idx = np.random.default_rng([seed, 13, K, s]).permutation(y.size)
        tr, te = idx[:K], idx[K:]
        m = _fit_regressor(regressor, X[tr], y[tr], ridge_lambda, svr_params)
        rep = evaluate_predictions(m.predict(X[te]), y[te])
        reports.append(rep)
        runs.append(dict(run_id=s, K=K, **rep.as_row()))
    return ProtocolResult(median_report(reports), runs)


@dataclass
class ZeroShotHead:
    head: M.HeadParams
    standardizer: Standardizer
    label_mean: float
    label_scale: float

    def predict(self, features) -> np.ndarray:
        Z = self.standardizer.transform(np.atleast_2d(features))
        out = M.head_forward(self.head, ad.Tensor(Z)).data
        return out * self.label_scale + self.label_mean


def train_source_head(features, labels, epochs: int = 300, lr: float = 0.05, momentum: float = 0.9,
                      hidden: int = M.HEAD_HIDDEN, seed: int = 0, beta: float = 1.0) -> ZeroShotHead:
    """Full-batch SGD of an MLP head on standardized source features and labels."""
    X, y = _as_arrays(features, labels)
    std = Standardizer.fit(X)
    Z = ad.Tensor(std.transform(X))
    mu, sd = float(y.mean()), float(y.std()) or 1.0
    yt = (y - mu) / sd
    head = M.init_head(seed, "mos", X.shape[1], hidden)
    vel = {id(p): np.zeros_like(p.data) for p in head.parameters()}
    for _ in range(epochs):
        for p in head.parameters():
            p.zero_grad()
        M.task_loss_from_embeddings(head, Z, yt, beta).backward()
        for p in head.parameters():
            v = vel[id(p)]
            v *= momentum
            v += p.grad
            p.data -= lr * v
    return ZeroShotHead(head, std, mu, sd)


def zero_shot_protocol(source_features, source_labels, target_features, target_labels,
                       epochs: int = 300, seed: int = 0) -> ProtocolResult:
    Xs, ys = _as_arrays(source_features, source_labels)
    Xt, yt = _as_arrays(target_features, target_labels)
    if Xs.shape[1] != Xt.shape[1]:
        raise ValidationError(f"feature dimension mismatch: source {Xs.shape[1]}, target {Xt.shape[1]}")
    head = train_source_head(Xs, ys, epochs=epochs, seed=seed)
    rep = evaluate_predictions(head.predict(Xt), yt)
    return ProtocolResult(rep, [dict(run_id=0, **rep.as_row())])
