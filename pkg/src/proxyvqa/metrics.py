"""SRCC / KRCC / PLCC / RMSE with the 4-parameter logistic mapping.

Rank correlations use raw predictions; PLCC and RMSE use predictions after
the monotone logistic mapping onto the label scale. Undefined values
(constant inputs) are NaN, never 0.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import optimize, special, stats

from proxyvqa.errors import ValidationError

MISSING = float("nan")


def _vectors(pred, labels, min_n=3):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if pred.shape != labels.shape:
        raise ValidationError(f"{pred.size} predictions vs {labels.size} labels")
    if pred.size < min_n:
        raise ValidationError(f"need at least {min_n} samples, got {pred.size}")
    return pred, labels


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0.0 or not np.isfinite(denom):
        return MISSING
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def _constant(v) -> bool:
    return bool(np.all(v == v[0]))


def srcc(pred, labels) -> float:
    pred, labels = _vectors(pred, labels)
    if _constant(pred) or _constant(labels):
        return MISSING
    return pearson(stats.rankdata(pred), stats.rankdata(labels))


def krcc(pred, labels) -> float:
    """Kendall tau-b."""
    pred, labels = _vectors(pred, labels)
    if _constant(pred) or _constant(labels):
        return MISSING
    return float(stats.kendalltau(pred, labels, variant="b").statistic)


def logistic4(s, b1, b2, b3, b4):
    # 1 / (1 + exp(x)) == expit(-x), without overflow warnings for steep curves
    return b1 * (0.5 - special.expit(-b2 * (np.asarray(s, dtype=np.float64) - b3))) + b4


@dataclass
class LogisticFit:
    params: tuple  # (b1, b2, b3, b4) on the raw prediction / label scale
    mapped: np.ndarray
    method: str = "logistic"  # or "linear" (fallback / beta2 -> 0 limit)

    def __call__(self, s):
        return logistic4(np.asarray(s, dtype=np.float64), *self.params) if self.method == "logistic" \
            else self.params[0] * np.asarray(s, dtype=np.float64) + self.params[1]


def logistic_fit(pred, labels) -> LogisticFit:
    """Least-squares 4-parameter logistic on z-scored data.

    For fixed (b2, b3) the curve is linear in (b1, b4), which are solved in
    closed form; Nelder-Mead searches the remaining two, started from the best
    cells of a small grid whose b2 sign follows the raw Pearson correlation.
    The affine map is the b2 -> 0 limit of the family; it is used when the
    search fails or ends with a larger squared error.
    """
    pred, labels = _vectors(pred, labels, min_n=5)
    if _constant(labels):
        raise ValidationError("logistic mapping needs non-constant labels")
    mu_y, sd_y = labels.mean(), labels.std()
    yz = (labels - mu_y) / sd_y

    slope, icpt = np.polyfit(pred, labels, 1) if not _constant(pred) else (0.0, mu_y)
    lin = slope * pred + icpt
    lin_sse = float(np.sum((lin - labels) ** 2))
    linear = LogisticFit((float(slope), float(icpt)), lin, "linear")
    if _constant(pred):
        return linear

    mu_s, sd_s = pred.mean(), pred.std()
    sz = (pred - mu_s) / sd_s
    sign = 1.0 if pearson(sz, yz) >= 0 else -1.0

    def solve(b23):
        b2, b3 = b23
        phi = 0.5 - special.expit(-b2 * (sz - b3))
        pc = phi - phi.mean()
        var = float(pc @ pc)
        if not var > 1e-300:
            return np.inf, (0.0, b2, b3, 0.0)
        b1 = float(pc @ yz) / var
        b4 = -b1 * float(phi.mean())  # yz has zero mean
        r = b1 * phi + b4 - yz
        return float(r @ r), (b1, b2, b3, b4)

    starts = sorted((solve((sign * b2, b3))[0], sign * b2, b3)
                    for b2 in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
                    for b3 in np.quantile(sz, np.linspace(0.1, 0.9, 9)))
    best = None
    for _, b2, b3 in starts[:3]:
        # near-linear data drifts toward b2 -> 0 without converging; the cap bounds
        # that drift and the linear fallback below covers the limit itself
        res = optimize.minimize(lambda b: solve(b)[0], np.array([b2, b3]), method="Nelder-Mead",
                                options=dict(xatol=1e-10, fatol=1e-14, maxiter=2000, maxfev=2000))
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return linear

    b1, b2, b3, b4 = solve(best.x)[1]
    params = (float(sd_y * b1), float(b2 / sd_s), float(mu_s + sd_s * b3), float(sd_y * b4 + mu_y))
    mapped = sd_y * logistic4(sz, b1, b2, b3, b4) + mu_y
    if not np.all(np.isfinite(mapped)) or float(np.sum((mapped - labels) ** 2)) > lin_sse:
        return linear
    return LogisticFit(params, mapped, "logistic")


def plcc_rmse(mapped, labels):
    mapped, labels = _vectors(mapped, labels, min_n=2)
    return pearson(mapped, labels), float(np.sqrt(np.mean((mapped - labels) ** 2)))


@dataclass
class CorrelationReport:
    srcc: float
    krcc: float
    plcc: float
    rmse: float
    logistic_params: tuple = (MISSING,) * 4
    n: int = 0
    mapping: str = "logistic"

    METRICS = ("srcc", "krcc", "plcc", "rmse")

    def as_row(self) -> dict:
        row = asdict(self)
        params = [float(p) for p in self.logistic_params]
        row["logistic_params"] = "" if all(np.isnan(params)) else " ".join(repr(p) for p in params)
        return row


def evaluate_predictions(pred, labels) -> CorrelationReport:
    pred, labels = _vectors(pred, labels)
    rho, tau = srcc(pred, labels), krcc(pred, labels)
    try:
        fit = logistic_fit(pred, labels)
    except ValidationError:
        return CorrelationReport(rho, tau, MISSING, MISSING, n=pred.size, mapping="none")
    p, r = plcc_rmse(fit.mapped, labels)
    params = tuple(fit.params) + (MISSING,) * (4 - len(fit.params))
    return CorrelationReport(rho, tau, p, r, params, pred.size, fit.method)


def median_report(reports) -> CorrelationReport:
    """Per-metric median over runs; undefined (NaN) entries are skipped."""
    reports = list(reports)
    out = {}
    for m in CorrelationReport.METRICS:
        vals = np.array([getattr(r, m) for r in reports], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        out[m] = float(np.median(vals)) if vals.size else MISSING
    n = int(np.median([r.n for r in reports])) if reports else 0
    return CorrelationReport(out["srcc"], out["krcc"], out["plcc"], out["rmse"], n=n, mapping="median")
