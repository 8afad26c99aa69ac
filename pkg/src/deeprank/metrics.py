"""Evaluation metrics: calibrated prediction losses, rank agreement, selection accuracy."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .loss import CAUCHY_IOTA, HUBER_IOTA, BaselineLossSpec, baseline_loss


@dataclass
class MetricsReport:
    mse: float
    lad: float
    cauchy: float
    huber: float
    n_test: int
    spearman: float | None = None
    c_index: float | None = None
    top_k: dict[int, int] = field(default_factory=dict)
    classification_error: float | None = None
    huber_iota: float = HUBER_IOTA
    cauchy_iota: float = CAUCHY_IOTA

    @property
    def rank(self) -> float:
        return self.c_index if self.c_index is not None else self.spearman

    def to_dict(self) -> dict:
        """Flat JSON-ready mapping; absent metrics are omitted."""
        d = asdict(self)
        top = d.pop("top_k")
        out = {k: v for k, v in d.items() if v is not None}
        out["rank"] = self.rank
        for k, v in sorted(top.items()):
            out[f"top_{k}"] = v
        return out


def prediction_losses(y, yhat) -> tuple[float, float, float, float]:
    """``(mse, lad, cauchy, huber)`` of calibrated predictions."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    return tuple(
        baseline_loss(BaselineLossSpec(kind), y, yhat)[0]
        for kind in ("lse", "lad", "cauchy", "huber")
    )


def spearman(y, f) -> float:
    """Pearson correlation of average ranks."""
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if y.shape != f.shape or y.size < 2:
        raise ValueError("spearman needs two equal-length vectors with n >= 2")
    ry = rankdata(y) - (y.size + 1) / 2.0
    rf = rankdata(f) - (y.size + 1) / 2.0
    denom = math.sqrt(float(ry @ ry) * float(rf @ rf))
    if denom == 0:
        raise ValueError("spearman correlation undefined: all values tied")
    return float(ry @ rf) / denom


def c_index(y, delta, f) -> float:
    """Harrell's concordance index.

    A pair ``(i, j)`` is comparable when ``y_j < y_i`` and ``delta_j = 1``;
    it is concordant when ``f_i > f_j`` and earns 1/2 when the scores tie.
    Higher scores are expected for longer times.
    """
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    delta = np.asarray(delta)
    if not (y.shape == f.shape == delta.shape):
        raise ValueError("y, delta and f must have equal lengths")
    comparable = (y[:, None] > y[None, :]) & (delta[None, :] == 1)
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise ValueError("c-index undefined: no comparable pairs")
    df = f[:, None] - f[None, :]
    score = (comparable & (df > 0)).sum() + 0.5 * (comparable & (df == 0)).sum()
    return float(score) / n_comp


def top_k(norms, truth, k: int) -> int:
    """True positives among the ``k`` largest norms (ties broken by lower index)."""
    norms = np.asarray(norms, dtype=np.float64)
    if k > norms.size:
        raise ValueError(f"k={k} exceeds the number of columns {norms.size}")
    order = np.lexsort((np.arange(norms.size), -norms))
    top = order[:k]
    if k < norms.size and norms[order[k - 1]] == norms[order[k]]:
        warnings.warn("tied norms at the top-k boundary; broken by column index", stacklevel=2)
    return len(set(top.tolist()) & set(int(q) for q in truth))


def classification_error(y_binary, scores, threshold: float) -> float:
    y = np.asarray(y_binary)
    pred = (np.asarray(scores, dtype=np.float64) > threshold).astype(y.dtype)
    return float(np.mean(pred != y))


def aggregate(reports) -> dict[str, dict[str, float]]:
    """Per-metric mean and sample sd (``n - 1`` denominator, 0 for one replicate)."""
    rows = [r.to_dict() if isinstance(r, MetricsReport) else dict(r) for r in reports]
    if not rows:
        raise ValueError("nothing to aggregate")
    keys = [k for k in rows[0] if all(k in r and r[k] is not None for r in rows)]
    out = {}
    for k in keys:
        vals = np.array([float(r[k]) for r in rows])
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[k] = {"mean": float(vals.mean()), "sd": sd}
    return out
