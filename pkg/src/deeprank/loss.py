"""Rank objectives, the training-batch rank gradient, and pointwise baseline losses."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .network import NetworkParams, first_layer_norms
from .surrogate import Surrogate, SurrogateKind, NonDifferentiableError

HUBER_IOTA = 1.345
CAUCHY_IOTA = 1.0


class BaselineKind(str, Enum):
    LSE = "lse"
    LAD = "lad"
    HUBER = "huber"
    CAUCHY = "cauchy"


@dataclass(frozen=True)
class BaselineLossSpec:
    kind: BaselineKind = BaselineKind.LSE
    iota: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        if self.iota is None:
            default = {BaselineKind.HUBER: HUBER_IOTA, BaselineKind.CAUCHY: CAUCHY_IOTA}
            object.__setattr__(self, "iota", default.get(self.kind, 1.0))
        if not self.iota > 0:
            raise ValueError(f"iota must be positive, got {self.iota}")


def _as_pair(y, f) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    f = np.asarray(f, dtype=np.float64).ravel()
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: y has {y.size}, f has {f.size}")
    if y.size < 2:
        raise ValueError("rank objectives need at least two observations")
    return y, f


# -- exact objectives via merge-sort pair counting -----------------------------


def _merge_count(keys: list, weights: list) -> int:
    """Weighted count of index pairs ``a < b`` with ``keys[a] < keys[b]``.

    Each pair contributes ``weights[a]``. Bottom-up merge sort, O(n log n).
    """
    n = len(keys)
    runs = [([k], [w]) for k, w in zip(keys, weights)]
    total = 0
    while len(runs) > 1:
        merged = []
        for r in range(0, len(runs) - 1, 2):
            lk, lw = runs[r]
            rk, rw = runs[r + 1]
            out_k, out_w = [], []
            i = 0
            acc = 0  # weight of left keys strictly below the current right key
            nl = len(lk)
            for k, w in zip(rk, rw):
                while i < nl and lk[i] < k:
                    acc += lw[i]
                    out_k.append(lk[i])
                    out_w.append(lw[i])
                    i += 1
                total += acc
                out_k.append(k)
                out_w.append(w)
            out_k.extend(lk[i:])
            out_w.extend(lw[i:])
            merged.append((out_k, out_w))
        if len(runs) % 2:
            merged.append(runs[-1])
        runs = merged
    assert n == 0 or len(runs[0][0]) == n
    return total


def concordant_pair_count(y, f, weights=None) -> int:
    """``sum_{i != j} w_j I(y_i > y_j) I(f_i > f_j)`` with integer weights (default 1)."""
    y, f = _as_pair(y, f)
    w = np.ones(y.size, dtype=np.int64) if weights is None else np.asarray(weights).astype(np.int64)
    # y ascending, f descending within tied y: tied-y pairs never satisfy the strict f test
    order = np.lexsort((-f, y))
    return _merge_count(f[order].tolist(), w[order].tolist())


def concordant_pair_count_bruteforce(y, f, weights=None) -> int:
    y, f = _as_pair(y, f)
    w = np.ones(y.size, dtype=np.int64) if weights is None else np.asarray(weights).astype(np.int64)
    mask = (y[:, None] > y[None, :]) & (f[:, None] > f[None, :])
    return int((mask * w[None, :]).sum())


def exact_rank_objective(y, f) -> float:
    """Fraction of ordered pairs ordered the same way by ``y`` and ``f``; lies in [0, 1/2]."""
    y, f = _as_pair(y, f)
    n = y.size
    return concordant_pair_count(y, f) / (n * (n - 1))


def _check_delta(delta, n: int) -> np.ndarray:
    delta = np.asarray(delta).ravel()
    if delta.size != n:
        raise ValueError(f"length mismatch: delta has {delta.size}, expected {n}")
    if not np.all((delta == 0) | (delta == 1)):
        raise ValueError("delta must contain only 0 and 1")
    return delta.astype(np.int64)


def censored_rank_objective(y, delta, f, surrogate: Surrogate | None = None) -> float:
    """Rank objective where a pair counts only if its smaller-``y`` member is uncensored.

    With ``surrogate`` the score indicator is replaced by ``surrogate.eval``.
    """
    y, f = _as_pair(y, f)
    n = y.size
    delta = _check_delta(delta, n)
    if surrogate is None or surrogate.kind is SurrogateKind.EXACT:
        return concordant_pair_count(y, f, delta) / (n * (n - 1))
    pairs = (y[:, None] > y[None, :]) * delta[None, :]
    return float((pairs * surrogate.eval(f[:, None] - f[None, :])).sum() / (n * (n - 1)))


def smoothed_rank_objective(y, f, surrogate: Surrogate) -> float:
    y, f = _as_pair(y, f)
    n = y.size
    pairs = y[:, None] > y[None, :]
    return float((pairs * surrogate.eval(f[:, None] - f[None, :])).sum() / (n * (n - 1)))


# -- training objective --------------------------------------------------------


def minibatch_rank_gradient(
    batch_idx,
    y_all,
    f_batch,
    f_cache,
    surrogate: Surrogate,
    delta=None,
) -> tuple[float, np.ndarray]:
    """Batch objective of the epoch-cached training scheme and its gradient in ``f_batch``.

    The objective is::

        1/(2 m (n-1)) * sum_i sum_j S(sgn(y_i - y_j) * (f_batch_i - f_cache_j))

    with ``i`` over the batch and ``j`` over all ``n`` training points. Cached
    predictions are constants. Tied pairs (including ``j == i``) add the
    constant ``S(0)`` and nothing to the gradient. With ``delta``, a pair is
    kept only when its smaller-``y`` member is uncensored.
    """
    if surrogate.kind is SurrogateKind.EXACT:
        raise NonDifferentiableError("non-differentiable surrogate: cannot train on the exact indicator")
    y_all = np.asarray(y_all, dtype=np.float64)
    f_cache = np.asarray(f_cache, dtype=np.float64)
    f_batch = np.asarray(f_batch, dtype=np.float64)
    batch_idx = np.asarray(batch_idx, dtype=np.intp)
    n = y_all.size
    m = batch_idx.size
    if f_cache.size != n:
        raise ValueError(f"cache holds {f_cache.size} predictions for {n} observations")
    if f_batch.size != m:
        raise ValueError(f"batch has {m} indices but {f_batch.size} predictions")
    if m == 0 or n < 2:
        raise ValueError("need a nonempty batch and at least two observations")
    if batch_idx.min() < 0 or batch_idx.max() >= n:
        raise IndexError("batch index out of range")

    y_b = y_all[batch_idx]
    sgn = np.sign(y_b[:, None] - y_all[None, :])
    u = sgn * (f_batch[:, None] - f_cache[None, :])
    if delta is None:
        weight = 1.0
    else:
        delta = _check_delta(delta, n).astype(np.float64)
        # y_i > y_j needs delta_j, y_j > y_i needs delta_i; ties keep weight 1
        weight = np.where(sgn > 0, delta[None, :], np.where(sgn < 0, delta[batch_idx][:, None], 1.0))
    scale = 1.0 / (2.0 * m * (n - 1))
    value = float((weight * surrogate.eval(u)).sum() * scale)
    grad = (weight * sgn * surrogate.grad(u)).sum(axis=1) * scale
    return value, grad


# -- baselines -----------------------------------------------------------------


def baseline_loss(spec: BaselineLossSpec, y, f) -> tuple[float, np.ndarray]:
    """Mean pointwise loss and its per-sample gradient in ``f``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    f = np.asarray(f, dtype=np.float64).ravel()
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: y has {y.size}, f has {f.size}")
    n = y.size
    r = f - y
    iota = spec.iota
    if spec.kind is BaselineKind.LSE:
        vals, grads = r * r, 2.0 * r
    elif spec.kind is BaselineKind.LAD:
        vals, grads = np.abs(r), np.sign(r)
    elif spec.kind is BaselineKind.CAUCHY:
        q = 1.0 + iota * iota * r * r
        vals, grads = np.log(q), 2.0 * iota * iota * r / q
    else:
        inside = np.abs(r) < iota
        vals = np.where(inside, 0.5 * r * r, iota * np.abs(r) - 0.5 * iota * iota)
        grads = np.where(inside, r, iota * np.sign(r))
    return float(vals.mean()), grads / n


def group_penalty_value(params: NetworkParams, lam: float) -> float:
    """``lam * sum_q ||W_0[:, q]||_2``."""
    if lam == 0:
        return 0.0
    return float(lam * first_layer_norms(params).sum())
