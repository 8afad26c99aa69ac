"""Epoch-cached rank training, baselines, calibration, variable selection, and tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Dataset
from .loss import (
    BaselineLossSpec,
    baseline_loss,
    censored_rank_objective,
    exact_rank_objective,
    minibatch_rank_gradient,
)
from .network import (
    NetworkArchitecture,
    NetworkParams,
    backward,
    first_layer_norms,
    forward_batch,
    init_params,
)
from .optim import EarlyStopping, OptimizerConfig, OptimizerState, adam_step, group_prox, lr_at_epoch
from .surrogate import Surrogate

log = logging.getLogger(__name__)

DEFAULT_OMEGA_GRID = (4.0, 2.0, 1.0, 0.5)
DEFAULT_LAMBDA_GRID = (0.0, 0.1, 1.0, 10.0, 100.0)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one fit.

    With ``relative_omega`` the surrogate bandwidth is ``surrogate.omega``
    times the standard deviation of the freshly initialized network's
    training scores. ``loss`` is ``"rank"`` or a :class:`BaselineLossSpec`.
    ``censored=None`` follows the presence of ``delta`` in the training data.
    """

    surrogate: Surrogate = field(default_factory=lambda: Surrogate("drelu", 2.0))
    relative_omega: bool = True
    lam: float = 0.0
    batch_size: int = 100
    max_epochs: int = 200
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    loss: str | BaselineLossSpec = "rank"
    censored: bool | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if isinstance(self.loss, str) and self.loss != "rank":
            object.__setattr__(self, "loss", BaselineLossSpec(self.loss))

    @property
    def is_rank(self) -> bool:
        return not isinstance(self.loss, BaselineLossSpec)


@dataclass
class FitResult:
    arch: NetworkArchitecture
    best_params: NetworkParams
    best_epoch: int
    epochs_run: int
    history: list[dict]
    calibration: tuple[float, float]
    selected: list[tuple[int, float]]
    omega: float | None  # effective bandwidth used in training
    config: TrainConfig

    def predict(self, X) -> np.ndarray:
        """Calibrated response-scale predictions ``a * score + b``."""
        a, b = self.calibration
        return a * predict_scores(self, X) + b

    def same_fit(self, other: "FitResult") -> bool:
        """Exact equality of everything training produced, calibration excluded."""
        return (
            self.best_params.equals(other.best_params)
            and self.best_epoch == other.best_epoch
            and self.epochs_run == other.epochs_run
            and self.history == other.history
            and self.selected == other.selected
            and self.omega == other.omega
        )


def _check_trainable(ds: Dataset, censored: bool) -> None:
    if ds.n < 2:
        raise ValueError("training needs at least two observations")
    if censored:
        if ds.delta is None:
            raise ValueError("censored training requires delta")
        if not np.any(ds.delta == 1):
            raise ValueError("no informative pairs: every observation is censored")
    if np.all(ds.y == ds.y[0]):
        raise ValueError("no informative pairs: all responses are tied")


def validation_score(ds: Dataset, scores: np.ndarray, censored: bool) -> float:
    """Exact rank objective on ``ds`` (censored form when ``censored``)."""
    if censored:
        return censored_rank_objective(ds.y, ds.delta, scores)
    return exact_rank_objective(ds.y, scores)


def _eval_scores(params: NetworkParams, X) -> np.ndarray:
    return forward_batch(params, X)[0]


def fit(
    train: Dataset,
    valid: Dataset,
    arch: NetworkArchitecture,
    cfg: TrainConfig,
    batch_hook: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> FitResult:
    """Train one network and return the best-validation snapshot.

    Each epoch shuffles the training rows into batches of ``cfg.batch_size``
    (the last one may be shorter). For the rank loss every batch is compared
    against the prediction cache from the end of the previous epoch; the
    cache is refreshed only at epoch boundaries. ``batch_hook(epoch,
    batch_idx, cache)`` is called before each update.
    """
    censored = train.censored if cfg.censored is None else cfg.censored
    if not cfg.is_rank and censored:
        raise ValueError("baseline losses are only supported for uncensored data")
    _check_trainable(train, censored)
    if valid.n < 1:
        raise ValueError("validation set is empty")
    if arch.input_dim != train.p or valid.p != train.p:
        raise ValueError("architecture input_dim does not match the data")

    s_init, s_shuffle, s_drop = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(s_shuffle)
    drop_rng = np.random.default_rng(s_drop)
    params = init_params(arch, s_init)
    opt = cfg.optimizer
    state = OptimizerState.fresh(params, opt)
    X, y = train.X, train.y
    delta = train.delta if censored else None
    n, m = train.n, min(cfg.batch_size, train.n)

    cache = _eval_scores(params, X)
    surrogate, omega = None, None
    if cfg.is_rank:
        omega = cfg.surrogate.omega
        if cfg.relative_omega:
            sd = float(np.std(cache))
            omega = omega * sd if sd > 0 else omega
        surrogate = cfg.surrogate.with_omega(omega)

    stopper = EarlyStopping(opt.patience)
    best_params = params
    history: list[dict] = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        state = replace(state, current_lr=lr_at_epoch(opt, epoch - 1))
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, m):
            idx = perm[start:start + m]
            if batch_hook is not None:
                batch_hook(epoch, idx, cache)
            f_b, fwd = forward_batch(params, X[idx], arch.dropout_rate, drop_rng)
            if cfg.is_rank:
                value, g = minibatch_rank_gradient(idx, y, f_b, cache, surrogate, delta)
                g = -g  # ascent on the rank objective
            else:
                value, g = baseline_loss(cfg.loss, y[idx], f_b)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            total += value * idx.size
            grads = backward(params, fwd, g)
            params, state = adam_step(state, params, grads, opt, decay_first_layer=cfg.lam == 0)
            if cfg.lam > 0:
                params = group_prox(params, cfg.lam, state.current_lr)

        cache = _eval_scores(params, X)
        if not np.all(np.isfinite(cache)):
            raise NumericalError(f"non-finite predictions at epoch {epoch}")
        v_scores = _eval_scores(params, valid.X)
        if cfg.is_rank:
            score = validation_score(valid, v_scores, censored)
        else:
            score = -baseline_loss(cfg.loss, valid.y, v_scores)[0]
        stop = stopper.update(score, epoch)
        if stopper.best_epoch == epoch:
            best_params = params
        history.append({
            "epoch": epoch,
            "train_objective": total / n,
            "valid_score": score,
            "lr": state.current_lr,
            "nonzero_columns": int(np.count_nonzero(first_layer_norms(params))),
        })
        if stop:
            break

    scores = _eval_scores(best_params, X)
    calibration = calibrate_linear(scores, y, delta)
    result = FitResult(
        arch=arch,
        best_params=best_params,
        best_epoch=stopper.best_epoch,
        epochs_run=epoch,
        history=history,
        calibration=calibration,
        selected=[],
        omega=omega,
        config=cfg,
    )
    result.selected = select_variables(result)
    return result


def predict_scores(result: FitResult, X) -> np.ndarray:
    """Eval-mode network scores of the best snapshot."""
    return _eval_scores(result.best_params, X)


def calibrate_linear(scores, y, delta=None) -> tuple[float, float]:
    """OLS of ``y`` on the score; only uncensored rows enter when ``delta`` is given.

    Constant scores give slope 0 and the mean response as intercept.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if delta is not None:
        keep = np.asarray(delta) == 1
        s, y = s[keep], y[keep]
    if s.size == 0:
        raise ValueError("calibration needs at least one uncensored observation")
    s_c = s - s.mean()
    var = float(s_c @ s_c)
    if s.size < 2 or var == 0.0:
        return 0.0, float(y.mean())
    a = float(s_c @ (y - y.mean())) / var
    return a, float(y.mean() - a * s.mean())


def select_variables(result: FitResult | NetworkParams, all_columns: bool = False):
    """``(index, norm)`` pairs with nonzero first-layer norm, largest first.

    ``all_columns`` ranks every column, zero or not (for TOP-k reporting).
    Ties in norm keep ascending index order.
    """
    params = result.best_params if isinstance(result, FitResult) else result
    norms = first_layer_norms(params)
    order = np.lexsort((np.arange(norms.size), -norms))
    return [(int(q), float(norms[q])) for q in order if all_columns or norms[q] > 0]


def classification_threshold(scores, y_binary) -> float:
    """Score cut minimizing training error of ``I(score > t)`` over unique scores."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_binary)
    candidates = np.unique(scores)
    errors = [np.mean((scores > t) != y) for t in candidates]
    return float(candidates[int(np.argmin(errors))])


def null_rank_se(n: int) -> float:
    """Standard error of the exact rank objective under independence (no ties)."""
    return math.sqrt(2.0 * (2 * n + 5) / (9.0 * n * (n - 1))) / 4.0


@dataclass
class TuneResult:
    config: TrainConfig
    result: FitResult
    table: list[dict]


def tune(
    train: Dataset,
    valid: Dataset,
    arch: NetworkArchitecture,
    cfg: TrainConfig,
    omegas=DEFAULT_OMEGA_GRID,
    lambdas=DEFAULT_LAMBDA_GRID,
    tie_tol: float | None = None,
) -> TuneResult:
    """Fit every ``(omega, lambda)`` pair and keep the best by validation score.

    Candidates within ``tie_tol`` of the best score count as tied (default:
    one null standard error of the validation objective); among those the
    largest lambda wins, then the largest omega.
    """
    grid = sorted({(float(o), float(l)) for o in omegas for l in lambdas})
    if not grid:
        raise ValueError("empty tuning grid")
    if tie_tol is None:
        tie_tol = null_rank_se(valid.n)
    fits, table = {}, []
    for omega, lam in grid:
        c = replace(cfg, surrogate=cfg.surrogate.with_omega(omega), lam=lam)
        res = fit(train, valid, arch, c)
        score = res.history[res.best_epoch - 1]["valid_score"]
        fits[(omega, lam)] = (c, res)
        table.append({"omega": omega, "lambda": lam, "valid_score": score,
                      "selected": len(res.selected)})
        log.info("tune omega=%g lambda=%g valid=%.4f selected=%d", omega, lam, score, len(res.selected))
    best = max(r["valid_score"] for r in table)
    tied = [r for r in table if r["valid_score"] >= best - tie_tol]
    win = max(tied, key=lambda r: (r["lambda"], r["omega"]))
    c, res = fits[(win["omega"], win["lambda"])]
    return TuneResult(c, res, table)


def check_selection_monotone(table: list[dict]) -> bool:
    """Warn when the selected-column count grows with lambda at fixed omega."""
    ok = True
    for omega in {r["omega"] for r in table}:
        rows = sorted((r for r in table if r["omega"] == omega), key=lambda r: r["lambda"])
        counts = [r["selected"] for r in rows]
        if any(b > a for a, b in zip(counts, counts[1:])):
            log.warning("selection not monotone in lambda at omega=%g: %s", omega, counts)
            ok = False
    return ok
