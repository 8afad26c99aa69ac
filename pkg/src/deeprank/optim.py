"""Adam with decoupled weight decay, step learning-rate decay, group prox, early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkParams


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 3.0
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 50
    patience: int = 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_every < 1 or self.patience < 1:
            raise ValueError("lr_decay_every and patience must be positive integers")


@dataclass
class OptimizerState:
    first_moment: NetworkParams
    second_moment: NetworkParams
    step_count: int = 0
    current_lr: float = 1e-3

    @classmethod
    def fresh(cls, params: NetworkParams, cfg: OptimizerConfig) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0, cfg.learning_rate)


def lr_at_epoch(cfg: OptimizerConfig, epochs_completed: int) -> float:
    """Step schedule ``lr * factor ** floor(E / every)``."""
    return cfg.learning_rate * cfg.lr_decay_factor ** (epochs_completed // cfg.lr_decay_every)


def adam_step(
    state: OptimizerState,
    params: NetworkParams,
    grads: NetworkParams,
    cfg: OptimizerConfig,
    decay_first_layer: bool = True,
) -> tuple[NetworkParams, OptimizerState]:
    """One descent step; returns new params and state, inputs are left untouched.

    Weight decay is decoupled: parameters are first scaled by
    ``1 - lr * weight_decay`` (first-layer weights skipped when
    ``decay_first_layer`` is false), then moved by the bias-corrected Adam
    direction.
    """
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if [a.shape for a in p_arrays] != [g.shape for g in g_arrays]:
        raise ValueError("gradient shapes do not match parameter shapes")
    m_arrays, v_arrays = state.first_moment.arrays(), state.second_moment.arrays()
    if [a.shape for a in m_arrays] != [a.shape for a in p_arrays]:
        raise ValueError("optimizer state shapes do not match parameter shapes")

    lr = state.current_lr
    t = state.step_count + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    new_p, new_m, new_v = [], [], []
    for k, (p, g, m, v) in enumerate(zip(p_arrays, g_arrays, m_arrays, v_arrays)):
        if cfg.weight_decay and (decay_first_layer or k != 0):
            p = p * (1.0 - lr * cfg.weight_decay)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return NetworkParams.from_arrays(new_p), OptimizerState(
        NetworkParams.from_arrays(new_m), NetworkParams.from_arrays(new_v), t, lr
    )


def block_soft_threshold(w: np.ndarray, threshold: float) -> np.ndarray:
    """Proximal map of ``threshold * ||w||_2`` applied to the columns of ``w``."""
    norms = np.sqrt(np.sum(w * w, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > threshold, 1.0 - threshold / norms, 0.0)
    return w * factor


def group_prox(params: NetworkParams, lam: float, step: float) -> NetworkParams:
    """Shrink each first-layer column by ``step * lam`` in norm; other layers unchanged."""
    if lam == 0:
        return params
    weights = list(params.weights)
    weights[0] = block_soft_threshold(weights[0], step * lam)
    return NetworkParams(weights, list(params.biases))


@dataclass
class EarlyStopping:
    """Patience bookkeeping for a higher-is-better validation score."""

    patience: int
    best_score: float = -np.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    history: list[float] = field(default_factory=list)

    def update(self, score: float, epoch: int) -> bool:
        """Record ``score``; returns True when training should stop.

        Equal scores count as non-improvement.
        """
        self.history.append(score)
        stop, best, since, improved = early_stop_update(
            self.best_score, score, self.epochs_since_best, self.patience
        )
        self.best_score, self.epochs_since_best = best, since
        if improved:
            self.best_epoch = epoch
        return stop


def early_stop_update(best_so_far: float, score: float, epochs_since_best: int, patience: int):
    """Returns ``(stop, best, epochs_since_best, improved)``."""
    if score > best_so_far:
        return False, score, 0, True
    since = epochs_since_best + 1
    return since >= patience, best_so_far, since, False
