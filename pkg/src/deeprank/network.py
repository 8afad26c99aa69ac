"""Dense ReLU network with a hand-written reverse pass.

Row-major convention: a batch ``X`` has shape ``(n, p)`` and layer ``i``
computes ``Z_i = A_i @ W_i.T + b_i`` with ``W_i`` of shape ``(p_{i+1}, p_i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    hidden_widths: tuple[int, ...] = ()
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be positive, got {self.hidden_widths}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def depth(self) -> int:
        return len(self.hidden_widths)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, 1)


@dataclass
class NetworkParams:
    """Weights ``W_0..W_L`` and biases ``b_0..b_L`` of the network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have the same number of layers")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"inconsistent layer shapes {w.shape} / {b.shape}")
        for w_next, w in zip(self.weights[1:], self.weights[:-1]):
            if w_next.shape[1] != w.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W_0, b_0, W_1, b_1, ...]`` (shared, not copied)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "NetworkParams":
        return cls(weights=list(arrays[0::2]), biases=list(arrays[1::2]))

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: "NetworkParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class ForwardCache:
    """Activations retained by :func:`forward_batch` for :func:`backward`."""

    params: NetworkParams
    inputs: list[np.ndarray]  # input to each layer (after dropout where applied)
    pre_activations: list[np.ndarray]  # hidden pre-activations Z_0..Z_{L-1}
    masks: list[np.ndarray | None] = field(default_factory=list)


def init_params(arch: NetworkArchitecture, seed: int) -> NetworkParams:
    """ReLU-scaled uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def _check_input(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(
            f"expected input with {params.input_dim} columns, got shape {X.shape}"
        )
    return X


def forward(params: NetworkParams, x) -> float:
    """Evaluate the network on a single input vector (eval mode)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    out, _ = forward_batch(params, x[None, :])
    return float(out[0])


def forward_batch(
    params: NetworkParams,
    X,
    dropout_rate: float = 0.0,
    dropout_seed: int | np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on the rows of ``X``.

    With ``dropout_seed`` given and ``dropout_rate > 0`` the call is in train
    mode: each hidden activation is zeroed with probability ``dropout_rate``
    and survivors are scaled by ``1 / (1 - dropout_rate)``. The input layer is
    never dropped. Without a seed the call is in eval mode.

    Returns the output vector of length ``n`` and the cache used by
    :func:`backward`.
    """
    X = _check_input(params, X)
    train = dropout_seed is not None and dropout_rate > 0.0
    rng = np.random.default_rng(dropout_seed) if train else None
    keep = 1.0 - dropout_rate

    a = X
    inputs, pre, masks = [], [], []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        if i == n_layers - 1:
            return z[:, 0], ForwardCache(params, inputs, pre, masks)
        pre.append(z)
        a = np.maximum(z, 0.0)
        if train:
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
            masks.append(mask)
        else:
            masks.append(None)
    raise AssertionError("unreachable")


def backward(params: NetworkParams, cache: ForwardCache, grad_out) -> NetworkParams:
    """Reverse-mode gradient of ``sum_k grad_out[k] * f(x_k)`` w.r.t. the parameters.

    The ReLU derivative is taken as 0 at exactly 0.
    """
    if cache.params is not params:
        raise ValueError("activation cache was produced by different parameters")
    g = np.asarray(grad_out, dtype=np.float64).reshape(-1, 1)
    if g.shape[0] != cache.inputs[0].shape[0]:
        raise ValueError(
            f"gradient has {g.shape[0]} entries but the cache holds {cache.inputs[0].shape[0]} rows"
        )
    n_layers = len(params.weights)
    grad_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = g.T @ cache.inputs[i]
        grad_b[i] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ params.weights[i]
        if cache.masks[i - 1] is not None:
            g = g * cache.masks[i - 1]
        g = g * (cache.pre_activations[i - 1] > 0.0)
    return NetworkParams(grad_w, grad_b)


def first_layer_norms(params: NetworkParams) -> np.ndarray:
    """Euclidean norm of each first-layer column, one entry per input."""
    return np.sqrt(np.sum(params.weights[0] ** 2, axis=0))


# -- checkpoint persistence ---------------------------------------------------


def checkpoint_dict(
    arch: NetworkArchitecture, params: NetworkParams, seed: int | None = None, **extra
) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": {
            "input_dim": arch.input_dim,
            "hidden_widths": list(arch.hidden_widths),
            "dropout_rate": arch.dropout_rate,
        },
        # json writes floats with repr(), which round-trips float64 exactly
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "seed": seed,
    }
    doc.update(extra)
    return doc


def save_checkpoint(path, arch: NetworkArchitecture, params: NetworkParams, seed=None, **extra):
    Path(path).write_text(json.dumps(checkpoint_dict(arch, params, seed, **extra), indent=1))


def params_from_checkpoint(doc: dict) -> tuple[NetworkArchitecture, NetworkParams]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    a = doc["architecture"]
    arch = NetworkArchitecture(
        input_dim=int(a["input_dim"]),
        hidden_widths=tuple(a["hidden_widths"]),
        dropout_rate=float(a["dropout_rate"]),
    )
    params = NetworkParams(
        [np.array(w, dtype=np.float64).reshape(-1, s_in) for w, s_in in zip(doc["weights"], arch.layer_sizes[:-1])],
        [np.array(b, dtype=np.float64).reshape(-1) for b in doc["biases"]],
    )
    if [w.shape for w in params.weights] != [
        (o, i) for i, o in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:])
    ]:
        raise ValueError("checkpoint weights do not match its architecture")
    if not params.is_finite():
        raise ValueError("checkpoint contains non-finite parameters")
    return arch, params


def load_checkpoint(path) -> tuple[NetworkArchitecture, NetworkParams, dict]:
    doc = json.loads(Path(path).read_text())
    arch, params = params_from_checkpoint(doc)
    return arch, params, doc
