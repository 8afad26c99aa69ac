"""Simulation designs M1-M6, CSV ingestion, splitting and standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

N_IMPORTANT = 15
MODELS = ("M1", "M2", "M3", "M4", "M5", "M6")
DEFAULT_ERROR = {"M1": "normal", "M2": "normal", "M3": "contaminated",
                 "M4": "contaminated", "M5": "normal", "M6": "contaminated"}


class DataError(ValueError):
    """Malformed or inconsistent data."""


@dataclass
class Truth:
    important: tuple[int, ...]  # 0-based column indices
    signal: np.ndarray | None = None  # noiseless systematic component per row
    model: str | None = None


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    delta: np.ndarray | None = None
    names: list[str] | None = None
    truth: Truth | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.size:
            raise DataError(f"X has shape {self.X.shape} but y has {self.y.size} entries")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("X and y must be finite")
        if self.delta is not None:
            self.delta = np.asarray(self.delta).ravel()
            if self.delta.size != self.y.size:
                raise DataError("delta length differs from y")
            if not np.all((self.delta == 0) | (self.delta == 1)):
                raise DataError("delta must contain only 0 and 1")
            self.delta = self.delta.astype(np.int64)
        if self.names is None:
            self.names = [f"x{j + 1}" for j in range(self.p)]
        elif len(self.names) != self.p:
            raise DataError(f"{len(self.names)} names for {self.p} columns")
        if self.truth is not None and any(not 0 <= q < self.p for q in self.truth.important):
            raise DataError("truth.important indexes outside the design")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def censored(self) -> bool:
        return self.delta is not None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        truth = self.truth
        if truth is not None and truth.signal is not None:
            truth = replace(truth, signal=truth.signal[idx])
        return Dataset(
            self.X[idx], self.y[idx], None if self.delta is None else self.delta[idx],
            list(self.names), truth,
        )


@dataclass(frozen=True)
class SimSpec:
    model: str = "M1"
    n: int = 1000
    p: int = 15
    rho: float = 0.3
    error: str | None = None  # None picks the model's own error design
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {', '.join(MODELS)}")
        if self.p < N_IMPORTANT:
            raise ValueError(f"models use X1..X15, so p must be at least 15 (got {self.p})")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.error not in (None, "normal", "contaminated"):
            raise ValueError(f"unknown error kind {self.error!r}")

    @property
    def error_kind(self) -> str:
        return self.error or DEFAULT_ERROR[self.model]


# -- generators ----------------------------------------------------------------


def gen_ar_gaussian(n: int, p: int, rho: float, seed) -> np.ndarray:
    """Rows from ``N(0, Sigma)`` with ``Sigma_ij = rho**|i-j|`` via the AR(1) recursion."""
    if not -1 < rho < 1:
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")
    z = np.random.default_rng(seed).standard_normal((n, p))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    scale = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + scale * z[:, j]
    return x


def gen_error(kind: str, n: int, seed) -> np.ndarray:
    """Standard normal, or the 0.9 N(0,1) + 0.1 Cauchy(0,1) mixture."""
    rng = np.random.default_rng(seed)
    if kind == "normal":
        return rng.standard_normal(n)
    if kind == "contaminated":
        normal = rng.standard_normal(n)
        cauchy = np.tan(np.pi * (rng.random(n) - 0.5))
        return np.where(rng.random(n) < 0.9, normal, cauchy)
    raise ValueError(f"unknown error kind {kind!r}")


def coefficients(model: str, p: int) -> np.ndarray:
    b = np.zeros(p)
    if model in ("M1", "M2"):
        b[:8] = 0.5
        b[8:15] = -0.5
    elif model == "M5":
        b[:15] = [-0.9, 0.8, -0.7, 0.6, -0.5, 0.4, -0.3, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, -0.8, 0.9]
    else:
        raise ValueError(f"{model} is not a single-index model")
    return b


def m2_transform(u):
    """``D(u) = u I(u > 0) + 3u I(u < 0)``."""
    u = np.asarray(u, dtype=np.float64)
    return np.where(u > 0, u, 3.0 * u)


def m5_root(u):
    """``sqrt(|u|)``; keeps the M5 index total when ``X'b < 0``."""
    return np.sqrt(np.abs(np.asarray(u, dtype=np.float64)))


def systematic_component(model: str, X: np.ndarray) -> np.ndarray:
    """Noiseless part of each model, before the error enters.

    For M2 this is the argument of ``D`` without the error; for M5 it is the
    response without the error.
    """
    X = np.asarray(X, dtype=np.float64)
    x = [None] + [X[:, j] for j in range(N_IMPORTANT)]  # x[1]..x[15]
    if model == "M1":
        u = X @ coefficients("M1", X.shape[1])
        return u + np.sin(u**2)
    if model == "M2":
        u = X @ coefficients("M2", X.shape[1])
        return 1.0 + u + np.cos(u**2) + np.exp(1.0 - u**2)
    if model == "M3":
        return (
            0.5 * x[1] ** 2 + x[2] * x[3] + (x[4] - x[5]) ** 2 / 3.0
            - 1.0 / (x[6] ** 2 + 1.0) - 1.0 / (x[7] ** 2 + 1.0)
            - np.sin(x[8]) + np.sin(x[9] * x[10])
            + np.exp(1.0 / (x[11] ** 2 + 1.0)) + np.exp(0.5 * np.abs(x[12]))
            - np.exp(0.5 * x[13]) + np.tanh(x[14]) - np.tanh(1.0 / x[15])
        )
    if model == "M4":
        return (
            0.5 * (x[1] ** 2 + x[2] ** 2) + x[3] ** 2 / (2.0 + x[4] ** 2)
            - 1.0 / (0.5 + x[5]) + np.sin(x[6] + x[7]) - np.sin(x[8] ** 2)
            + (x[9] ** 2 + x[10] ** 2) / 3.0 + np.exp(0.5 * x[11])
            - np.exp(1.0 / (1.0 + x[12] ** 2)) + np.tanh(x[13]) + np.abs(x[14] * x[15])
        )
    if model == "M5":
        u = X @ coefficients("M5", X.shape[1])
        return m5_root(u) + np.sin(u) - 1.0
    if model == "M6":
        return (
            0.5 * (x[1] ** 2 + x[2] ** 2 + x[3] ** 2) + np.sin(x[4] + x[5])
            - np.exp((x[6] * x[7] + x[8]) / 3.0) + np.exp(1.0 / (x[9] ** 2 + 1.0))
            + np.exp(0.5 * x[10]) + np.tanh(x[11] * x[12])
            - x[13] / (0.5 + x[14] ** 2 + x[15] ** 2)
        )
    raise ValueError(f"unknown model {model!r}")


def gen_model(spec: SimSpec) -> Dataset:
    """Draw one dataset from the simulation design ``spec``."""
    ss = np.random.SeedSequence(spec.seed)
    s_x, s_eps, s_cens = ss.spawn(3)
    X = gen_ar_gaussian(spec.n, spec.p, spec.rho, s_x)
    eps = gen_error(spec.error_kind, spec.n, s_eps)
    signal = systematic_component(spec.model, X)
    delta = None
    if spec.model == "M2":
        y = m2_transform(signal + eps)
    elif spec.model == "M5":
        # censoring acts on the displayed response scale; this gives the ~20% rate
        t = signal + eps / np.sqrt(2.0)
        c = np.random.default_rng(s_cens).chisquare(2, spec.n)
        y, delta = np.minimum(t, c), (t <= c).astype(np.int64)
    elif spec.model == "M6":
        t = signal + eps
        c = np.random.default_rng(s_cens).chisquare(6, spec.n)
        y, delta = np.minimum(t, c), (t <= c).astype(np.int64)
    else:
        y = signal + eps
    truth = Truth(important=tuple(range(N_IMPORTANT)), signal=signal, model=spec.model)
    return Dataset(X, y, delta, truth=truth)


# -- CSV -----------------------------------------------------------------------


def save_csv(ds: Dataset, path) -> None:
    header = list(ds.names) + ["y"] + (["delta"] if ds.delta is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]] + [repr(float(ds.y[i]))]
            if ds.delta is not None:
                row.append(str(int(ds.delta[i])))
            w.writerow(row)


def load_csv(path) -> Dataset:
    """Read feature columns, then ``y``, then an optional ``delta`` column."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "y" not in header:
        raise DataError(f"{path}: header has no 'y' column")
    y_col = header.index("y")
    has_delta = "delta" in header
    if has_delta and header.index("delta") != y_col + 1:
        raise DataError(f"{path}: 'delta' must directly follow 'y'")
    if len(header) != y_col + 1 + has_delta:
        raise DataError(f"{path}: unexpected columns after 'y'/'delta'")
    if y_col == 0:
        raise DataError(f"{path}: no feature columns")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            parsed = [float(c) for c in row]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in parsed):
            raise DataError(f"{path}:{lineno}: missing or non-finite value")
        values.append(parsed)
    if not values:
        raise DataError(f"{path}: no data rows")
    arr = np.array(values)
    delta = None
    if has_delta:
        delta = arr[:, y_col + 1]
        if not np.all((delta == 0) | (delta == 1)):
            raise DataError(f"{path}: delta must be 0 or 1")
    return Dataset(arr[:, :y_col], arr[:, y_col], delta, names=header[:y_col])


# -- splitting and scaling -----------------------------------------------------


def split(ds: Dataset, fractions=(0.7, 0.1, 0.2), seed=0) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint train/valid/test split; rounding remainder goes to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_valid = int(math.floor(ds.n * fractions[1] + 1e-9))
    n_test = int(math.floor(ds.n * fractions[2] + 1e-9))
    n_train = ds.n - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise DataError(f"split of {ds.n} rows leaves a part empty")
    return (
        ds.subset(perm[:n_train]),
        ds.subset(perm[n_train:n_train + n_valid]),
        ds.subset(perm[n_train + n_valid:]),
    )


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise DataError("cannot standardize with an empty training set")
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        return cls(mean, np.where(sd > 0, sd, 1.0))

    def transform(self, ds: Dataset) -> Dataset:
        return replace(ds, X=(ds.X - self.mean) / self.scale)


def standardize(train: Dataset, *others: Dataset):
    """Center and scale columns with training statistics only.

    Returns ``(datasets, standardizer)`` where ``datasets`` holds the
    transformed ``train`` followed by ``others``.
    """
    st = Standardizer.fit(train.X)
    return [st.transform(d) for d in (train, *others)], st
