"""Dataset representation, CSV ingestion, and synthetic data generation.

A :class:`Dataset` holds a fully observed response, a covariate matrix
with NaN at unobserved cells, and the boolean observation mask that is
authoritative for missingness. Arrays are frozen after construction so
datasets can be shared read-only across parallel chains.

Rows with every covariate missing are rejected on the ingestion paths
(:func:`load_dataset`, :func:`simulate_dataset`): they carry no
information about the covariate distribution and they wreck the pattern
bookkeeping. Constructing a :class:`Dataset` directly does not apply the
row screen, which keeps degenerate fixtures available to analytic tests.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .gauss import cholesky_logdet

__all__ = [
    "DataError",
    "Dataset",
    "MissingnessPattern",
    "ModelIndex",
    "Mcar",
    "Mar",
    "SimConfig",
    "load_dataset",
    "serialize_dataset",
    "group_patterns",
    "simulate_dataset",
]


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


@dataclass(frozen=True)
class ModelIndex:
    """Subset of covariates encoded as a 0/1 tuple of length p."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("model bits must be 0 or 1")

    @classmethod
    def null(cls, p: int) -> "ModelIndex":
        return cls(bits=(0,) * p)

    @classmethod
    def full(cls, p: int) -> "ModelIndex":
        return cls(bits=(1,) * p)

    @classmethod
    def from_indices(cls, p: int, indices) -> "ModelIndex":
        bits = [0] * p
        for j in indices:
            bits[j] = 1
        return cls(bits=tuple(bits))

    @classmethod
    def from_int(cls, p: int, code: int) -> "ModelIndex":
        return cls(bits=tuple((code >> j) & 1 for j in range(p)))

    @property
    def p(self) -> int:
        return len(self.bits)

    @property
    def size(self) -> int:
        return sum(self.bits)

    def indices(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.bits))

    def as_int(self) -> int:
        return sum(b << j for j, b in enumerate(self.bits))

    def flip(self, j: int) -> "ModelIndex":
        bits = list(self.bits)
        bits[j] = 1 - bits[j]
        return ModelIndex(bits=tuple(bits))

    def label(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class MissingnessPattern:
    """Rows sharing one observed-column index set."""

    observed: tuple[int, ...]
    rows: tuple[int, ...]


@dataclass
class Dataset:
    y: np.ndarray
    x: np.ndarray
    mask: np.ndarray
    names: tuple[str, ...]
    response_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.array(self.x, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent shapes: y {y.shape}, x {x.shape}")
        if mask.shape != x.shape:
            raise DataError(f"mask shape {mask.shape} does not match x shape {x.shape}")
        if len(self.names) != x.shape[1]:
            raise DataError("number of column names does not match p")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise DataError(f"response has a missing or non-finite value at row {bad + 1}")
        if not np.all(np.isfinite(x[mask])):
            raise DataError("observed covariate cells must be finite")
        x[~mask] = np.nan
        obs_per_col = mask.sum(axis=0)
        if np.any(obs_per_col < 2):
            j = int(np.flatnonzero(obs_per_col < 2)[0])
            raise DataError(
                f"column '{self.names[j]}' has {int(obs_per_col[j])} observed values; need at least 2"
            )
        for arr in (y, x, mask):
            arr.setflags(write=False)
        self.y = y
        self.x = x
        self.mask = mask
        self.names = tuple(self.names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def complete_x(self) -> np.ndarray:
        if not self.is_complete():
            raise DataError("dataset has missing cells; complete_x needs complete data")
        return np.array(self.x)

    def observed_column_means(self) -> np.ndarray:
        return np.array([self.x[self.mask[:, j], j].mean() for j in range(self.p)])

    def observed_column_variances(self) -> np.ndarray:
        return np.array([self.x[self.mask[:, j], j].var(ddof=1) for j in range(self.p)])

    def missing_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.mask)
        return list(zip(rows.tolist(), cols.tolist()))


def _reject_empty_rows(mask: np.ndarray) -> None:
    row_obs = mask.sum(axis=1)
    if np.any(row_obs == 0):
        i = int(np.flatnonzero(row_obs == 0)[0])
        raise DataError(f"row {i + 1} has no observed covariates")


def load_dataset(csv_text: str, na_token: str = "NA", response_column: str = "y") -> Dataset:
    """Parse a header-rowed CSV into a :class:`Dataset`.

    Cells equal to ``na_token`` are flagged missing. The response column
    must be complete; rows with every covariate missing are rejected.
    """
    reader = csv.reader(io.StringIO(csv_text))
    rows = [row for row in reader if row]
    if not rows:
        raise DataError("empty CSV input")
    header = [h.strip() for h in rows[0]]
    if response_column not in header:
        raise DataError(f"response column '{response_column}' not found in header {header}")
    r_idx = header.index(response_column)
    names = tuple(h for i, h in enumerate(header) if i != r_idx)
    y_vals: list[float] = []
    x_vals: list[list[float]] = []
    mask_vals: list[list[bool]] = []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} cells; header has {len(header)}")
        cells = [c.strip() for c in row]
        if cells[r_idx] == na_token:
            raise DataError(f"missing response value at row {i}")
        try:
            y_vals.append(float(cells[r_idx]))
        except ValueError:
            raise DataError(
                f"non-numeric cell at row {i}, column '{response_column}': {cells[r_idx]!r}"
            ) from None
        xs: list[float] = []
        ms: list[bool] = []
        for j, c in enumerate(cells):
            if j == r_idx:
                continue
            col = header[j]
            if c == na_token:
                xs.append(np.nan)
                ms.append(False)
            else:
                try:
                    xs.append(float(c))
                except ValueError:
                    raise DataError(
                        f"non-numeric cell at row {i}, column '{col}': {c!r}"
                    ) from None
                ms.append(True)
        x_vals.append(xs)
        mask_vals.append(ms)
    mask = np.asarray(mask_vals, dtype=bool)
    _reject_empty_rows(mask)
    return Dataset(
        y=np.asarray(y_vals),
        x=np.asarray(x_vals),
        mask=mask,
        names=names,
        response_name=response_column,
    )


def serialize_dataset(d: Dataset, na_token: str = "NA") -> str:
    """CSV text that :func:`load_dataset` maps back to the same numbers and mask."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([d.response_name, *d.names])
    for i in range(d.n):
        row = [repr(float(d.y[i]))]
        for j in range(d.p):
            row.append(repr(float(d.x[i, j])) if d.mask[i, j] else na_token)
        writer.writerow(row)
    return out.getvalue()


def group_patterns(d: Dataset) -> list[MissingnessPattern]:
    """Partition row indices by their observed-column set.

    The fully observed pattern, when present, comes first; the rest keep
    first-appearance order. The partition is cached on the dataset (its
    arrays are frozen, so the cache cannot go stale).
    """
    cached = getattr(d, "_patterns_cache", None)
    if cached is not None:
        return cached
    seen: dict[tuple[int, ...], list[int]] = {}
    for i in range(d.n):
        key = tuple(np.flatnonzero(d.mask[i]).tolist())
        seen.setdefault(key, []).append(i)
    full = tuple(range(d.p))
    patterns = []
    if full in seen:
        patterns.append(MissingnessPattern(observed=full, rows=tuple(seen.pop(full))))
    for key, rows in seen.items():
        patterns.append(MissingnessPattern(observed=key, rows=tuple(rows)))
    d._patterns_cache = patterns
    return patterns


@dataclass(frozen=True)
class Mcar:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"MCAR rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class Mar:
    """Single-driver logistic missingness: cell (i, j) with j != driver goes
    missing with probability expit(intercept + slope * x[i, driver])."""

    driver: int
    intercept: float
    slope: float


Mechanism = Union[Mcar, Mar]


@dataclass(frozen=True)
class SimConfig:
    n: int
    p: int
    mu_true: np.ndarray
    sigma_true: np.ndarray
    gamma_true: ModelIndex
    alpha_true: float
    beta_true: np.ndarray
    sigma2_true: float
    mechanism: Mechanism
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "mu_true", np.asarray(self.mu_true, dtype=float))
        object.__setattr__(self, "sigma_true", np.asarray(self.sigma_true, dtype=float))
        object.__setattr__(self, "beta_true", np.asarray(self.beta_true, dtype=float))
        if self.mu_true.shape != (self.p,) or self.beta_true.shape != (self.p,):
            raise DataError("mu_true and beta_true must have length p")
        if self.sigma_true.shape != (self.p, self.p):
            raise DataError("sigma_true must be p x p")
        try:
            cholesky_logdet(self.sigma_true)
        except ValueError as exc:
            raise DataError(f"sigma_true is not SPD: {exc}") from None
        support = tuple(int(b != 0.0) for b in self.beta_true)
        if support != self.gamma_true.bits:
            raise DataError("beta_true support must equal gamma_true")
        if self.sigma2_true <= 0:
            raise DataError("sigma2_true must be positive")
        if isinstance(self.mechanism, Mar):
            if not 0 <= self.mechanism.driver < self.p:
                raise DataError("MAR driver column out of range")


def _draw_mask(cfg: SimConfig, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n, p = x.shape
    if isinstance(cfg.mechanism, Mcar):
        rate = cfg.mechanism.rate
        if rate == 0.0:
            return np.ones((n, p), dtype=bool)
        if p == 1:
            raise DataError("MCAR with p = 1 would mask entire rows; not supported")
        mask = np.empty((n, p), dtype=bool)
        for i in range(n):
            # Redraw rows that would lose every covariate.
            while True:
                row = rng.random(p) >= rate
                if row.any():
                    mask[i] = row
                    break
        return mask
    mech = cfg.mechanism
    lin = mech.intercept + mech.slope * x[:, mech.driver]
    prob = 1.0 / (1.0 + np.exp(-lin))
    mask = rng.random((n, p)) >= prob[:, None]
    mask[:, mech.driver] = True
    return mask


def simulate_dataset(cfg: SimConfig) -> tuple[Dataset, dict]:
    """Draw covariate rows from N(mu, Sigma), the response from the linear
    model, and a mask from the configured mechanism. Deterministic given
    the seed."""
    rng = np.random.default_rng(cfg.seed)
    lower, _ = cholesky_logdet(cfg.sigma_true)
    z = rng.standard_normal((cfg.n, cfg.p))
    x = cfg.mu_true + z @ lower.T
    eps = rng.standard_normal(cfg.n) * np.sqrt(cfg.sigma2_true)
    y = cfg.alpha_true + x @ cfg.beta_true + eps
    mask = _draw_mask(cfg, x, rng)
    _reject_empty_rows(mask)
    names = tuple(f"x{j + 1}" for j in range(cfg.p))
    d = Dataset(y=y, x=x, mask=mask, names=names)
    truth = {
        "n": cfg.n,
        "p": cfg.p,
        "gamma_true": cfg.gamma_true.label(),
        "alpha_true": cfg.alpha_true,
        "beta_true": cfg.beta_true.tolist(),
        "sigma2_true": cfg.sigma2_true,
        "mu_true": cfg.mu_true.tolist(),
        "sigma_true": cfg.sigma_true.tolist(),
        "mechanism": _mechanism_dict(cfg.mechanism),
        "seed": cfg.seed,
    }
    return d, truth


def _mechanism_dict(mech: Mechanism) -> dict:
    if isinstance(mech, Mcar):
        return {"kind": "mcar", "rate": mech.rate}
    return {
        "kind": "mar",
        "driver": mech.driver,
        "intercept": mech.intercept,
        "slope": mech.slope,
    }


def truth_to_json(truth: dict) -> str:
    return json.dumps(truth, indent=2, sort_keys=True)
