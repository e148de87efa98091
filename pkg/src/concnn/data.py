"""Weekly panel ingestion, scaling and market-share computation.

A panel holds weekly sales counts, covariates and an availability mask for
``d`` products over ``n`` weeks.  Market shares are sales divided by a
strictly positive per-week total estimate ``s(t)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    ConflictingDuplicate,
    DataError,
    EmptyFile,
    InvalidSplit,
    LengthMismatch,
    MissingColumn,
    NegativeSales,
    NonPositiveOracleValue,
    WindowTooLarge,
)

#: lower clamp applied to every scaler value so that shares stay finite
SCALER_FLOOR = 1.0


@dataclass(frozen=True)
class ColumnSchema:
    """Maps logical panel columns onto CSV column names."""

    product_id: str = "product_id"
    week: str = "week"
    sales: str = "sales"
    covariates: tuple[str, ...] = ()
    s_oracle: str | None = None


@dataclass(frozen=True)
class PanelDataset:
    """Dense weekly panel of sales counts and covariates.

    ``sales`` is a (d, n) integer matrix, ``covariates`` a (d, n, p) float
    array and ``available`` a (d, n) boolean mask.  Cells with
    ``available == False`` carry zero sales.
    """

    product_ids: tuple[str, ...]
    weeks: np.ndarray
    sales: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    available: np.ndarray
    s_oracle: np.ndarray | None = None

    def __post_init__(self) -> None:
        d, n = self.sales.shape
        if len(self.product_ids) != d or len(self.weeks) != n:
            raise DataError("panel dimensions are inconsistent")
        if self.covariates.shape[:2] != (d, n):
            raise DataError("covariate array shape mismatch")
        if self.available.shape != (d, n):
            raise DataError("availability mask shape mismatch")
        if np.any(self.sales < 0):
            raise NegativeSales("negative sales count in panel")
        if np.any(self.sales[~self.available] != 0):
            raise DataError("unavailable cells must have zero sales")
        if np.any(np.diff(self.weeks) <= 0):
            raise DataError("weeks must be strictly increasing")
        if np.any(~np.isfinite(self.covariates[self.available])):
            raise DataError("covariates undefined where product is available")

    @property
    def d(self) -> int:
        return self.sales.shape[0]

    @property
    def n(self) -> int:
        return self.sales.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[2]

    def totals(self) -> np.ndarray:
        """Total sales per week, shape (n,)."""
        return self.sales.sum(axis=0)


class ScalerMethod(enum.Enum):
    ORACLE = "oracle"
    TRAILING_MOVING_AVERAGE = "trailing_moving_average"
    TOTAL_ACTUAL = "total_actual"


@dataclass(frozen=True)
class Scaler:
    """Strictly positive per-week total-sales estimate s(t)."""

    values: np.ndarray
    method: ScalerMethod
    window: int | None = None

    def __post_init__(self) -> None:
        if np.any(self.values <= 0) or np.any(~np.isfinite(self.values)):
            raise DataError("scaler values must be strictly positive and finite")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def ratio_bound(self) -> float:
        """Max week-over-week ratio s(t+1)/s(t)."""
        if self.n < 2:
            return 1.0
        return float(np.max(self.values[1:] / self.values[:-1]))

    @property
    def upper_bound(self) -> float:
        """R = max_t s(t)."""
        return float(np.max(self.values))


@dataclass(frozen=True)
class ShareMatrix:
    """Market shares y[i, t] = sales[i, t] / s(t), shape (d, n)."""

    shares: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.shares < 0) or np.any(~np.isfinite(self.shares)):
            raise DataError("shares must be finite and non-negative")


@dataclass(frozen=True)
class SplitSpec:
    """Exclusive week-index boundaries of the train/valid/test split."""

    train_end: int
    valid_end: int
    test_end: int

    def __post_init__(self) -> None:
        if not 0 < self.train_end < self.valid_end < self.test_end:
            raise InvalidSplit(
                f"need 0 < train_end < valid_end < test_end, got "
                f"{self.train_end}/{self.valid_end}/{self.test_end}"
            )


@dataclass(frozen=True)
class PanelView:
    """Contiguous week range [start, stop) of a panel.

    Lagged-feature construction may read shares before ``start``; the view
    only delimits which target weeks belong to it.
    """

    panel: PanelDataset
    start: int
    stop: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.stop <= self.panel.n:
            raise InvalidSplit(f"invalid view range [{self.start}, {self.stop})")

    def __len__(self) -> int:
        return self.stop - self.start

    @property
    def week_indices(self) -> range:
        return range(self.start, self.stop)


def load_panel(path: str, schema: ColumnSchema = ColumnSchema()) -> PanelDataset:
    """Load a dense panel from a CSV file.

    (product, week) pairs absent from the file become unavailable with zero
    sales.  Duplicated rows are collapsed when identical; conflicting
    duplicates are an error.
    """
    df = pd.read_csv(path)
    if df.empty:
        raise EmptyFile(f"no data rows in {path}")
    required = [schema.product_id, schema.week, schema.sales, *schema.covariates]
    if schema.s_oracle is not None:
        required.append(schema.s_oracle)
    for col in required:
        if col not in df.columns:
            raise MissingColumn(f"column {col!r} not found in {path}")

    df = df.drop_duplicates()
    dup = df.duplicated(subset=[schema.product_id, schema.week], keep=False)
    if dup.any():
        bad = df.loc[dup, [schema.product_id, schema.week]].iloc[0]
        raise ConflictingDuplicate(
            f"conflicting rows for product {bad[schema.product_id]!r}, "
            f"week {bad[schema.week]}"
        )
    if (pd.to_numeric(df[schema.sales]) < 0).any():
        raise NegativeSales("negative sales value in file")

    product_ids = tuple(sorted(df[schema.product_id].astype(str).unique()))
    week_values = np.sort(df[schema.week].unique())
    d, n, p = len(product_ids), len(week_values), len(schema.covariates)

    prod_idx = {pid: i for i, pid in enumerate(product_ids)}
    week_idx = {w: t for t, w in enumerate(week_values)}

    sales = np.zeros((d, n), dtype=np.int64)
    covariates = np.full((d, n, p), np.nan)
    available = np.zeros((d, n), dtype=bool)
    s_oracle = np.full(n, np.nan) if schema.s_oracle is not None else None

    for row in df.itertuples(index=False):
        r = row._asdict() if hasattr(row, "_asdict") else dict(zip(df.columns, row))
        i = prod_idx[str(r[schema.product_id])]
        t = week_idx[r[schema.week]]
        sales[i, t] = int(r[schema.sales])
        available[i, t] = True
        for j, c in enumerate(schema.covariates):
            covariates[i, t, j] = float(r[c])
        if s_oracle is not None:
            s_oracle[t] = float(r[schema.s_oracle])

    # ISO-date weeks are mapped to their rank; integer weeks keep their value
    if np.issubdtype(week_values.dtype, np.integer):
        weeks = week_values.astype(np.int64)
    else:
        weeks = np.arange(n, dtype=np.int64)

    return PanelDataset(
        product_ids=product_ids,
        weeks=weeks,
        sales=sales,
        covariates=covariates,
        covariate_names=schema.covariates,
        available=available,
        s_oracle=s_oracle,
    )


def compute_scaler(
    data: PanelDataset,
    method: ScalerMethod = ScalerMethod.TRAILING_MOVING_AVERAGE,
    *,
    window: int = 8,
    oracle_values: np.ndarray | None = None,
    floor: float = SCALER_FLOOR,
) -> Scaler:
    """Compute the per-week total-sales estimate s(t).

    ``ORACLE`` returns the supplied values verbatim, ``TOTAL_ACTUAL`` the
    actual weekly totals, ``TRAILING_MOVING_AVERAGE`` the mean total over the
    previous ``window`` weeks (early weeks fall back to the weeks seen so
    far).  All but the oracle are clamped below at ``floor``.
    """
    if method is ScalerMethod.ORACLE:
        values = oracle_values if oracle_values is not None else data.s_oracle
        if values is None:
            raise NonPositiveOracleValue("no oracle scaler values provided")
        values = np.asarray(values, dtype=float)
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise NonPositiveOracleValue("oracle scaler values must be > 0")
        return Scaler(values=values, method=method)

    totals = data.totals().astype(float)
    if method is ScalerMethod.TOTAL_ACTUAL:
        return Scaler(values=np.maximum(totals, floor), method=method)

    if method is ScalerMethod.TRAILING_MOVING_AVERAGE:
        if window < 1:
            raise WindowTooLarge("window must be >= 1")
        if window > data.n:
            raise WindowTooLarge(f"window {window} exceeds panel length {data.n}")
        values = np.empty(data.n)
        for t in range(data.n):
            prev = totals[max(0, t - window):t]
            if len(prev) == 0:
                # no history at the first week: use the week itself
                prev = totals[:1]
            values[t] = prev.mean()
        return Scaler(values=np.maximum(values, floor), method=method, window=window)

    raise ValueError(f"unknown scaler method {method}")


def market_shares(data: PanelDataset, scaler: Scaler) -> ShareMatrix:
    """y[i, t] = sales[i, t] / s(t)."""
    if scaler.n != data.n:
        raise LengthMismatch(f"scaler length {scaler.n} != panel length {data.n}")
    return ShareMatrix(shares=data.sales / scaler.values[np.newaxis, :])


def write_panel_csv(data: PanelDataset, path: str) -> None:
    """Write the panel back to the ingestion CSV format (available cells only)."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["product_id", "week", "sales", *data.covariate_names])
        for i, pid in enumerate(data.product_ids):
            for t in range(data.n):
                if not data.available[i, t]:
                    continue
                writer.writerow([
                    pid, int(data.weeks[t]), int(data.sales[i, t]),
                    *[repr(float(v)) for v in data.covariates[i, t]],
                ])


def split(data: PanelDataset, spec: SplitSpec) -> tuple[PanelView, PanelView, PanelView]:
    """Split the panel into contiguous train/valid/test views."""
    if spec.test_end > data.n:
        raise InvalidSplit(f"test_end {spec.test_end} exceeds panel length {data.n}")
    return (
        PanelView(data, 0, spec.train_end),
        PanelView(data, spec.train_end, spec.valid_end),
        PanelView(data, spec.valid_end, spec.test_end),
    )
