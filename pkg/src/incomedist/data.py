"""Income microdata ingestion and empirical CCDFs.

CSV survey data (column ``income``, optional ``weight``) becomes an
immutable sorted :class:`Dataset`; billionaire wealth records can be
converted to effective incomes and merged in to extend the covered
range, since surveys top-code or simply never reach the extreme tail.
Empirical complementary CDFs use the Weibull plotting position
1 - i/(n+1), generalized to weighted samples in a way that reduces
exactly to the unweighted formula when all weights are equal.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataFormatError,
    DomainError,
    EmptyDatasetError,
)

__all__ = [
    "Dataset",
    "BillionaireRecord",
    "EmpiricalCcdf",
    "CsvFormat",
    "load_incomes",
    "load_billionaires",
    "billionaire_effective_income",
    "merge_datasets",
    "empirical_ccdf",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sorted income sample with per-record weights."""

    values: np.ndarray
    weights: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise EmptyDatasetError("dataset has no records")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise DomainError("incomes must be finite and >= 0")
        if self.weights is None:
            weights = np.ones(values.size)
        else:
            weights = np.asarray(self.weights, dtype=float).ravel()
            if weights.shape != values.shape:
                raise DomainError(
                    f"{weights.size} weights for {values.size} values"
                )
            if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
                raise DomainError("weights must be finite and >= 0")
            if not weights.sum() > 0.0:
                raise DomainError("total weight must be positive")
        order = np.argsort(values, kind="stable")
        values = values[order]
        values.flags.writeable = False
        weights = weights[order]
        weights.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class BillionaireRecord:
    """One wealth-rank entry; the identifier is opaque and only for dedup."""

    wealth_usd: float
    name_hash: str

    def __post_init__(self):
        if not (isinstance(self.wealth_usd, (int, float)) and math.isfinite(self.wealth_usd)
                and self.wealth_usd > 0):
            raise DomainError(f"wealth_usd must be positive, got {self.wealth_usd!r}")
        object.__setattr__(self, "wealth_usd", float(self.wealth_usd))


@dataclass(frozen=True, eq=False)
class EmpiricalCcdf:
    """Plot-ready CCDF points: m strictly increasing, p strictly decreasing."""

    m: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).ravel()
        p = np.asarray(self.p, dtype=float).ravel()
        if m.size == 0 or m.shape != p.shape:
            raise DomainError("CCDF needs matching non-empty coordinate arrays")
        if not (np.all(np.isfinite(m)) and np.all(m >= 0.0)):
            raise DomainError("CCDF incomes must be finite and >= 0")
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise DomainError("CCDF probabilities must lie strictly in (0, 1)")
        if np.any(np.diff(m) <= 0.0) or np.any(np.diff(p) >= 0.0):
            raise DomainError("CCDF points must be strictly monotone")
        m.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "p", p)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.m.tolist(), self.p.tolist()))

    def __len__(self) -> int:
        return int(self.m.size)


@dataclass(frozen=True)
class CsvFormat:
    """Column naming for income CSVs; header is always file line 1."""

    income_column: str = "income"
    weight_column: str = "weight"
    label: str = ""


def _open_text(source):
    if isinstance(source, (str, bytes)) and not isinstance(source, bytes):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8")


def load_incomes(source, fmt: CsvFormat = CsvFormat()) -> tuple[Dataset, list[str]]:
    """Parse an income CSV into a Dataset plus per-row rejection diagnostics.

    ``source`` may be a path or an open (text or byte) stream.  The
    header must contain ``fmt.income_column``; ``fmt.weight_column`` is
    honored when present and defaults to weight 1 otherwise.  Rows whose
    income is missing, non-numeric, non-finite, or negative are skipped,
    each contributing one diagnostic string citing its file row number
    (the header is row 1).

    Raises
    ------
    DataFormatError
        If the income column is absent from the header.
    EmptyDatasetError
        If no valid rows remain.
    """
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None or fmt.income_column not in header:
            raise DataFormatError(
                f"missing required column {fmt.income_column!r} in header {header!r}"
            )
        has_weight = fmt.weight_column in header
        values: list[float] = []
        weights: list[float] = []
        diagnostics: list[str] = []
        for row_no, row in enumerate(reader, start=2):
            raw = row.get(fmt.income_column)
            try:
                value = float(raw)
            except (TypeError, ValueError):
                diagnostics.append(f"row {row_no}: unreadable income {raw!r}, skipped")
                continue
            if not math.isfinite(value) or value < 0.0:
                diagnostics.append(
                    f"row {row_no}: income must be finite and >= 0, got {raw}, skipped"
                )
                continue
            weight = 1.0
            if has_weight:
                raw_w = row.get(fmt.weight_column)
                try:
                    weight = float(raw_w)
                except (TypeError, ValueError):
                    diagnostics.append(f"row {row_no}: unreadable weight {raw_w!r}, skipped")
                    continue
                if not math.isfinite(weight) or weight < 0.0:
                    diagnostics.append(
                        f"row {row_no}: weight must be finite and >= 0, got {raw_w}, skipped"
                    )
                    continue
            values.append(value)
            weights.append(weight)
    finally:
        if fh is not source:
            fh.close()
    if not values:
        raise EmptyDatasetError("no valid income rows" + (f"; first issue: {diagnostics[0]}" if diagnostics else ""))
    ds = Dataset(values=np.array(values), weights=np.array(weights), label=fmt.label)
    return ds, diagnostics


def load_billionaires(source) -> tuple[list[BillionaireRecord], list[str]]:
    """Parse a billionaire CSV (column ``wealth_usd``, optional ``name``)."""
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None or "wealth_usd" not in header:
            raise DataFormatError(
                f"missing required column 'wealth_usd' in header {header!r}"
            )
        records: list[BillionaireRecord] = []
        diagnostics: list[str] = []
        for row_no, row in enumerate(reader, start=2):
            raw = row.get("wealth_usd")
            try:
                wealth = float(raw)
            except (TypeError, ValueError):
                diagnostics.append(f"row {row_no}: unreadable wealth {raw!r}, skipped")
                continue
            if not math.isfinite(wealth) or wealth <= 0.0:
                diagnostics.append(
                    f"row {row_no}: wealth must be positive, got {raw}, skipped"
                )
                continue
            name = (row.get("name") or f"row{row_no}").strip()
            digest = hashlib.sha256(name.encode("utf-8")).hexdigest()[:16]
            records.append(BillionaireRecord(wealth_usd=wealth, name_hash=digest))
    finally:
        if fh is not source:
            fh.close()
    return records, diagnostics


def billionaire_effective_income(
    records: Sequence[BillionaireRecord],
    usd_eur_rate: float,
    return_rate: float,
) -> list[float]:
    """Impute annual incomes as wealth * exchange rate * return on wealth.

    Both rates must be positive; records whose imputed income fails to
    come out positive are dropped.
    """
    if not (usd_eur_rate > 0.0 and math.isfinite(usd_eur_rate)):
        raise ConfigError(f"usd_eur_rate must be positive, got {usd_eur_rate!r}")
    if not (return_rate > 0.0 and math.isfinite(return_rate)):
        raise ConfigError(f"return_rate must be positive, got {return_rate!r}")
    incomes = [r.wealth_usd * usd_eur_rate * return_rate for r in records]
    return [m for m in incomes if m > 0.0]


def merge_datasets(survey: Dataset, top_incomes: Sequence[float], top_weight: float) -> Dataset:
    """Extend a survey with top incomes, each carrying ``top_weight``."""
    if not (top_weight > 0.0 and math.isfinite(top_weight)):
        raise ConfigError(f"top_weight must be positive, got {top_weight!r}")
    top = np.asarray(top_incomes, dtype=float).ravel()
    if top.size == 0:
        return survey
    values = np.concatenate([survey.values, top])
    weights = np.concatenate([survey.weights, np.full(top.size, float(top_weight))])
    label = f"{survey.label} (+{top.size} top incomes)" if survey.label else f"+{top.size} top incomes"
    return Dataset(values=values, weights=weights, label=label)


def empirical_ccdf(ds: Dataset) -> EmpiricalCcdf:
    """Weibull-rank CCDF of a dataset.

    Unweighted samples get the classic plotting position
    p_i = 1 - i/(n+1) for ascending rank i, which never touches 0 or 1.
    Weighted samples use p_i = 1 - W_i/(W_total + w_mean) with W_i the
    cumulative weight through rank i; for equal weights this reproduces
    the classic positions exactly (detected and dispatched as such).
    Zero-weight records are ignored and duplicate values collapse to a
    single point at their largest rank, i.e. the smallest p.
    """
    if len(ds) == 0:
        raise DomainError("cannot build a CCDF from an empty dataset")
    keep = ds.weights > 0.0
    values = ds.values[keep]
    weights = ds.weights[keep]
    n = values.size
    if n == 0:
        raise DomainError("cannot build a CCDF with all weights zero")
    if np.all(weights == weights[0]):
        positions = 1.0 - np.arange(1, n + 1) / (n + 1.0)
    else:
        cum = np.cumsum(weights)
        positions = 1.0 - cum / (cum[-1] + cum[-1] / n)
    last_of_run = np.flatnonzero(np.append(np.diff(values) != 0.0, True))
    return EmpiricalCcdf(m=values[last_of_run], p=positions[last_of_run])
