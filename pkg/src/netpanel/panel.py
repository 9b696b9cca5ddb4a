"""Balanced-panel container, CSV loading, validation, and summaries.

The canonical flat-file schema is one row per (unit, period) cell::

    unit_id,period,firm_id,industry,state,lat,lon,y,x1,...,xK

Units are ordered lexicographically by ``unit_id``; that order defines the
cross-section index used by every other module (network rows, estimators,
impact matrices). Periods sort numerically when every period label parses
as a number, lexicographically otherwise.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import BalanceError, ConfigError, DimensionError, DuplicateError, ParseError

_FIXED_COLUMNS = ["unit_id", "period", "firm_id", "industry", "state", "lat", "lon", "y"]


@dataclass(frozen=True)
class FacilityMeta:
    """Time-invariant attributes of one cross-section unit."""

    unit_id: str
    firm_id: str
    industry: str
    state: str
    latitude: float
    longitude: float


@dataclass(frozen=True)
class LoadOptions:
    """Options controlling :func:`load_panel`.

    Parameters
    ----------
    difference : bool
        If True the ``y`` column holds levels and is first-differenced on
        load (each unit loses its first period). If False ``y`` is used
        as-is (already differenced or stationary).
    var_names : tuple of str, optional
        Display names for the covariate columns, replacing the header's
        ``x1..xK``. Length must match the number of covariate columns.
    """

    difference: bool = False
    var_names: tuple[str, ...] | None = None

    @classmethod
    def from_json(cls, path: str | Path) -> "LoadOptions":
        """Read options from a JSON config file.

        Recognized keys: ``difference`` (bool), ``var_names`` (list of str).
        """
        with open(path, "r", encoding="utf8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path}: expected a JSON object")
        unknown = set(raw) - {"difference", "var_names"}
        if unknown:
            raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
        difference = raw.get("difference", False)
        if not isinstance(difference, bool):
            raise ConfigError(f"config {path}: 'difference' must be a boolean")
        var_names = raw.get("var_names")
        if var_names is not None:
            if not isinstance(var_names, list) or not all(isinstance(v, str) for v in var_names):
                raise ConfigError(f"config {path}: 'var_names' must be a list of strings")
            var_names = tuple(var_names)
        return cls(difference=difference, var_names=var_names)


@dataclass(frozen=True)
class PanelDataset:
    """A balanced panel of N units observed over T periods with K covariates.

    Attributes
    ----------
    y : ndarray, shape (N, T)
        Outcome series (already differenced if the source held levels).
    x : ndarray, shape (N, T, K)
        Covariate series aligned with ``y``.
    meta : tuple of FacilityMeta
        Unit attributes, in cross-section order.
    var_names : tuple of str
        Covariate display names, length K.
    periods : tuple of str
        Period labels, length T, in time order.
    """

    y: np.ndarray
    x: np.ndarray
    meta: tuple[FacilityMeta, ...]
    var_names: tuple[str, ...]
    periods: tuple[str, ...]

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if y.ndim != 2:
            raise DimensionError(f"y must be 2-d (N, T), got shape {y.shape}")
        n, t = y.shape
        if x.ndim != 3 or x.shape[0] != n or x.shape[1] != t:
            raise DimensionError(f"x must have shape ({n}, {t}, K), got {x.shape}")
        k = x.shape[2]
        if len(self.meta) != n:
            raise DimensionError(f"meta has {len(self.meta)} entries for {n} units")
        if len(self.var_names) != k:
            raise DimensionError(f"var_names has {len(self.var_names)} entries for {k} covariates")
        if len(self.periods) != t:
            raise DimensionError(f"periods has {len(self.periods)} entries for {t} periods")
        if not np.all(np.isfinite(y)):
            bad = np.argwhere(~np.isfinite(y))[0]
            raise BalanceError(
                f"non-finite outcome for unit {self.meta[bad[0]].unit_id}, "
                f"period {self.periods[bad[1]]}"
            )
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise BalanceError(
                f"non-finite covariate for unit {self.meta[bad[0]].unit_id}, "
                f"period {self.periods[bad[1]]}"
            )
        ids = [m.unit_id for m in self.meta]
        if len(set(ids)) != n:
            raise DuplicateError("unit_id values in meta are not unique")
        # every per-unit time-series regression must be estimable
        if n < k + 2:
            raise DimensionError(f"need N >= K+2 units: N={n}, K={k}")
        if t < k + 2:
            raise DimensionError(f"need T >= K+2 periods: T={t}, K={k}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def t(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[2]

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(m.unit_id for m in self.meta)


def _period_sort_key(labels: list[str]):
    """Numeric sort when every label parses as a number, else lexicographic."""
    try:
        keys = {lab: float(lab) for lab in labels}
    except ValueError:
        return lambda lab: lab
    return lambda lab: keys[lab]


def _parse_float(text: str, row_num: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row_num}: non-numeric {col!r} value {text!r}") from None


def load_panel(path: str | Path, options: LoadOptions | None = None) -> PanelDataset:
    """Load and validate a balanced panel from CSV.

    Raises
    ------
    ParseError
        Malformed header, non-numeric numeric field, or metadata that
        conflicts across rows of the same unit (message carries the
        1-based row number).
    DuplicateError
        A (unit, period) cell appears twice.
    BalanceError
        A unit misses a period present for other units.
    """
    options = options or LoadOptions()
    path = Path(path)
    with open(path, "r", encoding="utf8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[: len(_FIXED_COLUMNS)] != _FIXED_COLUMNS:
            raise ParseError(
                f"{path}: header must start with {','.join(_FIXED_COLUMNS)}, got {','.join(header)}"
            )
        x_cols = header[len(_FIXED_COLUMNS) :]
        k = len(x_cols)
        expected = [f"x{i + 1}" for i in range(k)]
        if x_cols != expected:
            raise ParseError(f"{path}: covariate columns must be x1..x{k}, got {x_cols}")

        cells: dict[tuple[str, str], tuple[float, list[float]]] = {}
        meta_by_unit: dict[str, tuple[FacilityMeta, int]] = {}
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"row {row_num}: expected {len(header)} fields, got {len(row)}")
            unit, period = row[0], row[1]
            m = FacilityMeta(
                unit_id=unit,
                firm_id=row[2],
                industry=row[3],
                state=row[4],
                latitude=_parse_float(row[5], row_num, "lat"),
                longitude=_parse_float(row[6], row_num, "lon"),
            )
            prev = meta_by_unit.get(unit)
            if prev is None:
                meta_by_unit[unit] = (m, row_num)
            elif prev[0] != m:
                raise ParseError(
                    f"row {row_num}: metadata for unit {unit!r} conflicts with row {prev[1]}"
                )
            key = (unit, period)
            if key in cells:
                raise DuplicateError(f"row {row_num}: duplicate cell unit={unit!r} period={period!r}")
            y_val = _parse_float(row[7], row_num, "y")
            x_vals = [_parse_float(row[8 + j], row_num, f"x{j + 1}") for j in range(k)]
            cells[key] = (y_val, x_vals)

    if not cells:
        raise ParseError(f"{path}: no data rows")

    unit_ids = sorted(meta_by_unit)
    raw_periods = list({p for (_, p) in cells})
    period_labels = sorted(raw_periods, key=_period_sort_key(raw_periods))
    n, t = len(unit_ids), len(period_labels)
    y = np.empty((n, t))
    x = np.empty((n, t, k))
    for i, unit in enumerate(unit_ids):
        for s, period in enumerate(period_labels):
            cell = cells.get((unit, period))
            if cell is None:
                raise BalanceError(f"missing cell: unit {unit!r}, period {period!r}")
            y[i, s] = cell[0]
            x[i, s, :] = cell[1]

    if options.var_names is not None:
        if len(options.var_names) != k:
            raise ConfigError(f"var_names has {len(options.var_names)} entries for {k} covariates")
        var_names = tuple(options.var_names)
    else:
        var_names = tuple(x_cols)

    periods = tuple(period_labels)
    if options.difference:
        if t < 2:
            raise DimensionError("cannot first-difference a single-period panel")
        y = np.diff(y, axis=1)
        x = x[:, 1:, :]
        periods = periods[1:]

    meta = tuple(meta_by_unit[u][0] for u in unit_ids)
    return PanelDataset(y=y, x=x, meta=meta, var_names=var_names, periods=periods)


def summarize(panel: PanelDataset) -> pd.DataFrame:
    """Per-variable summary over all N*T cells.

    Returns a DataFrame indexed by variable (outcome first) with columns
    mean, median, sd (ddof=1), min, max, n_obs.
    """
    rows = {}
    series = {"y": panel.y.ravel()}
    for j, name in enumerate(panel.var_names):
        series[name] = panel.x[:, :, j].ravel()
    for name, vals in series.items():
        rows[name] = {
            "mean": float(np.mean(vals)),
            "median": float(np.median(vals)),
            "sd": float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0,
            "min": float(np.min(vals)),
            "max": float(np.max(vals)),
            "n_obs": int(vals.size),
        }
    frame = pd.DataFrame.from_dict(rows, orient="index")
    frame.index.name = "variable"
    return frame


def write_panel_csv(panel: PanelDataset, path: str | Path) -> None:
    """Write a panel in the canonical schema.

    Floats are written with ``repr`` so a load round-trips bit-for-bit.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_FIXED_COLUMNS + [f"x{j + 1}" for j in range(panel.k)])
    for i, m in enumerate(panel.meta):
        for s, period in enumerate(panel.periods):
            writer.writerow(
                [
                    m.unit_id,
                    period,
                    m.firm_id,
                    m.industry,
                    m.state,
                    repr(m.latitude),
                    repr(m.longitude),
                    repr(float(panel.y[i, s])),
                ]
                + [repr(float(v)) for v in panel.x[i, s, :]]
            )
    Path(path).write_text(buf.getvalue(), encoding="utf8")
