"""Panel ingestion, quantile discretization, and Kendall correlation tables.

A panel is a rectangular block of numeric values, one column per series
and one row per time point.  Continuous panels are turned ordinal by
pooled-quantile breakpoints; ordinal panels feed the estimation modules
after their observed labels are mapped to 1-based state indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .exceptions import DataError, DomainError
from .marginal import StateSpace

TIME_COLUMN = "time"


@dataclass(frozen=True)
class Panel:
    """Named series observed over a common time axis."""

    names: tuple[str, ...]
    values: np.ndarray
    time: tuple[str, ...]

    def __init__(self, names, values, time=None):
        names = tuple(str(n) for n in names)
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"panel values must be 2-d, got shape {values.shape}")
        t, k = values.shape
        if t == 0 or k == 0:
            raise DataError("panel must contain at least one row and column")
        if len(names) != k:
            raise DataError(f"{len(names)} names for {k} columns")
        if len(set(names)) != k:
            raise DataError("series names must be distinct")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(
                f"missing or non-finite value at row {bad[0] + 1}, "
                f"column {names[bad[1]]!r}"
            )
        if time is None:
            time = tuple(str(i) for i in range(t))
        else:
            time = tuple(str(x) for x in time)
            if len(time) != t:
                raise DataError(f"{len(time)} time labels for {t} rows")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "time", time)

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise DataError(f"unknown series {name!r}")
        return self.values[:, self.names.index(name)]

    def is_integral(self) -> bool:
        return bool(np.all(self.values == np.round(self.values)))


def load_panel(path) -> Panel:
    """Read a comma-delimited panel.

    The header row names the series; an optional leading ``time`` column
    carries time labels.  Every cell must be numeric; ragged rows, blank
    cells, and non-numeric cells raise errors naming the offending row and
    column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [cell.strip() for cell in rows[0]]
    has_time = bool(header) and header[0].lower() == TIME_COLUMN
    names = header[1:] if has_time else header
    if not names:
        raise DataError(f"{path}: header row has no series names")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    time_labels: list[str] = []
    values = np.empty((len(body), len(names)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}"
            )
        cells = [cell.strip() for cell in row]
        if has_time:
            time_labels.append(cells[0])
            cells = cells[1:]
        for j, cell in enumerate(cells):
            if not cell:
                raise DataError(
                    f"{path}: blank cell at row {i + 2}, column {names[j]!r}"
                )
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at row {i + 2}, "
                    f"column {names[j]!r}"
                ) from None
    return Panel(names, values, time_labels if has_time else None)


def save_panel(panel: Panel, path) -> None:
    """Write a panel as comma-delimited text with a leading time column."""
    path = Path(path)
    integral = panel.is_integral()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([TIME_COLUMN, *panel.names])
        for label, row in zip(panel.time, panel.values):
            cells = [
                str(int(v)) if integral else np.format_float_positional(v)
                for v in row
            ]
            writer.writerow([label, *cells])


def discretize_quantile(
    panel: Panel, n_states: int, probs=None
) -> tuple[Panel, np.ndarray]:
    """Bin a continuous panel into ordinal states by pooled quantiles.

    Breakpoints are quantiles of all values pooled across series; the state
    of a value y is 1 + the number of breakpoints strictly below y, so the
    lowest bin is closed on both ends and every other bin is right-closed.
    Returns the ordinal panel and the breakpoints used.
    """
    if n_states < 2:
        raise DomainError(f"n_states must be >= 2, got {n_states}")
    if probs is None:
        probs = np.arange(1, n_states) / n_states
    else:
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (n_states - 1,):
            raise DomainError(
                f"expected {n_states - 1} quantile levels, got shape {probs.shape}"
            )
        if np.any(probs <= 0) or np.any(probs >= 1) or np.any(np.diff(probs) <= 0):
            raise DomainError(
                "quantile levels must be strictly increasing inside (0, 1)"
            )
    pooled = panel.values.ravel()
    breakpoints = np.quantile(pooled, probs)
    if np.unique(breakpoints).size != breakpoints.size:
        raise DataError(
            "pooled values are too concentrated: quantile breakpoints are "
            "not distinct"
        )
    states = 1 + np.searchsorted(breakpoints, panel.values, side="left")
    return Panel(panel.names, states.astype(float), panel.time), breakpoints


def kendall_matrix(panel: Panel, lag: int = 0) -> np.ndarray:
    """Kendall tau-b between every pair of series at one lag.

    Entry (k, m) correlates series k at time t with series m at time
    t - lag.  Pairs where either window is constant are reported as NaN;
    tau-b's tie correction keeps the remaining entries in [-1, 1].
    """
    if lag < 0:
        raise DomainError(f"lag must be >= 0, got {lag}")
    t = panel.n_obs
    if t - lag < 2:
        raise DomainError(
            f"need at least lag + 2 = {lag + 2} time points, got {t}"
        )
    k = panel.n_series
    out = np.empty((k, k))
    lead = panel.values[lag:]
    trail = panel.values[: t - lag]
    for a in range(k):
        x = lead[:, a]
        for b in range(k):
            y = trail[:, b]
            if np.all(x == x[0]) or np.all(y == y[0]):
                out[a, b] = np.nan
            else:
                out[a, b] = stats.kendalltau(x, y).statistic
    return out


def infer_state_spaces(panel: Panel) -> tuple[StateSpace, ...]:
    """Observed state space of each series: its sorted distinct values.

    The panel must hold integer labels; series that never visit a label
    simply omit it (collapsed categories keep their original names).
    """
    if not panel.is_integral():
        raise DataError(
            "state spaces can only be inferred from integer-valued panels"
        )
    spaces = []
    for j, name in enumerate(panel.names):
        labels = np.unique(panel.values[:, j]).astype(int)
        if labels.size < 2:
            raise DataError(
                f"series {name!r} is constant; at least two states are required"
            )
        spaces.append(StateSpace(tuple(int(v) for v in labels)))
    return tuple(spaces)


def to_state_indices(
    panel: Panel, spaces: tuple[StateSpace, ...] | None = None
) -> np.ndarray:
    """Map a labeled ordinal panel onto 1-based state indices.

    Estimation works with indices 1..d per series regardless of how the
    observed labels are named.
    """
    if spaces is None:
        spaces = infer_state_spaces(panel)
    if len(spaces) != panel.n_series:
        raise DataError(
            f"{len(spaces)} state spaces for {panel.n_series} series"
        )
    if not panel.is_integral():
        raise DataError("state panels must hold integer labels")
    out = np.empty(panel.values.shape, dtype=np.int64)
    for j, space in enumerate(spaces):
        col = panel.values[:, j].astype(int)
        for i, val in enumerate(col):
            try:
                out[i, j] = space.index_of(val)
            except DomainError:
                raise DataError(
                    f"value {val} at row {i + 1}, column {panel.names[j]!r} "
                    f"is not in the state space {space.labels}"
                ) from None
    return out
