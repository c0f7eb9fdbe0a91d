"""Return panels: CSV ingestion, validation, summary statistics, window plans."""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateSeries,
    DuplicateLabel,
    InsufficientData,
    PanelFormatError,
    WindowError,
)


@dataclass(frozen=True)
class ReturnPanel:
    """N x p matrix of per-period log-returns with labels and a time index.

    Parameters
    ----------
    instruments : tuple of str
        Unique column labels, length p.
    times : np.ndarray
        Strictly increasing time index of length N (datetime64 or integers).
    values : np.ndarray
        Shape (N, p), finite log-returns.
    """

    instruments: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        times = np.asarray(self.times)
        object.__setattr__(self, "instruments", tuple(self.instruments))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)
        n, p = values.shape if values.ndim == 2 else (0, 0)
        if values.ndim != 2 or n < 2 or p < 1:
            raise PanelFormatError(f"panel must be N>=2 by p>=1, got shape {values.shape}")
        if len(self.instruments) != p:
            raise PanelFormatError("label count does not match column count")
        if len(set(self.instruments)) != p:
            dup = sorted({s for s in self.instruments if self.instruments.count(s) > 1})
            raise DuplicateLabel(f"duplicate instrument labels: {dup}")
        if len(times) != n:
            raise PanelFormatError("time index length does not match row count")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise PanelFormatError(f"non-finite value at row {r}, column {self.instruments[c]!r}")
        if np.any(times[1:] <= times[:-1]):
            k = int(np.argmax(times[1:] <= times[:-1]))
            raise PanelFormatError(f"time index not strictly increasing at position {k + 1}")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_instruments(self) -> int:
        return self.values.shape[1]

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.instruments.index(label)]

    def window(self, start: int, stop: int) -> "ReturnPanel":
        """Row slice [start, stop) as a new panel."""
        return type(self)(self.instruments, self.times[start:stop], self.values[start:stop])


@dataclass(frozen=True)
class WindowPlan:
    """Rolling train/test split over N observations.

    ``windows`` holds ``((train_start, train_stop), (test_start, test_stop))``
    half-open index pairs; the test range always follows the train range
    contiguously.
    """

    train_length: int
    test_length: int
    stride: int
    windows: tuple = field(default_factory=tuple)


def make_windows(n_obs: int, train: int, test: int, stride: int) -> WindowPlan:
    """Build a rolling window plan; the last partial window is dropped.

    Raises
    ------
    WindowError
        If sizes are non-positive or no full window fits in ``n_obs``.
    """
    if min(train, test, stride) <= 0:
        raise WindowError("train, test and stride must all be positive")
    if train + test > n_obs:
        raise WindowError(f"train+test={train + test} exceeds N={n_obs}")
    windows = []
    start = 0
    while start + train + test <= n_obs:
        windows.append(((start, start + train), (start + train, start + train + test)))
        start += stride
    return WindowPlan(train, test, stride, tuple(windows))


def parse_panel_csv(path, mode: str = "log_returns") -> ReturnPanel:
    """Load a panel from CSV with header ``date,<label1>,...,<labelp>``.

    With ``mode="prices"`` the values are converted to log-returns
    log(P_t / P_{t-1}) and the panel shrinks by one row.
    """
    if mode not in ("prices", "log_returns"):
        raise ValueError(f"mode must be 'prices' or 'log_returns', got {mode!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise PanelFormatError("header must be 'date,<label1>,...'")
        labels = [h.strip() for h in header[1:]]
        if len(set(labels)) != len(labels):
            dup = sorted({s for s in labels if labels.count(s) > 1})
            raise DuplicateLabel(f"duplicate instrument labels: {dup}")
        times, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(labels) + 1:
                raise PanelFormatError(f"row {lineno}: expected {len(labels) + 1} cells, got {len(row)}")
            try:
                stamp = _parse_iso(row[0].strip())
            except ValueError:
                raise PanelFormatError(f"row {lineno}: bad ISO-8601 date {row[0]!r}") from None
            vals = []
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell == "":
                    raise PanelFormatError(f"row {lineno}: missing cell in column {labels[j]!r}")
                try:
                    x = float(cell)
                except ValueError:
                    raise PanelFormatError(
                        f"row {lineno}: non-numeric cell {cell!r} in column {labels[j]!r}"
                    ) from None
                if not np.isfinite(x):
                    raise PanelFormatError(f"row {lineno}: non-finite cell in column {labels[j]!r}")
                vals.append(x)
            times.append(stamp)
            rows.append(vals)
    if len(rows) < 2:
        raise PanelFormatError("need at least two data rows")
    tindex = np.array(times, dtype="datetime64[s]")
    values = np.asarray(rows, dtype=float)
    if np.any(tindex[1:] <= tindex[:-1]):
        k = int(np.argmax(tindex[1:] <= tindex[:-1]))
        raise PanelFormatError(f"dates not strictly increasing at row {k + 3}")
    if mode == "prices":
        if np.any(values <= 0.0):
            r, c = np.argwhere(values <= 0.0)[0]
            raise PanelFormatError(f"non-positive price at row {r + 2}, column {labels[c]!r}")
        values = np.log(values[1:] / values[:-1])
        tindex = tindex[1:]
    return ReturnPanel(tuple(labels), tindex, values)


def write_panel_csv(panel: ReturnPanel, path) -> None:
    """Write a panel in the same CSV format accepted by :func:`parse_panel_csv`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *panel.instruments])
        for t, row in zip(panel.times, panel.values):
            writer.writerow([_format_time(t), *[repr(float(x)) for x in row]])


def summarize(panel: ReturnPanel) -> dict[str, dict[str, float]]:
    """Per-instrument summary: min, median, mean, max, stdev, skewness,
    excess kurtosis and the Jarque-Bera statistic N/6*(S^2 + K^2/4).

    Raises
    ------
    InsufficientData
        Fewer than 4 observations.
    DegenerateSeries
        A constant column, for which the moments are undefined.
    """
    n = panel.n_obs
    if n < 4:
        raise InsufficientData(f"summary statistics need N >= 4, got {n}")
    out = {}
    for j, label in enumerate(panel.instruments):
        x = panel.values[:, j]
        m = x.mean()
        centered = x - m
        m2 = np.mean(centered**2)
        if m2 == 0.0:
            raise DegenerateSeries(f"column {label!r} is constant")
        skew = np.mean(centered**3) / m2**1.5
        exkurt = np.mean(centered**4) / m2**2 - 3.0
        out[label] = {
            "min": float(x.min()),
            "median": float(np.median(x)),
            "mean": float(m),
            "max": float(x.max()),
            "stdev": float(x.std(ddof=1)),
            "skewness": float(skew),
            "excess_kurtosis": float(exkurt),
            "jarque_bera": float(n / 6.0 * (skew**2 + exkurt**2 / 4.0)),
        }
    return out


def _parse_iso(text: str) -> _dt.datetime:
    try:
        return _dt.datetime.fromisoformat(text)
    except ValueError:
        return _dt.datetime.combine(_dt.date.fromisoformat(text), _dt.time())


def _format_time(t) -> str:
    if np.issubdtype(np.asarray(t).dtype, np.datetime64):
        stamp = t.astype("datetime64[s]").item()
        if stamp.time() == _dt.time():
            return stamp.date().isoformat()
        return stamp.isoformat(sep="T")
    return str(t)
