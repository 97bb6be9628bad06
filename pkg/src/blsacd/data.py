"""Trade-tape ingestion, seasonal adjustment, and descriptive statistics.

A trade tape is a time-ordered list of quote records (timestamp, bid, ask).
The log bid-ask range ``R = 100 * (log ask - log bid)`` thins the tape to
its information events: every record whose range differs from the previous
record's opens a new spell.  Each spell contributes one observation pair,
the spell duration in seconds and the number of market events inside the
spell, which together form the bivariate series the duration model is fit
on.

Intraday seasonality is removed multiplicatively: a natural cubic spline
through hourly means per margin estimates the time-of-day factor, and the
adjusted series is the raw series divided by the (rescaled) factor so its
sample mean is one.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from datetime import datetime, time
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import DataError, NumericError
from .model import BiSeries

# two ranges closer than this are the same event
_RANGE_TOL = 1e-12

COUNT_MODES = ("all", "changes-only")


@dataclass(frozen=True)
class TradeTape:
    """Quote records with timestamps in seconds since session open."""

    timestamps: np.ndarray
    bid: np.ndarray
    ask: np.ndarray

    def __post_init__(self):
        ts = np.atleast_1d(np.asarray(self.timestamps, dtype=float))
        bid = np.atleast_1d(np.asarray(self.bid, dtype=float))
        ask = np.atleast_1d(np.asarray(self.ask, dtype=float))
        if not ts.shape == bid.shape == ask.shape or ts.ndim != 1:
            raise DataError("timestamp, bid, and ask must be equally long vectors")
        if ts.shape[0] == 0:
            raise DataError("empty trade tape")
        for name, arr in (("timestamp", ts), ("bid", bid), ("ask", ask)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise DataError(f"record {bad}: non-finite {name}")
        if np.any(bid <= 0.0):
            bad = int(np.flatnonzero(bid <= 0.0)[0])
            raise DataError(f"record {bad}: non-positive bid")
        if np.any(ask < bid):
            bad = int(np.flatnonzero(ask < bid)[0])
            raise DataError(f"record {bad}: ask below bid")
        if np.any(np.diff(ts) < 0.0):
            bad = int(np.flatnonzero(np.diff(ts) < 0.0)[0]) + 1
            raise DataError(f"record {bad}: timestamps decrease")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "bid", bid)
        object.__setattr__(self, "ask", ask)

    @property
    def n(self) -> int:
        return self.timestamps.shape[0]

    @classmethod
    def from_csv(cls, source, *, session: str | None = None) -> "TradeTape":
        """Read a ``timestamp,bid,ask`` CSV file.

        Timestamps are either plain seconds since session open or ISO-8601
        datetimes from a single calendar date.  With ``session`` (a window
        like ``"09:30-16:00"``) records outside the window are dropped and
        ISO times are re-expressed as seconds since the window opens;
        without it, ISO times are offset from the first record.
        """
        own = isinstance(source, (str, Path))
        fh = open(source, newline="") if own else source
        try:
            rows = _read_rows(fh)
        finally:
            if own:
                fh.close()
        window = _parse_session(session) if session is not None else None

        first_stamp = rows[0][1]
        iso = not _is_number(first_stamp)
        seconds = np.empty(len(rows))
        bid = np.empty(len(rows))
        ask = np.empty(len(rows))
        dates = set()
        for i, (lineno, stamp, b, a) in enumerate(rows):
            if iso:
                try:
                    dt = datetime.fromisoformat(stamp)
                except ValueError:
                    raise DataError(
                        f"unparseable timestamp {stamp!r}", line=lineno
                    ) from None
                dates.add(dt.date())
                seconds[i] = dt.hour * 3600 + dt.minute * 60 + dt.second \
                    + dt.microsecond / 1e6
            else:
                try:
                    seconds[i] = float(stamp)
                except ValueError:
                    raise DataError(
                        f"unparseable timestamp {stamp!r}", line=lineno
                    ) from None
            try:
                bid[i] = float(b)
                ask[i] = float(a)
            except ValueError:
                raise DataError("unparseable bid or ask", line=lineno) from None
        if iso and len(dates) > 1:
            raise DataError(
                "tape spans multiple dates; process one session at a time"
            )

        if iso:
            open_s = window[0] if window is not None else seconds[0]
            close_s = window[1] if window is not None else math.inf
            keep = (seconds >= open_s) & (seconds <= close_s)
            seconds = seconds[keep] - open_s
            bid, ask = bid[keep], ask[keep]
        elif window is not None:
            keep = (seconds >= 0.0) & (seconds <= window[1] - window[0])
            seconds, bid, ask = seconds[keep], bid[keep], ask[keep]
        if seconds.size == 0:
            raise DataError("no records inside the session window")
        return cls(seconds, bid, ask)


def _read_rows(fh):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        raise DataError("empty file")
    if [c.strip().lower() for c in header][:3] != ["timestamp", "bid", "ask"]:
        raise DataError("expected header timestamp,bid,ask", line=1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not any(f.strip() for f in row):
            continue
        if len(row) < 3:
            raise DataError("expected 3 fields", line=lineno)
        rows.append((lineno, row[0].strip(), row[1].strip(), row[2].strip()))
    if not rows:
        raise DataError("no records")
    return rows


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _parse_session(text: str) -> tuple[float, float]:
    """Parse ``HH:MM-HH:MM`` into (open, close) seconds-of-day."""
    m = re.fullmatch(r"(\d{1,2}):(\d{2})-(\d{1,2}):(\d{2})", text.strip())
    if m is None:
        raise DataError(
            f"malformed session window {text!r}; expected HH:MM-HH:MM"
        )
    h1, m1, h2, m2 = map(int, m.groups())
    if not (h1 < 24 and h2 < 24 and m1 < 60 and m2 < 60):
        raise DataError(f"malformed session window {text!r}")
    open_s = 3600.0 * h1 + 60.0 * m1
    close_s = 3600.0 * h2 + 60.0 * m2
    if close_s <= open_s:
        raise DataError("session must close after it opens")
    return open_s, close_s


def bid_ask_range(tape: TradeTape) -> np.ndarray:
    """Log bid-ask range ``100 * (log ask - log bid)``, one per record."""
    return 100.0 * (np.log(tape.ask) - np.log(tape.bid))


def build_pairs(tape: TradeTape, *, count_mode: str = "all") -> BiSeries:
    """Thin a tape into (duration, count) pairs at range-change events.

    The first record opens the series; every later record whose range
    differs from its predecessor's by more than an exact-arithmetic
    tolerance closes a spell.  Change records sharing one timestamp merge
    into a single event (keeping the last range) so durations stay strictly
    positive.  Counts cover the half-open spell ``(prev, cur]``:
    ``count_mode="all"`` counts every tape record inside it, while
    ``"changes-only"`` counts just the change records merged into the
    closing event.
    """
    if count_mode not in COUNT_MODES:
        raise ValueError(f"count_mode must be one of {COUNT_MODES}")
    r = bid_ask_range(tape)
    ts = tape.timestamps
    change = np.empty(tape.n, dtype=bool)
    change[0] = True
    change[1:] = np.abs(np.diff(r)) > _RANGE_TOL

    events: list[list] = []
    for i in np.flatnonzero(change):
        t = ts[i]
        if events and t == events[-1][0]:
            events[-1][1] += 1
        else:
            events.append([t, 1])
    if len(events) < 2:
        raise DataError("need at least two range-change events")

    times = np.array([e[0] for e in events])
    mult = np.array([e[1] for e in events], dtype=float)
    y1 = np.diff(times)
    if count_mode == "all":
        hi = np.searchsorted(ts, times[1:], side="right")
        lo = np.searchsorted(ts, times[:-1], side="right")
        y2 = (hi - lo).astype(float)
    else:
        y2 = mult[1:]
    return BiSeries(y1, y2, timestamps=times[1:])


@dataclass(frozen=True)
class SeasonalCurve:
    """Positive time-of-day factor interpolated through hourly knots.

    A natural cubic spline runs through the knots and is clamped to the
    endpoint values outside their span; a single knot gives a constant
    curve.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if knots.shape != values.shape or knots.ndim != 1 or knots.size == 0:
            raise ValueError("knots and values must be equally long vectors")
        if np.any(np.diff(knots) <= 0.0):
            raise ValueError("knot times must increase strictly")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValueError("knot values must be positive and finite")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if knots.size >= 2:
            spline = CubicSpline(knots, values, bc_type="natural")
            probe = spline(np.linspace(knots[0], knots[-1], 512))
            if np.any(probe <= 0.0):
                raise NumericError(
                    "seasonal spline dips non-positive between knots"
                )
        else:
            spline = None
        object.__setattr__(self, "_spline", spline)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self._spline is None:
            out = np.full(t.shape, self.values[0])
        else:
            out = self._spline(np.clip(t, self.knots[0], self.knots[-1]))
        return out if out.ndim else float(out)


def _fit_curve(tod, raw, knot_every):
    bins = np.floor(tod / knot_every).astype(int)
    knots, means = [], []
    for b in np.unique(bins):
        knots.append((b + 0.5) * knot_every)
        means.append(float(raw[bins == b].mean()))
    base = SeasonalCurve(np.array(knots), np.array(means))
    scale = float(np.mean(raw / base(tod)))
    return SeasonalCurve(base.knots, base.values * scale)


def diurnal_adjust(
    series: BiSeries, *, knot_every: float = 3600.0
) -> tuple[BiSeries, tuple[SeasonalCurve, SeasonalCurve]]:
    """Remove intraday seasonality from both margins.

    Fits one curve per margin through the per-hour means of the raw values
    (empty hours contribute no knot and are bridged by the spline), then
    divides each margin by its curve.  The curve carries the rescale that
    makes the adjusted sample mean exactly one, so
    ``adjusted = raw / curve(time-of-day)``.
    """
    if series.timestamps is None:
        raise ValueError("series carries no timestamps")
    if knot_every <= 0.0:
        raise ValueError("knot spacing must be positive")
    tod = series.timestamps
    curve1 = _fit_curve(tod, series.y1, knot_every)
    curve2 = _fit_curve(tod, series.y2, knot_every)
    adjusted = BiSeries(
        series.y1 / curve1(tod), series.y2 / curve2(tod), timestamps=tod,
    )
    return adjusted, (curve1, curve2)


def describe(values) -> dict:
    """Descriptive statistics of one margin.

    Returns n, min, 10th percentile, mean, median, 90th percentile, max,
    sample standard deviation, coefficient of variation in percent,
    skewness, and excess kurtosis.  Percentiles use the median-unbiased
    quantile rule; skewness and kurtosis are the plain moment ratios and
    are NaN for a constant series.
    """
    x = np.atleast_1d(np.asarray(values, dtype=float))
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    n = x.size
    mean = float(x.mean())
    sd = float(x.std(ddof=1)) if n > 1 else 0.0
    centered = x - mean
    m2 = float(np.mean(centered**2))
    if m2 > 0.0:
        skew = float(np.mean(centered**3)) / m2**1.5
        exkurt = float(np.mean(centered**4)) / m2**2 - 3.0
    else:
        skew = exkurt = float("nan")
    return {
        "n": n,
        "min": float(x.min()),
        "p10": float(np.quantile(x, 0.10, method="median_unbiased")),
        "mean": mean,
        "median": float(np.quantile(x, 0.50, method="median_unbiased")),
        "p90": float(np.quantile(x, 0.90, method="median_unbiased")),
        "max": float(x.max()),
        "sd": sd,
        "cv_pct": 100.0 * sd / mean if mean != 0.0 else float("nan"),
        "skewness": skew,
        "excess_kurtosis": exkurt,
    }
