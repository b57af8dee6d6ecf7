"""Market time series: CSV ingestion, alignment, chronological split and synthesis.

Resolutions are fixed: frequency at 1 s, imbalance indicator at 1 min,
imbalance settlement at 15 min, FCR clearing prices per 4 h block.
All timestamps are UTC.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import lfilter

SECONDS_PER_MINUTE = 60
MINUTES_PER_QUARTER = 15
QUARTERS_PER_BLOCK = 16
BLOCK_HOURS = 4
SECONDS_PER_BLOCK = BLOCK_HOURS * 3600
MINUTES_PER_BLOCK = BLOCK_HOURS * 60
BLOCKS_PER_DAY = 24 // BLOCK_HOURS
NOMINAL_HZ = 50.0
MAX_HOLD_GAP_S = 60


class DataError(ValueError):
    """Base class for rejected input data."""


class ParseError(DataError):
    pass


class NonMonotoneError(DataError):
    pass


class GapError(DataError):
    pass


class AlignmentError(DataError):
    pass


@dataclass(frozen=True)
class FrequencyTrace:
    start: pd.Timestamp
    deviations: np.ndarray  # mHz relative to 50 Hz, one per second
    step_s: int = 1

    def __post_init__(self):
        if len(self.deviations) == 0:
            raise DataError("frequency trace is empty")

    def __len__(self):
        return len(self.deviations)


@dataclass(frozen=True)
class ImbalancePriceSeries:
    start: pd.Timestamp
    minute_indicator: np.ndarray  # EUR/MWh, 1 min
    settlement: np.ndarray  # EUR/MWh, 15 min

    def __post_init__(self):
        if len(self.minute_indicator) != MINUTES_PER_QUARTER * len(self.settlement):
            raise AlignmentError(
                f"{len(self.minute_indicator)} indicator minutes do not cover "
                f"{len(self.settlement)} settlement quarters"
            )


@dataclass(frozen=True)
class FcrPriceSeries:
    start: pd.Timestamp
    prices: np.ndarray  # EUR/MW per 4 h block
    block_hours: int = BLOCK_HOURS

    def __post_init__(self):
        if np.any(self.prices < 0):
            raise DataError("FCR clearing prices must be non-negative")


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset
    validation: frozenset
    test: frozenset

    def part(self, name: str) -> frozenset:
        try:
            return {"train": self.train, "validation": self.validation, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None


@dataclass(frozen=True)
class MarketDataset:
    """The four aligned series over a span of whole 4 h blocks."""

    frequency: FrequencyTrace
    imbalance: ImbalancePriceSeries
    fcr: FcrPriceSeries

    def __post_init__(self):
        start = self.frequency.start
        if not (self.imbalance.start == start == self.fcr.start):
            raise AlignmentError("series must share one start timestamp")
        if start != start.floor(f"{BLOCK_HOURS}h"):
            raise AlignmentError(f"dataset start {start} is not on a 4 h block boundary")
        n_blocks = len(self.fcr.prices)
        if len(self.imbalance.settlement) != n_blocks * QUARTERS_PER_BLOCK:
            raise AlignmentError(
                f"{len(self.imbalance.settlement)} quarters do not match {n_blocks} blocks"
            )
        if len(self.frequency) != n_blocks * SECONDS_PER_BLOCK:
            raise AlignmentError(
                f"{len(self.frequency)} seconds do not match {n_blocks} blocks"
            )

    @property
    def start(self) -> pd.Timestamp:
        return self.frequency.start

    @property
    def n_blocks(self) -> int:
        return len(self.fcr.prices)

    @property
    def n_minutes(self) -> int:
        return len(self.imbalance.minute_indicator)

    @property
    def freq(self) -> np.ndarray:
        return self.frequency.deviations

    @property
    def indicator(self) -> np.ndarray:
        return self.imbalance.minute_indicator

    @property
    def settlement(self) -> np.ndarray:
        return self.imbalance.settlement

    @property
    def fcr_prices(self) -> np.ndarray:
        return self.fcr.prices

    def block_start(self, b: int) -> pd.Timestamp:
        return self.start + pd.Timedelta(hours=BLOCK_HOURS * b)

    def minute_time(self, m: int) -> pd.Timestamp:
        return self.start + pd.Timedelta(minutes=m)

    def block(self, b: int) -> "MarketDataset":
        return self.blocks(b, b + 1)

    def blocks(self, b0: int, b1: int) -> "MarketDataset":
        if not 0 <= b0 < b1 <= self.n_blocks:
            raise IndexError(f"block range [{b0}, {b1}) outside 0..{self.n_blocks}")
        start = self.block_start(b0)
        s = slice(b0 * SECONDS_PER_BLOCK, b1 * SECONDS_PER_BLOCK)
        m = slice(b0 * MINUTES_PER_BLOCK, b1 * MINUTES_PER_BLOCK)
        q = slice(b0 * QUARTERS_PER_BLOCK, b1 * QUARTERS_PER_BLOCK)
        return MarketDataset(
            FrequencyTrace(start, self.freq[s]),
            ImbalancePriceSeries(start, self.indicator[m], self.settlement[q]),
            FcrPriceSeries(start, self.fcr_prices[b0:b1]),
        )

    def days(self) -> list[dt.date]:
        last = self.minute_time(self.n_minutes - 1).date()
        return day_span(self.start.date(), last)

    def minute_day_index(self) -> np.ndarray:
        """Index into :meth:`days` for every minute of the dataset."""
        start_of_day = self.start.hour * 60 + self.start.minute
        return (np.arange(self.n_minutes) + start_of_day) // 1440

    def day_offset_minutes(self, day: dt.date) -> int:
        """Minute index of the first minute of ``day`` (clamped to the dataset start)."""
        midnight = pd.Timestamp(day, tz=self.start.tz)
        m = int((midnight - self.start) / pd.Timedelta(minutes=1))
        if m >= self.n_minutes or m + 1440 <= 0:
            raise KeyError(f"day {day} is outside the dataset")
        return max(m, 0)

    def block_median_settlement(self, b: int) -> float:
        q = slice(b * QUARTERS_PER_BLOCK, (b + 1) * QUARTERS_PER_BLOCK)
        return float(np.median(self.settlement[q]))

    def next_block_median(self, b: int) -> float:
        """Median settlement price of block ``b + 1``; the last block falls back to itself."""
        return self.block_median_settlement(min(b + 1, self.n_blocks - 1))

    def split(self) -> DatasetSplit:
        return chronological_split(self.days())


# -- alignment helpers ----------------------------------------------------


def minute_of_second(s):
    return np.asarray(s) // SECONDS_PER_MINUTE


def quarter_of_minute(m):
    return np.asarray(m) // MINUTES_PER_QUARTER


def block_of_minute(m):
    return np.asarray(m) // MINUTES_PER_BLOCK


# -- split ----------------------------------------------------------------


def split_part_of_day(day: dt.date) -> str:
    if day.day <= 20:
        return "train"
    if day.day <= 25:
        return "validation"
    return "test"


def day_span(first: dt.date, last: dt.date) -> list[dt.date]:
    """Inclusive list of calendar days."""
    return [first + dt.timedelta(days=i) for i in range((last - first).days + 1)]


def chronological_split(days) -> DatasetSplit:
    """Per calendar month: days 1-20 train, 21-25 validation, the rest test."""
    parts: dict[str, set] = {"train": set(), "validation": set(), "test": set()}
    for d in days:
        parts[split_part_of_day(d)].add(d)
    return DatasetSplit(
        frozenset(parts["train"]), frozenset(parts["validation"]), frozenset(parts["test"])
    )


# -- CSV ingestion --------------------------------------------------------


def _to_float(text: str) -> float:
    # exact round-trip of repr-written values, unlike pandas' fast parser
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _read_timestamped(path, value_cols: tuple[str, ...]) -> tuple[pd.DatetimeIndex, str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    cols = [c.strip().lower() for c in df.columns]
    df.columns = cols
    if "timestamp" not in cols:
        raise ParseError(f"{path}: header must contain a 'timestamp' column, got {cols}")
    col = next((c for c in value_cols if c in cols), None)
    if col is None:
        raise ParseError(f"{path}: header needs one of {value_cols}, got {cols}")
    try:
        ts = pd.DatetimeIndex(pd.to_datetime(df["timestamp"], utc=True, format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: unparseable timestamp ({exc})") from exc
    values = np.array([_to_float(v) for v in df[col]], dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError(f"{path}: row {bad[0] + 2} has unparseable value {df[col].iloc[bad[0]]!r}")
    if len(ts) == 0:
        raise ParseError(f"{path}: no data rows")
    steps = np.diff(ts.asi8)
    if np.any(steps <= 0):
        i = int(np.flatnonzero(steps <= 0)[0])
        raise NonMonotoneError(f"{path}: timestamp at row {i + 3} ({ts[i + 1]}) does not increase")
    return ts, col, values


def load_frequency_csv(path) -> FrequencyTrace:
    """Read ``timestamp`` plus ``hz`` or ``mhz_dev``; hold gaps up to 60 s."""
    ts, col, values = _read_timestamped(path, ("hz", "mhz_dev"))
    dev = (values - NOMINAL_HZ) * 1000.0 if col == "hz" else values
    secs = (ts.asi8 - ts.asi8[0]) // 1_000_000_000
    if np.any((ts.asi8 - ts.asi8[0]) % 1_000_000_000):
        raise ParseError(f"{path}: timestamps must fall on whole seconds")
    gaps = np.diff(secs)
    big = np.flatnonzero(gaps > MAX_HOLD_GAP_S + 1)
    if big.size:
        i = int(big[0])
        raise GapError(f"{path}: {gaps[i] - 1} s gap after {ts[i]} exceeds {MAX_HOLD_GAP_S} s")
    # hold last value through short gaps
    filled = np.repeat(dev, np.append(gaps, 1))
    return FrequencyTrace(ts[0], filled)


def _regular(path, ts, values, step: pd.Timedelta, what: str) -> np.ndarray:
    expected = ts[0] + step * np.arange(len(ts))
    off = np.flatnonzero(ts != expected)
    if off.size:
        i = int(off[0])
        raise GapError(f"{path}: missing {what} before {ts[i]} (expected {expected[i]})")
    return values


def load_imbalance_csv(settlement_path, indicator_path=None) -> ImbalancePriceSeries:
    """Quarter-hour settlement prices plus optional 1 min indicator file.

    Without an indicator file the indicator repeats the settlement price
    (perfect preview). Negative prices are valid.
    """
    ts, _, settle = _read_timestamped(settlement_path, ("price", "settlement"))
    settle = _regular(settlement_path, ts, settle, pd.Timedelta(minutes=15), "quarter-hour")
    if indicator_path is None:
        indicator = np.repeat(settle, MINUTES_PER_QUARTER)
    else:
        its, _, indicator = _read_timestamped(indicator_path, ("price", "indicator"))
        indicator = _regular(indicator_path, its, indicator, pd.Timedelta(minutes=1), "minute")
        if its[0] != ts[0]:
            raise AlignmentError("indicator and settlement files start at different times")
    return ImbalancePriceSeries(ts[0], indicator, settle)


def load_fcr_csv(path) -> FcrPriceSeries:
    ts, _, prices = _read_timestamped(path, ("price", "fcr_price"))
    prices = _regular(path, ts, prices, pd.Timedelta(hours=BLOCK_HOURS), "4 h block")
    return FcrPriceSeries(ts[0], prices)


def load_dataset(frequency_path, settlement_path, fcr_path, indicator_path=None) -> MarketDataset:
    return MarketDataset(
        load_frequency_csv(frequency_path),
        load_imbalance_csv(settlement_path, indicator_path),
        load_fcr_csv(fcr_path),
    )


def _iso(index: pd.DatetimeIndex) -> np.ndarray:
    return np.asarray(index.strftime("%Y-%m-%dT%H:%M:%SZ"))


def write_dataset(ds: MarketDataset, out_dir) -> dict[str, Path]:
    """Write the four CSV files; returns their paths keyed by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "frequency": out / "frequency.csv",
        "settlement": out / "imbalance_settlement.csv",
        "indicator": out / "imbalance_indicator.csv",
        "fcr": out / "fcr_prices.csv",
    }
    specs = [
        ("frequency", "mhz_dev", ds.freq, "1s"),
        ("settlement", "price", ds.settlement, "15min"),
        ("indicator", "price", ds.indicator, "1min"),
        ("fcr", "price", ds.fcr_prices, "4h"),
    ]
    for key, col, values, freq in specs:
        idx = pd.date_range(ds.start, periods=len(values), freq=freq)
        text = [f"{t},{v!r}" for t, v in zip(_iso(idx), values.tolist())]
        paths[key].write_text(f"timestamp,{col}\n" + "\n".join(text) + "\n")
    return paths


# -- synthesis ------------------------------------------------------------


@dataclass(frozen=True)
class OUParams:
    """Ornstein-Uhlenbeck frequency deviation model.

    ``rate`` is the mean-reversion rate (1/s), ``volatility`` in mHz/sqrt(s),
    deviations are clamped to +-``clamp`` mHz.
    """

    rate: float = 1.0 / 300.0
    volatility: float = 1.6
    clamp: float = 200.0

    def __post_init__(self):
        if self.rate <= 0 or self.volatility < 0 or self.clamp <= 0:
            raise ValueError("OU rate and clamp must be positive, volatility non-negative")

    @property
    def stationary_std(self) -> float:
        return self.volatility / np.sqrt(2.0 * self.rate)


def synth_frequency(duration_s: int, seed: int, ou: OUParams = OUParams(), start=None) -> FrequencyTrace:
    """Exact-discretisation OU path at 1 s, started from its stationary law."""
    start = _as_start(start)
    rng = np.random.default_rng(seed)
    a = np.exp(-ou.rate)
    s = ou.stationary_std * np.sqrt(1.0 - a * a)
    z = rng.standard_normal(duration_s)
    u = s * z
    u[0] = ou.stationary_std * z[0]
    x = lfilter([1.0], [1.0, -a], u)
    return FrequencyTrace(start, np.clip(x, -ou.clamp, ou.clamp) + 0.0)


@dataclass(frozen=True)
class PriceProfile:
    """Recipe for synthetic imbalance and FCR prices.

    kind: ``flat`` (``level``), ``alternating`` (``low``/``high`` switching
    every ``period_quarters``), ``spiky`` (``level`` with ``spike`` every
    ``spike_every`` quarters) or ``stochastic`` (seeded daily shape + AR(1)
    noise + random spikes around ``level``).
    """

    kind: str = "stochastic"
    level: float = 100.0
    low: float = -100.0
    high: float = 100.0
    period_quarters: int = QUARTERS_PER_BLOCK
    spike: float = 1000.0
    spike_every: int = 8
    volatility: float = 80.0
    indicator_noise_std: float = 0.0
    fcr_kind: str = "stochastic"
    fcr_level: float = 100.0
    fcr_low: float = 20.0
    fcr_high: float = 200.0

    def __post_init__(self):
        if self.kind not in ("flat", "alternating", "spiky", "stochastic"):
            raise ValueError(f"unknown price profile kind {self.kind!r}")
        if self.fcr_kind not in ("flat", "alternating", "stochastic"):
            raise ValueError(f"unknown FCR price kind {self.fcr_kind!r}")
        if self.period_quarters < 1 or self.spike_every < 1:
            raise ValueError("periods must be at least one quarter")
        if self.indicator_noise_std < 0 or self.volatility < 0:
            raise ValueError("noise levels must be non-negative")
        if min(self.fcr_level, self.fcr_low, self.fcr_high) < 0:
            raise ValueError("FCR prices must be non-negative")


def _as_start(start) -> pd.Timestamp:
    if start is None:
        return pd.Timestamp("2022-01-01", tz="UTC")
    ts = pd.Timestamp(start)
    return ts.tz_localize("UTC") if ts.tz is None else ts.tz_convert("UTC")


def synth_prices(duration_s: int, seed: int, profile: PriceProfile = PriceProfile(), start=None):
    """Return ``(ImbalancePriceSeries, FcrPriceSeries)`` covering ``duration_s``."""
    start = _as_start(start)
    if duration_s % SECONDS_PER_BLOCK:
        raise ValueError("synthetic spans must be whole 4 h blocks")
    n_blocks = duration_s // SECONDS_PER_BLOCK
    n_q = n_blocks * QUARTERS_PER_BLOCK
    rng = np.random.default_rng([seed, 1])
    q = np.arange(n_q)

    if profile.kind == "flat":
        settle = np.full(n_q, float(profile.level))
    elif profile.kind == "alternating":
        settle = np.where((q // profile.period_quarters) % 2 == 0, profile.low, profile.high).astype(float)
    elif profile.kind == "spiky":
        settle = np.full(n_q, float(profile.level))
        settle[profile.spike_every - 1 :: profile.spike_every] = profile.spike
    else:
        hour = (q % 96) / 4.0
        shape = profile.level + 0.5 * profile.level * np.sin(2 * np.pi * (hour - 8.0) / 24.0)
        ar = lfilter([1.0], [1.0, -0.7], rng.standard_normal(n_q) * profile.volatility)
        spikes = rng.random(n_q) < 0.02
        signs = np.where(rng.random(n_q) < 0.5, -1.0, 1.0)
        settle = shape + ar + spikes * signs * profile.spike * rng.random(n_q)
        settle = np.round(settle, 2)

    indicator = np.repeat(settle, MINUTES_PER_QUARTER)
    if profile.indicator_noise_std > 0:
        noise_rng = np.random.default_rng([seed, 2])
        indicator = indicator + noise_rng.normal(0.0, profile.indicator_noise_std, indicator.size)

    b = np.arange(n_blocks)
    if profile.fcr_kind == "flat":
        fcr = np.full(n_blocks, float(profile.fcr_level))
    elif profile.fcr_kind == "alternating":
        fcr = np.where(b % 2 == 0, profile.fcr_high, profile.fcr_low).astype(float)
    else:
        fcr_rng = np.random.default_rng([seed, 3])
        fcr = np.round(profile.fcr_level * fcr_rng.lognormal(0.0, 0.6, n_blocks), 2)

    return ImbalancePriceSeries(start, indicator, settle), FcrPriceSeries(start, fcr)


def synth_dataset(
    days: float,
    seed: int,
    ou: OUParams = OUParams(),
    profile: PriceProfile = PriceProfile(),
    start=None,
) -> MarketDataset:
    duration_s = int(round(days * 86400))
    start = _as_start(start)
    freq = synth_frequency(duration_s, seed, ou, start)
    imb, fcr = synth_prices(duration_s, seed, profile, start)
    return MarketDataset(freq, imb, fcr)


def from_arrays(freq, indicator, settlement, fcr_prices, start=None) -> MarketDataset:
    """Build a dataset directly from arrays (mostly for crafted scenarios)."""
    start = _as_start(start)
    return MarketDataset(
        FrequencyTrace(start, np.asarray(freq, dtype=float)),
        ImbalancePriceSeries(start, np.asarray(indicator, dtype=float), np.asarray(settlement, dtype=float)),
        FcrPriceSeries(start, np.asarray(fcr_prices, dtype=float)),
    )
