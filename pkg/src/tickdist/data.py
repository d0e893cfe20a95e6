"""Tick ingestion, price-change labeling, window building, and the 7:3 split.

Prices live on the 0.01 grid and are stored as integer ticks (10.02 -> 1002),
so price differencing and class labeling are exact integer arithmetic.
Floating point enters only for log returns and one-hot features.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterator, Sequence

import numpy as np

TICKS_PER_UNIT = 100
N_CLASSES = 5

# class index of a tick change, clipped to [-2, +2]:  <=-2 -> 0, -1 -> 1,
# 0 -> 2, +1 -> 3, >=+2 -> 4
_COARSE_OF_FIVE = np.array([0, 0, 1, 2, 2], dtype=np.int64)

_PRICE_RE = re.compile(r"^\d+(\.\d+)?$")


class TickFileError(ValueError):
    """Raised for structurally unusable tick files (bad row, empty file)."""


class CoarseLabel(Enum):
    """Three-way direction bucket: down (A), unchanged (B), up (C)."""

    A = 0
    B = 1
    C = 2


@dataclass(frozen=True)
class TickRecord:
    """One transaction: ordinal position and price in integer ticks."""

    stock_id: str
    index: int
    price_ticks: int

    def __post_init__(self) -> None:
        if self.price_ticks <= 0:
            raise ValueError(f"price_ticks must be positive, got {self.price_ticks}")


class TickSeries(Sequence[TickRecord]):
    """A stock's transaction stream; behaves as a sequence of TickRecord."""

    def __init__(self, stock_id: str, prices_ticks: np.ndarray, skipped_rows: int = 0):
        prices = np.asarray(prices_ticks, dtype=np.int64)
        if prices.ndim != 1:
            raise ValueError("prices_ticks must be one-dimensional")
        if len(prices) and prices.min() <= 0:
            raise ValueError("all prices must be positive")
        self.stock_id = stock_id
        self.prices_ticks = prices
        self.skipped_rows = skipped_rows

    def __len__(self) -> int:
        return len(self.prices_ticks)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TickSeries(self.stock_id, self.prices_ticks[i], self.skipped_rows)
        return TickRecord(self.stock_id, int(np.arange(len(self))[i]), int(self.prices_ticks[i]))

    def __iter__(self) -> Iterator[TickRecord]:
        for i, p in enumerate(self.prices_ticks):
            yield TickRecord(self.stock_id, i, int(p))


def price_to_ticks(text: str) -> int | None:
    """Exact decimal-string to integer-tick conversion.

    Returns None when the value is not on the 0.01 grid (e.g. "10.025").
    Raises ValueError for strings that are not plain decimals at all.
    """
    text = text.strip()
    if not _PRICE_RE.match(text):
        raise ValueError(f"not a decimal price: {text!r}")
    whole, _, frac = text.partition(".")
    frac = frac.rstrip("0")
    if len(frac) > 2:
        return None
    frac = frac.ljust(2, "0")
    return int(whole) * TICKS_PER_UNIT + int(frac)


def parse_tick_file(stream: IO[str] | IO[bytes], name: str = "<stream>") -> TickSeries:
    """Parse a `stock_id,price` CSV into a TickSeries.

    The header row is optional.  Rows whose price is off the 0.01 grid or
    non-positive are skipped and counted (`skipped_rows`); structurally
    malformed rows raise TickFileError with the offending line number, as
    does an empty file.
    """
    prices: list[int] = []
    stock_id: str | None = None
    skipped = 0
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TickFileError(f"{name}:{lineno}: expected 2 columns, got {len(parts)}")
        sid, price_text = parts[0].strip(), parts[1].strip()
        try:
            ticks = price_to_ticks(price_text)
        except ValueError:
            if lineno == 1 and stock_id is None:
                continue  # optional header row
            raise TickFileError(f"{name}:{lineno}: malformed price {price_text!r}") from None
        if stock_id is None:
            stock_id = sid
        elif sid != stock_id:
            raise TickFileError(f"{name}:{lineno}: stock id changed from {stock_id!r} to {sid!r}")
        if ticks is None or ticks <= 0:
            skipped += 1
            continue
        prices.append(ticks)
    if not prices:
        raise TickFileError(f"{name}: no valid tick rows")
    return TickSeries(stock_id or "", np.array(prices, dtype=np.int64), skipped_rows=skipped)


def _as_price_array(prices) -> np.ndarray:
    if isinstance(prices, TickSeries):
        return prices.prices_ticks
    if isinstance(prices, np.ndarray):
        return prices.astype(np.int64, copy=False)
    seq = list(prices)
    if seq and isinstance(seq[0], TickRecord):
        return np.array([p.price_ticks for p in seq], dtype=np.int64)
    return np.asarray(seq, dtype=np.int64)


def compute_price_changes(prices) -> np.ndarray:
    """Consecutive tick differences; output j is price[j+1] - price[j]."""
    arr = _as_price_array(prices)
    if len(arr) < 2:
        raise ValueError("need at least 2 tick records to difference")
    return np.diff(arr)


def label_five_class(delta_ticks: int) -> int:
    """Five-way bucket of a tick change: (<=-2, -1, 0, +1, >=+2) -> 0..4."""
    return int(np.clip(delta_ticks, -2, 2)) + 2


def label_changes(deltas: np.ndarray) -> np.ndarray:
    """Vectorized `label_five_class`; returns int8 labels in 0..4."""
    return (np.clip(np.asarray(deltas), -2, 2) + 2).astype(np.int8)


def map_to_three_class(class5: int) -> CoarseLabel:
    """Merge the five classes into direction buckets {0,1}->A, 2->B, {3,4}->C."""
    if not 0 <= class5 <= 4:
        raise ValueError(f"five-class label out of range: {class5}")
    return CoarseLabel(int(_COARSE_OF_FIVE[class5]))


def coarsen_labels(labels5: np.ndarray) -> np.ndarray:
    """Vectorized three-class merge; returns int labels A=0, B=1, C=2."""
    return _COARSE_OF_FIVE[np.asarray(labels5, dtype=np.int64)]


@dataclass
class WindowSample:
    """History window of class labels plus the next-transaction target.

    `features` materializes the window as a one-hot [n_classes, W] matrix;
    only labels strictly before the target position are encoded.
    """

    label_window: np.ndarray
    target: int
    n_classes: int = N_CLASSES

    @property
    def features(self) -> np.ndarray:
        return np.eye(self.n_classes, dtype=np.float64)[np.asarray(self.label_window, dtype=np.int64)].T

    @property
    def one_hot_target(self) -> np.ndarray:
        y = np.zeros(self.n_classes, dtype=np.float64)
        y[self.target] = 1.0
        return y


class WindowSet(Sequence[WindowSample]):
    """Ordered window samples stored compactly as label arrays."""

    def __init__(self, windows: np.ndarray, targets: np.ndarray, n_classes: int = N_CLASSES):
        self.windows = np.asarray(windows, dtype=np.int8)
        self.targets = np.asarray(targets, dtype=np.int64)
        if self.windows.ndim != 2 or len(self.windows) != len(self.targets):
            raise ValueError("windows must be [n, W] with one target per row")
        self.n_classes = n_classes

    @property
    def window_length(self) -> int:
        return self.windows.shape[1]

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return WindowSet(self.windows[i], self.targets[i], self.n_classes)
        return WindowSample(self.windows[i], int(self.targets[i]), self.n_classes)

    def feature_batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One-hot features [B, n_classes, W] and one-hot targets [B, n_classes]."""
        eye = np.eye(self.n_classes, dtype=np.float64)
        feats = eye[self.windows[idx].astype(np.int64)].transpose(0, 2, 1)
        onehot = eye[self.targets[idx]]
        return feats, onehot


def build_windows(labels: np.ndarray, window: int, n_classes: int = N_CLASSES) -> WindowSet:
    """Slide a length-`window` history over the label sequence.

    Sample j covers labels[j : j+window] and targets labels[j+window], so a
    sequence of n labels yields n - window samples and no sample ever sees
    data at or past its target position.
    """
    labels = np.asarray(labels, dtype=np.int8)
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(labels) <= window:
        raise ValueError(f"need more than {window} labels, got {len(labels)}")
    windows = np.lib.stride_tricks.sliding_window_view(labels, window)[:-1].copy()
    return WindowSet(windows, labels[window:].astype(np.int64), n_classes)


def split_train_test(samples, ratio: float = 0.7):
    """Chronological split: first floor(ratio * n) samples train, rest test."""
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    cut = int(np.floor(ratio * n))
    return samples[:cut], samples[cut:]


def compute_log_returns(prices) -> np.ndarray:
    """Per-transaction log returns of prices converted back to currency units."""
    arr = _as_price_array(prices)
    if len(arr) < 2:
        raise ValueError("need at least 2 tick records for returns")
    if arr.min() <= 0:
        raise ValueError("all prices must be positive")
    return np.diff(np.log(arr / TICKS_PER_UNIT))


@dataclass
class StockDataset:
    """One stock's train/test window samples plus the aligned return series.

    `train_return_count` marks how many leading log returns precede the first
    test target; volatility models may fit on exactly that prefix without
    touching the test period.
    """

    stock_id: str
    train_samples: WindowSet
    test_samples: WindowSet
    returns: np.ndarray
    prices_ticks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    window: int = 0
    train_return_count: int = 0

    @property
    def n_samples(self) -> int:
        return len(self.train_samples) + len(self.test_samples)

    def test_prev_prices(self) -> np.ndarray:
        """Price (in ticks) preceding each test target transaction."""
        first = self.window + len(self.train_samples)
        idx = np.arange(first, first + len(self.test_samples))
        return self.prices_ticks[idx]


def make_stock_dataset(series: TickSeries, window: int, ratio: float = 0.7) -> StockDataset:
    """Label a tick series, window it, and split 7:3 by target position."""
    deltas = compute_price_changes(series)
    labels = label_changes(deltas)
    samples = build_windows(labels, window)
    train, test = split_train_test(samples, ratio)
    returns = compute_log_returns(series)
    return StockDataset(
        stock_id=series.stock_id,
        train_samples=train,
        test_samples=test,
        returns=returns,
        prices_ticks=series.prices_ticks,
        window=window,
        train_return_count=window + len(train),
    )
