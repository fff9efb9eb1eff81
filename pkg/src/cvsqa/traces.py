"""Core signal types, CSV I/O, normalization, and corpus splitting.

A trace is a uniformly sampled record of the cardiac volume signal (CVS)
together with a synchronized ECG channel and, optionally, per-sample
quality labels (1 = normal, 0 = motion-influenced). Traces are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Base class for malformed or inconsistent input data."""


class TraceParseError(DataError):
    """A trace file row could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SamplingError(DataError):
    """Trace timestamps are not uniformly spaced within tolerance."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled CVS + ECG record, with optional per-sample labels.

    Implicit timestamps: t_k = t0 + k / fs.
    """

    trace_id: str
    fs: float
    t0: float
    cvs: np.ndarray
    ecg: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "cvs", _readonly(np.asarray(self.cvs, dtype=np.float64)))
        object.__setattr__(self, "ecg", _readonly(np.asarray(self.ecg, dtype=np.float64)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _readonly(np.asarray(self.labels, dtype=np.int8)))
        if self.cvs.ndim != 1 or len(self.cvs) < 1:
            raise DataError("cvs must be a non-empty 1-d sequence")
        if len(self.ecg) != len(self.cvs):
            raise DataError("ecg length must match cvs length")
        if self.labels is not None:
            if len(self.labels) != len(self.cvs):
                raise DataError("labels length must match cvs length")
            bad = set(np.unique(self.labels)) - {0, 1}
            if bad:
                raise DataError(f"labels must be 0/1, found {sorted(bad)}")
        if not (self.fs > 0):
            raise DataError("fs must be positive")

    def __len__(self) -> int:
        return len(self.cvs)

    @property
    def duration(self) -> float:
        return len(self.cvs) / self.fs

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.cvs), dtype=np.float64) / self.fs

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignalTrace):
            return NotImplemented
        if (self.trace_id, self.fs, self.t0) != (other.trace_id, other.fs, other.t0):
            return False
        if not (np.array_equal(self.cvs, other.cvs) and np.array_equal(self.ecg, other.ecg)):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class NormStats:
    """Affine normalization statistics, fitted on training data only."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise DataError("std must be positive")


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test partition of whole trace ids."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        ids = list(self.train) + list(self.val) + list(self.test)
        if len(ids) != len(set(ids)):
            raise DataError("split partitions must be disjoint")


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

#: Relative jitter bound on the sampling step; larger deviations are rejected.
JITTER_TOL = 0.01


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write a text file via temp-file + rename so readers never see partials."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_trace(path: str | Path) -> SignalTrace:
    """Read one trace from a `t,cvs,ecg[,label]` CSV file.

    The sampling rate is inferred from the median time step; any step
    deviating from the median by more than ``JITTER_TOL`` is rejected.
    The trace id is the file stem.
    """
    path = Path(path)
    with open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines:
        raise TraceParseError(1, "empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if header[:3] != ["t", "cvs", "ecg"] or header not in (["t", "cvs", "ecg"], ["t", "cvs", "ecg", "label"]):
        raise TraceParseError(1, f"expected header 't,cvs,ecg[,label]', got {lines[0]!r}")
    has_labels = len(header) == 4

    n_cols = len(header)
    t, cvs, ecg, labels = [], [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n_cols:
            raise TraceParseError(line_no, f"expected {n_cols} columns, got {len(cells)}")
        try:
            t.append(float(cells[0]))
            cvs.append(float(cells[1]))
            ecg.append(float(cells[2]))
        except ValueError as e:
            raise TraceParseError(line_no, str(e)) from None
        if has_labels:
            cell = cells[3].strip()
            if cell not in ("0", "1"):
                raise TraceParseError(line_no, f"label must be 0 or 1, got {cell!r}")
            labels.append(int(cell))

    if len(t) < 1:
        raise TraceParseError(2, "no data rows")
    t_arr = np.asarray(t, dtype=np.float64)
    if len(t_arr) == 1:
        raise SamplingError("cannot infer sampling rate from a single sample")
    steps = np.diff(t_arr)
    if np.any(steps <= 0):
        k = int(np.argmax(steps <= 0))
        raise SamplingError(f"time not strictly increasing at row {k + 3}")
    step = float(np.median(steps))
    if np.any(np.abs(steps - step) > JITTER_TOL * step):
        raise SamplingError(f"sampling jitter exceeds {JITTER_TOL:.0%} of the median step {step:g} s")
    # Snap to 12 significant digits so a written trace reads back with its
    # original rate despite last-ulp noise in the time column.
    fs = float(f"{1.0 / step:.12g}")

    return SignalTrace(
        trace_id=path.stem,
        fs=fs,
        t0=float(t_arr[0]),
        cvs=np.asarray(cvs),
        ecg=np.asarray(ecg),
        labels=np.asarray(labels, dtype=np.int8) if has_labels else None,
    )


def save_trace(trace: SignalTrace, path: str | Path) -> None:
    """Write a trace as CSV with round-trip-safe float formatting."""
    has_labels = trace.labels is not None
    rows = ["t,cvs,ecg,label" if has_labels else "t,cvs,ecg"]
    t = trace.times()
    for k in range(len(trace)):
        row = f"{float(t[k])!r},{float(trace.cvs[k])!r},{float(trace.ecg[k])!r}"
        if has_labels:
            row += f",{int(trace.labels[k])}"
        rows.append(row)
    atomic_write_text(path, "\n".join(rows) + "\n")


def load_corpus(directory: str | Path) -> list[SignalTrace]:
    """Load every ``*.csv`` trace in a directory, sorted by trace id."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise DataError(f"no trace files in {directory}")
    return [load_trace(p) for p in paths]


def write_corpus(traces: list[SignalTrace], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for trace in traces:
        p = directory / f"{trace.trace_id}.csv"
        save_trace(trace, p)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# Normalization
# --------------------------------------------------------------------------

STD_FLOOR = 1e-12


def fit_norm(traces: list[SignalTrace]) -> NormStats:
    """Mean/std of all CVS samples pooled over the given (training) traces."""
    if not traces:
        raise DataError("fit_norm requires at least one trace")
    pooled = np.concatenate([t.cvs for t in traces])
    if pooled.size == 0:
        raise DataError("fit_norm requires at least one sample")
    return NormStats(mean=float(pooled.mean()), std=max(float(pooled.std()), STD_FLOOR))


def apply_norm(trace: SignalTrace, stats: NormStats) -> SignalTrace:
    """Standardize the CVS channel; ECG and labels pass through unchanged."""
    return SignalTrace(
        trace_id=trace.trace_id,
        fs=trace.fs,
        t0=trace.t0,
        cvs=(trace.cvs - stats.mean) / stats.std,
        ecg=trace.ecg,
        labels=trace.labels,
    )


def invert_norm(trace: SignalTrace, stats: NormStats) -> SignalTrace:
    return SignalTrace(
        trace_id=trace.trace_id,
        fs=trace.fs,
        t0=trace.t0,
        cvs=trace.cvs * stats.std + stats.mean,
        ecg=trace.ecg,
        labels=trace.labels,
    )


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------


def split_traces(
    trace_ids: list[str],
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> DatasetSplit:
    """Partition whole trace ids into train/val/test with a seeded shuffle.

    Splitting is by trace (subject), never within a trace, so no window can
    leak between partitions.
    """
    if len(set(trace_ids)) != len(trace_ids):
        raise DataError("trace ids must be unique")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DataError("split fractions must sum to 1")
    ids = sorted(trace_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )
