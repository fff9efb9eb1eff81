"""R-peak detection, cycle segmentation, and model window extraction.

The detector is a classic energy pipeline: difference filter, squaring,
moving-window integration, adaptive thresholding with a refractory period,
then refinement back onto the raw ECG. It needs no training data and no
external dependencies beyond numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traces import DataError, SignalTrace

#: Minimum spacing between accepted peaks, seconds.
REFRACTORY_S = 0.25

#: Moving-window integration length, seconds.
MWI_S = 0.15

#: Fraction of the running peak average used as detection threshold.
THRESH_FRAC = 0.4


class InsufficientBeatsError(DataError):
    """Raised when fewer than 2 R peaks are found in a trace."""


def _difference_filter(x: np.ndarray, fs: float) -> np.ndarray:
    """Five-point derivative, approximating a 5-25 Hz band emphasis."""
    # classic kernel (1/8)[-1 -2 0 2 1] scaled by fs; padding keeps length
    pad = np.pad(x, 2, mode="edge")
    return (fs / 8.0) * (
        -pad[:-4] - 2 * pad[1:-3] + 2 * pad[3:-1] + pad[4:]
    )


def detect_r_peaks(ecg: np.ndarray, fs: float) -> np.ndarray:
    """Return R-peak sample indices, strictly increasing.

    Raises InsufficientBeatsError when fewer than two beats survive
    thresholding, since downstream cycle segmentation needs intervals.
    """
    ecg = np.asarray(ecg, dtype=np.float64)
    if ecg.ndim != 1:
        raise DataError("ecg must be 1-d")
    n = len(ecg)
    deriv = _difference_filter(ecg, fs)
    energy = deriv * deriv
    mwi_len = max(1, int(round(MWI_S * fs)))
    mwi = np.convolve(energy, np.full(mwi_len, 1.0 / mwi_len), mode="same")

    refractory = max(1, int(round(REFRACTORY_S * fs)))
    # learning phase: seed the running peak average from the first 2 seconds
    warm = mwi[: max(mwi_len, int(2 * fs))]
    peak_avg = float(np.max(warm)) if len(warm) else 0.0
    if peak_avg <= 0:
        raise InsufficientBeatsError("flat ECG, no beats found")

    peaks: list[int] = []
    thresh = THRESH_FRAC * peak_avg
    i = 1
    while i < n - 1:
        if mwi[i] >= thresh and mwi[i] >= mwi[i - 1] and mwi[i] >= mwi[i + 1]:
            # refine onto the raw ECG maximum inside the integration window
            lo = max(0, i - mwi_len)
            hi = min(n, i + mwi_len + 1)
            cand = lo + int(np.argmax(ecg[lo:hi]))
            if not peaks or cand - peaks[-1] >= refractory:
                peaks.append(cand)
                peak_avg += (mwi[i] - peak_avg) / 8.0  # running average, 1/8 step
                thresh = THRESH_FRAC * peak_avg
                i += refractory
                continue
            elif ecg[cand] > ecg[peaks[-1]]:
                peaks[-1] = cand  # same beat, better apex
        i += 1
    if len(peaks) < 2:
        raise InsufficientBeatsError(f"found {len(peaks)} peaks, need >= 2")
    return np.asarray(sorted(set(peaks)), dtype=np.int64)


# --------------------------------------------------------------------------
# Cycle segmentation and embedding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleIndex:
    """Sample span [start, end) of one cardiac cycle within its trace."""

    trace_id: str
    cycle_no: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


def segment_cycles(trace: SignalTrace, peaks: np.ndarray | None = None) -> list[CycleIndex]:
    """Split a trace into R-to-R cycles. Partial edges are dropped."""
    if peaks is None:
        peaks = detect_r_peaks(trace.ecg, trace.fs)
    peaks = np.asarray(peaks, dtype=np.int64)
    if len(peaks) < 2:
        raise InsufficientBeatsError("need >= 2 peaks to segment cycles")
    return [
        CycleIndex(trace.trace_id, j, int(peaks[j]), int(peaks[j + 1]))
        for j in range(len(peaks) - 1)
    ]


def embed_cycle(samples: np.ndarray, dim: int = 150) -> np.ndarray:
    """Resample one cycle to a fixed-length vector by linear interpolation."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 2:
        raise DataError("cycle must contain at least 2 samples")
    src = np.linspace(0.0, 1.0, len(samples))
    dst = np.linspace(0.0, 1.0, dim)
    return np.interp(dst, src, samples)


def embed_cycles(trace: SignalTrace, cycles: list[CycleIndex], dim: int = 150) -> np.ndarray:
    """Embed every cycle of one trace; returns shape (n_cycles, dim)."""
    out = np.empty((len(cycles), dim), dtype=np.float64)
    for i, c in enumerate(cycles):
        out[i] = embed_cycle(trace.cvs[c.start : c.end], dim)
    return out


def cycle_labels(trace: SignalTrace, cycles: list[CycleIndex]) -> np.ndarray:
    """Per-cycle labels: 1 only when every sample in the span is labeled 1.

    An unlabeled trace counts as all-normal.
    """
    if trace.labels is None:
        return np.ones(len(cycles), dtype=np.int8)
    return np.asarray(
        [int(np.all(trace.labels[c.start : c.end] == 1)) for c in cycles],
        dtype=np.int8,
    )


def reverse(seq: np.ndarray) -> np.ndarray:
    """Reverse along the time axis (axis 0 for 2-d, the only axis for 1-d)."""
    return np.ascontiguousarray(seq[::-1])


# --------------------------------------------------------------------------
# Window extraction
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PointWindow:
    """Sample-level window: r input samples then p future samples."""

    trace_id: str
    start: int
    inputs: np.ndarray  # (r, 1)
    future: np.ndarray  # (p, 1)
    input_label: int  # 1 iff all r input samples are labeled 1


@dataclass(frozen=True)
class CycleWindow:
    """Cycle-level window: R embedded cycles then P future cycles."""

    trace_id: str
    start_cycle: int
    inputs: np.ndarray  # (R, dim)
    future: np.ndarray  # (P, dim)
    input_label: int  # 1 iff all R input cycles are fully clean


def make_point_windows(
    trace: SignalTrace,
    r: int,
    p: int,
    stride: int = 1,
    values: np.ndarray | None = None,
) -> list[PointWindow]:
    """Slide (r input, p future) sample windows along the trace.

    `values` substitutes a transformed signal (e.g. normalized) while labels
    still come from the trace. Windows that would cross the end are dropped.
    """
    if r < 1 or p < 0 or stride < 1:
        raise DataError("need r >= 1, p >= 0, stride >= 1")
    x = trace.cvs if values is None else np.asarray(values, dtype=np.float64)
    if len(x) != len(trace):
        raise DataError("values length must match the trace")
    labels = trace.labels
    out = []
    total = r + p
    for s in range(0, len(x) - total + 1, stride):
        out.append(PointWindow(
            trace_id=trace.trace_id,
            start=s,
            inputs=x[s : s + r, None],
            future=x[s + r : s + total, None],
            input_label=1 if labels is None else int(np.all(labels[s : s + r] == 1)),
        ))
    return out


def make_cycle_windows(
    trace: SignalTrace,
    big_r: int,
    big_p: int,
    dim: int = 150,
    stride: int = 1,
    cycles: list[CycleIndex] | None = None,
) -> list[CycleWindow]:
    """Slide (R input, P future) cycle windows over the embedded cycles."""
    if big_r < 1 or big_p < 0 or stride < 1:
        raise DataError("need R >= 1, P >= 0, stride >= 1")
    if cycles is None:
        cycles = segment_cycles(trace)
    emb = embed_cycles(trace, cycles, dim)
    lab = cycle_labels(trace, cycles)
    out = []
    total = big_r + big_p
    for s in range(0, len(cycles) - total + 1, stride):
        out.append(CycleWindow(
            trace_id=trace.trace_id,
            start_cycle=s,
            inputs=emb[s : s + big_r],
            future=emb[s + big_r : s + total],
            input_label=int(np.all(lab[s : s + big_r] == 1)),
        ))
    return out


def stack_windows(windows: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack homogeneous windows into (inputs, futures, labels) arrays.

    inputs: (n, T_in, d); futures: (n, T_out, d); labels: (n,) int8.
    """
    if not windows:
        raise DataError("no windows to stack")
    inputs = np.stack([w.inputs for w in windows])
    futures = np.stack([w.future for w in windows])
    labels = np.asarray([w.input_label for w in windows], dtype=np.int8)
    return inputs, futures, labels
