"""Residual scoring, cutoff fitting, and evaluation metrics.

A window's anomaly score is the norm of (reversed input - reconstruction),
computed deterministically (latent noise off). Scores at or below the cutoff
tau mean "normal". Two cutoff policies: the unsupervised two-sigma rule
(smallest residual covering >= 95.45% of training scores) and the supervised
Youden maximum.

Metric naming note: `metrics_predictive` computes TPR = TP/(TP+FP) and
TNR = TN/(TN+FN) - predictive-value style ratios used in some reports -
while `metrics_conventional` is the textbook sensitivity/specificity pair.
ROC, AUC, and Youden use the conventional pair; the predictive variant of
Youden is available behind a flag for table replication.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    N_LAYERS,
    SeqVaeParams,
    apply_proj,
    flatten_states,
    run_stack,
)
from .preprocess import CycleIndex, segment_cycles
from .traces import DataError, SignalTrace, apply_norm, atomic_write_text

#: Coverage ratio of the two-sigma rule, as parts in 10^4 (exact integer math).
TWO_SIGMA_PARTS = 9545

RESIDUAL_CHUNK = 512


def _norm_value(diff: np.ndarray, norm: str) -> float:
    if norm == "l2":
        return float(np.sqrt(np.sum(diff * diff)))
    if norm == "l1":
        return float(np.sum(np.abs(diff)))
    raise DataError("norm must be l1 or l2")


def _recon_batch(params: SeqVaeParams, inputs: np.ndarray) -> np.ndarray:
    """Deterministic reconstructions (eps=0): encoder + recon decoder only."""
    cfg = params.config
    b, t_in, d = inputs.shape
    if t_in != cfg.n_input or d != cfg.data_dim:
        raise DataError("window shape does not match the model config")
    hd = cfg.hidden_dim
    x_tm = np.ascontiguousarray(inputs.transpose(1, 0, 2))
    zeros = np.zeros((b, hd))
    _, finals, _ = run_stack(params.encoder, x_tm, t_in, b, [(zeros, zeros)] * N_LAYERS)
    (h1, c1), (h2, c2) = finals
    h_flat = flatten_states(h1, h2, c1, c2)
    heads = params.heads
    z = h_flat @ heads.w_mu.T + heads.b_mu  # eps = 0 makes z = mu
    dec_h0 = z @ heads.w_z.T + heads.b_z
    init = [(dec_h0[:, :hd], c1), (dec_h0[:, hd:], c2)]
    rec_h2, _, _ = run_stack(params.decoder_recon, None, t_in, b, init)
    return apply_proj(params.out_recon, rec_h2)


def residual_batch(
    params: SeqVaeParams,
    inputs: np.ndarray,
    norm: str = "l2",
    n_workers: int = 1,
) -> np.ndarray:
    """Residual score per window; chunked, deterministic, parallelizable."""
    if norm not in ("l1", "l2"):
        raise DataError("norm must be l1 or l2")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[:, :, None]
    n = inputs.shape[0]
    out = np.empty(n)

    def work(lo: int, hi: int) -> None:
        recon = _recon_batch(params, inputs[lo:hi])
        diff = recon - inputs[lo:hi].transpose(1, 0, 2)[::-1]
        if norm == "l2":
            out[lo:hi] = np.sqrt(np.sum(diff * diff, axis=(0, 2)))
        else:
            out[lo:hi] = np.sum(np.abs(diff), axis=(0, 2))

    bounds = [(lo, min(lo + RESIDUAL_CHUNK, n)) for lo in range(0, n, RESIDUAL_CHUNK)]
    if n_workers > 1 and len(bounds) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda bd: work(*bd), bounds))
    else:
        for lo, hi in bounds:
            work(lo, hi)
    return out


def residual(params: SeqVaeParams, window: np.ndarray, norm: str = "l2") -> float:
    """Anomaly score of one window: norm of (reversed input - reconstruction)."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    return float(residual_batch(params, window[None, ...], norm=norm)[0])


def assess(a: float, tau: float) -> int:
    """1 (normal) iff the residual does not exceed the cutoff; boundary is normal."""
    return 1 if a <= tau else 0


def fit_two_sigma(residuals: np.ndarray) -> float:
    """Smallest residual tau whose coverage count/N reaches 95.45%.

    Equivalent to the k-th smallest value with k = ceil(0.9545*N); the
    comparison 10^4*k >= 9545*N is done in exact integers so boundary
    multisets never suffer float rounding.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    n = residuals.size
    if n == 0:
        raise DataError("cannot fit a cutoff on zero residuals")
    k = -((-TWO_SIGMA_PARTS * n) // 10**4)  # ceil(0.9545 * n), exact
    return float(np.partition(residuals, k - 1)[k - 1])


# --------------------------------------------------------------------------
# Confusion metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts with the positive class = normal = label 1."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionCounts:
    t = np.asarray(y_true).astype(np.int64)
    p = np.asarray(y_pred).astype(np.int64)
    if t.shape != p.shape:
        raise DataError("label arrays must have equal shape")
    return ConfusionCounts(
        tp=int(np.sum((t == 1) & (p == 1))),
        tn=int(np.sum((t == 0) & (p == 0))),
        fp=int(np.sum((t == 0) & (p == 1))),
        fn=int(np.sum((t == 1) & (p == 0))),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics_predictive(c: ConfusionCounts) -> dict[str, float | None]:
    """Accuracy plus predictive-value ratios: TPR = TP/(TP+FP), TNR = TN/(TN+FN).

    Zero denominators yield None (undefined marker).
    """
    return {
        "acc": _ratio(c.tp + c.tn, c.total),
        "tpr": _ratio(c.tp, c.tp + c.fp),
        "tnr": _ratio(c.tn, c.tn + c.fn),
    }


def metrics_conventional(c: ConfusionCounts) -> dict[str, float | None]:
    """Textbook pair: sensitivity = TP/(TP+FN), specificity = TN/(TN+FP)."""
    return {
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
    }


# --------------------------------------------------------------------------
# ROC / AUC / Youden
# --------------------------------------------------------------------------


def _class_counts(labels: np.ndarray) -> tuple[int, int]:
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("both classes must be present")
    return n_pos, n_neg


@dataclass
class RocResult:
    points: list[tuple[float, float]]  # (1 - specificity, sensitivity) per threshold
    thresholds: list[float]
    auc: float


def _threshold_sweep(residuals: np.ndarray, labels: np.ndarray):
    """Cumulative class counts at each distinct residual, ascending.

    Returns (distinct values, normals <= v, motions <= v, n_pos, n_neg).
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if residuals.shape != labels.shape:
        raise DataError("residuals and labels must align")
    n_pos, n_neg = _class_counts(labels)
    order = np.argsort(residuals, kind="stable")
    r = residuals[order]
    l = labels[order]
    values, starts = np.unique(r, return_index=True)
    pos_cum = np.cumsum(l == 1)
    neg_cum = np.cumsum(l == 0)
    ends = np.append(starts[1:], len(r)) - 1
    return values, pos_cum[ends], neg_cum[ends], n_pos, n_neg


def roc_auc(residuals: np.ndarray, labels: np.ndarray) -> RocResult:
    """ROC over all distinct residual thresholds plus trapezoid AUC.

    AUC equals the probability that a motion window outscores a normal one,
    ties counted 1/2. Prediction rule at each threshold: normal iff a <= tau.
    """
    values, pos_le, neg_le, n_pos, n_neg = _threshold_sweep(residuals, labels)
    xs = [0.0]
    ys = [0.0]
    for k in range(len(values)):
        xs.append(float(neg_le[k] / n_neg))  # 1 - specificity
        ys.append(float(pos_le[k] / n_pos))  # sensitivity
    auc = 0.0
    for k in range(1, len(xs)):
        auc += 0.5 * (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1])
    return RocResult(
        points=list(zip(xs, ys)),
        thresholds=[-np.inf] + [float(v) for v in values],
        auc=float(auc),
    )


def youden_max(
    residuals: np.ndarray, labels: np.ndarray, use_predictive: bool = False
) -> float:
    """Cutoff maximizing J over all observed residual values.

    J = sensitivity + specificity - 1 by default; with use_predictive the
    ratios of metrics_predictive are used instead (candidates with undefined
    ratios are skipped). Ties resolve to the smallest cutoff.
    """
    values, pos_le, neg_le, n_pos, n_neg = _threshold_sweep(residuals, labels)
    best_tau = None
    best_j = -np.inf
    for k in range(len(values)):
        tp = int(pos_le[k])
        fp = int(neg_le[k])
        fn = n_pos - tp
        tn = n_neg - fp
        if use_predictive:
            if tp + fp == 0 or tn + fn == 0:
                continue
            j = tp / (tp + fp) + tn / (tn + fn) - 1.0
        else:
            j = tp / n_pos + tn / n_neg - 1.0
        if j > best_j:
            best_j = j
            best_tau = float(values[k])
    if best_tau is None:
        raise DataError("no candidate cutoff had defined metrics")
    return best_tau


# --------------------------------------------------------------------------
# Whole-trace assessment
# --------------------------------------------------------------------------


@dataclass
class TraceAssessment:
    """Stride-1 window predictions aligned back onto one trace.

    track is per-sample: 1 normal, 0 motion-flagged, -1 unassessed (no
    anchor covers the sample). In cycle mode cycle_track carries the same
    convention per cycle and track is its per-sample rendering.
    """

    trace_id: str
    mode: str
    tau: float
    anchors: np.ndarray
    residuals: np.ndarray
    preds: np.ndarray
    track: np.ndarray
    cycles: list[CycleIndex] | None = None
    cycle_track: np.ndarray | None = None
    warning: str | None = None


def assess_trace(checkpoint, trace: SignalTrace, tau: float | None = None) -> TraceAssessment:
    """Slide stride-1 windows over a trace and threshold their residuals.

    The anchor of a window is its last input sample (point mode) or last
    input cycle (cycle mode); leading positions have no anchor and stay -1.
    Normalization stats stored in the checkpoint are applied first. A trace
    too short for a single window yields an empty assessment with a warning
    rather than an error.
    """
    cfg = checkpoint.train_config
    params = checkpoint.params
    if tau is None:
        tau = checkpoint.tau
    if tau is None:
        raise DataError("no cutoff: pass tau or use a checkpoint with one fitted")
    work = apply_norm(trace, checkpoint.norm_stats) if checkpoint.norm_stats else trace
    n = len(work)
    track = np.full(n, -1, dtype=np.int8)
    empty = np.empty(0)

    if cfg.mode == "point":
        r = cfg.n_input
        if n < r:
            return TraceAssessment(
                trace.trace_id, "point", float(tau), empty.astype(np.int64),
                empty, empty.astype(np.int8), track,
                warning=f"trace shorter than one window ({n} < {r})",
            )
        from numpy.lib.stride_tricks import sliding_window_view

        windows = sliding_window_view(work.cvs, r)[:, :, None]
        res = residual_batch(params, windows, norm=cfg.norm)
        preds = (res <= tau).astype(np.int8)
        anchors = np.arange(r - 1, n, dtype=np.int64)
        track[anchors] = preds
        return TraceAssessment(
            trace.trace_id, "point", float(tau), anchors, res, preds, track
        )

    big_r = cfg.n_input
    try:
        cycles = segment_cycles(work)
    except DataError as exc:
        return TraceAssessment(
            trace.trace_id, "cycle", float(tau), empty.astype(np.int64),
            empty, empty.astype(np.int8), track,
            cycles=[], cycle_track=np.empty(0, dtype=np.int8),
            warning=f"cycle segmentation failed: {exc}",
        )
    from .preprocess import embed_cycles

    emb = embed_cycles(work, cycles, cfg.data_dim)
    n_cyc = len(cycles)
    cycle_track = np.full(n_cyc, -1, dtype=np.int8)
    if n_cyc < big_r:
        return TraceAssessment(
            trace.trace_id, "cycle", float(tau), empty.astype(np.int64),
            empty, empty.astype(np.int8), track,
            cycles=cycles, cycle_track=cycle_track,
            warning=f"trace has {n_cyc} cycles, window needs {big_r}",
        )
    windows = np.stack([emb[s : s + big_r] for s in range(n_cyc - big_r + 1)])
    res = residual_batch(params, windows, norm=cfg.norm)
    preds = (res <= tau).astype(np.int8)
    anchors = np.arange(big_r - 1, n_cyc, dtype=np.int64)
    cycle_track[anchors] = preds
    for j, c in enumerate(cycles):
        track[c.start : c.end] = cycle_track[j]
    return TraceAssessment(
        trace.trace_id, "cycle", float(tau), anchors, res, preds, track,
        cycles=cycles, cycle_track=cycle_track,
    )


# --------------------------------------------------------------------------
# Evaluation reports
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    n_windows: int
    tau: float
    counts: ConfusionCounts
    predictive: dict[str, float | None]
    conventional: dict[str, float | None]
    auc: float | None
    roc: RocResult | None
    tau_two_sigma: float | None = None
    tau_youden: float | None = None
    extra: dict[str, float] = field(default_factory=dict)


def evaluate(residuals: np.ndarray, labels: np.ndarray, tau: float) -> EvalReport:
    """All metrics of a labeled window set at one cutoff.

    ROC/AUC are included when both classes are present, otherwise None.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    preds = (residuals <= tau).astype(np.int64)
    counts = confusion(labels, preds)
    try:
        roc = roc_auc(residuals, labels)
        auc = roc.auc
    except DataError:
        roc = None
        auc = None
    return EvalReport(
        n_windows=len(residuals),
        tau=float(tau),
        counts=counts,
        predictive=metrics_predictive(counts),
        conventional=metrics_conventional(counts),
        auc=auc,
        roc=roc,
    )


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def write_report(report: EvalReport, path: str | Path) -> None:
    """Key,value text report; order fixed for diffability."""
    c = report.counts
    lines = [
        "key,value",
        f"n_windows,{report.n_windows}",
        f"tau,{report.tau!r}",
        f"tp,{c.tp}",
        f"tn,{c.tn}",
        f"fp,{c.fp}",
        f"fn,{c.fn}",
        f"acc,{_fmt(report.predictive['acc'])}",
        f"tpr_predictive,{_fmt(report.predictive['tpr'])}",
        f"tnr_predictive,{_fmt(report.predictive['tnr'])}",
        f"sensitivity,{_fmt(report.conventional['sensitivity'])}",
        f"specificity,{_fmt(report.conventional['specificity'])}",
        f"auc,{_fmt(report.auc)}",
    ]
    if report.tau_two_sigma is not None:
        lines.append(f"tau_two_sigma,{float(report.tau_two_sigma)!r}")
    if report.tau_youden is not None:
        lines.append(f"tau_youden,{float(report.tau_youden)!r}")
    for k in sorted(report.extra):
        lines.append(f"{k},{float(report.extra[k])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_roc_csv(roc: RocResult, path: str | Path) -> None:
    lines = ["threshold,fpr,sensitivity"]
    for tau, (x, y) in zip(roc.thresholds, roc.points):
        lines.append(f"{tau!r},{x!r},{y!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
