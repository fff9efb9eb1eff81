"""HTTP API for assisted labeling of cardiac volume traces.

Serves traces, model residuals, and thresholded predictions; accepts human
annotations into an append-only journal; recomputes metrics as the cutoff
moves; exports machine labels for review. Residuals per trace are computed
once and cached; changing the cutoff never touches them. Annotation writes
are serialized by a process-wide lock and fsynced before the request is
acknowledged, so an acknowledged record survives a restart.

Payload notes: a cutoff of +infinity is legal (everything passes as normal)
but JSON has no literal for it, so responses carry it as the string "inf"
and request bodies may do the same. Annotation spans are half-open cycle
ranges [start_cycle, end_cycle) with label 1 normal, 0 motion; cycles not
covered by any span count as normal.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from .assess import (
    confusion,
    fit_two_sigma,
    metrics_conventional,
    metrics_predictive,
    residual_batch,
    youden_max,
)
from .preprocess import CycleIndex, cycle_labels, embed_cycles, segment_cycles
from .traces import DataError, SignalTrace, apply_norm, load_corpus, save_trace
from .training import Checkpoint, load_checkpoint

ANNOTATION_SOURCES = ("machine", "original", "guided")
JOURNAL_NAME = "annotations.jsonl"

#: Series responses longer than this are min/max bucketed by default.
MAX_SERIES_POINTS = 4000

#: Anchors whose residual sits within this relative band around the cutoff
#: are listed for priority human review on export.
LOW_MARGIN_FRAC = 0.1


def _parse_tau(value, where: str) -> float:
    """Accept numbers or 'inf'; reject NaN and negatives with a 400."""
    try:
        tau = float(value)
    except (TypeError, ValueError):
        raise HTTPException(400, f"{where}: cutoff must be a number or 'inf'")
    if math.isnan(tau):
        raise HTTPException(400, f"{where}: cutoff must not be NaN")
    if tau < 0:
        raise HTTPException(400, f"{where}: cutoff must be >= 0")
    return tau


def _tau_json(tau: float):
    return tau if math.isfinite(tau) else "inf"


@dataclass
class CachedResiduals:
    """Per-trace model outputs that depend only on the checkpoint."""

    mode: str
    anchors: np.ndarray
    residuals: np.ndarray
    anchor_labels: np.ndarray | None  # window label per anchor, 1 all-normal
    n_samples: int
    cycles: list[CycleIndex] | None
    warning: str | None


class _State:
    """Mutable session state behind the app; all writes lock-guarded."""

    def __init__(self, data_dir: Path, checkpoint: Checkpoint | None, checkpoint_id: str | None):
        self.data_dir = data_dir
        self.checkpoint = checkpoint
        self.checkpoint_id = checkpoint_id
        self.tau: float | None = checkpoint.tau if checkpoint else None
        self.traces: dict[str, SignalTrace] = {
            t.trace_id: t for t in load_corpus(data_dir)
        }
        self.residuals: dict[str, CachedResiduals] = {}
        self.trace_cycles: dict[str, list[CycleIndex]] = {}
        self.journal_path = data_dir / JOURNAL_NAME
        self.records: list[dict] = _read_journal(self.journal_path)
        self.lock = threading.Lock()


def _read_journal(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _append_journal(state: _State, record: dict) -> None:
    """Append one record and fsync before returning (durability contract)."""
    with open(state.journal_path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
        f.flush()
        os.fsync(f.fileno())
    state.records.append(record)


def _get_trace(state: _State, trace_id: str) -> SignalTrace:
    trace = state.traces.get(trace_id)
    if trace is None:
        raise HTTPException(404, f"unknown trace {trace_id!r}")
    return trace


def _get_cycles(state: _State, trace_id: str) -> list[CycleIndex]:
    """Cycle segmentation of the raw trace (model-independent)."""
    cached = state.trace_cycles.get(trace_id)
    if cached is None:
        try:
            cached = segment_cycles(_get_trace(state, trace_id))
        except DataError as exc:
            raise HTTPException(400, f"trace {trace_id!r} has no usable cycles: {exc}")
        state.trace_cycles[trace_id] = cached
    return cached


def _require_checkpoint(state: _State) -> Checkpoint:
    if state.checkpoint is None:
        raise HTTPException(409, "no checkpoint active; start the server with one")
    return state.checkpoint


def _window_min_labels(labels: np.ndarray, width: int) -> np.ndarray:
    """1 where every sample/cycle of the window is 1, else 0."""
    from numpy.lib.stride_tricks import sliding_window_view

    return sliding_window_view(labels, width).min(axis=1).astype(np.int8)


def _compute_residuals(state: _State, trace_id: str) -> CachedResiduals:
    """Stride-1 residual track for one trace; computed once per checkpoint."""
    cached = state.residuals.get(trace_id)
    if cached is not None:
        return cached
    ckpt = _require_checkpoint(state)
    trace = _get_trace(state, trace_id)
    cfg = ckpt.train_config
    work = apply_norm(trace, ckpt.norm_stats) if ckpt.norm_stats else trace
    n = len(work)
    empty = CachedResiduals(
        mode=cfg.mode, anchors=np.empty(0, dtype=np.int64), residuals=np.empty(0),
        anchor_labels=None, n_samples=n, cycles=None, warning=None,
    )

    if cfg.mode == "point":
        r = cfg.n_input
        if n < r:
            empty.warning = f"trace shorter than one window ({n} < {r})"
            state.residuals[trace_id] = empty
            return empty
        from numpy.lib.stride_tricks import sliding_window_view

        windows = sliding_window_view(work.cvs, r)[:, :, None]
        res = residual_batch(ckpt.params, windows, norm=cfg.norm)
        anchors = np.arange(r - 1, n, dtype=np.int64)
        anchor_labels = None
        if trace.labels is not None:
            anchor_labels = _window_min_labels(trace.labels, r)
        cached = CachedResiduals(
            mode="point", anchors=anchors, residuals=res,
            anchor_labels=anchor_labels, n_samples=n, cycles=None, warning=None,
        )
        state.residuals[trace_id] = cached
        return cached

    big_r = cfg.n_input
    try:
        cycles = _get_cycles(state, trace_id)
    except HTTPException as exc:
        empty.cycles = []
        empty.warning = str(exc.detail)
        state.residuals[trace_id] = empty
        return empty
    if len(cycles) < big_r:
        empty.cycles = cycles
        empty.warning = f"trace has {len(cycles)} cycles, window needs {big_r}"
        state.residuals[trace_id] = empty
        return empty
    emb = embed_cycles(work, cycles, cfg.data_dim)
    windows = np.stack([emb[s : s + big_r] for s in range(len(cycles) - big_r + 1)])
    res = residual_batch(ckpt.params, windows, norm=cfg.norm)
    anchors = np.arange(big_r - 1, len(cycles), dtype=np.int64)
    anchor_labels = None
    if trace.labels is not None:
        anchor_labels = _window_min_labels(cycle_labels(trace, cycles), big_r)
    cached = CachedResiduals(
        mode="cycle", anchors=anchors, residuals=res,
        anchor_labels=anchor_labels, n_samples=n, cycles=cycles, warning=None,
    )
    state.residuals[trace_id] = cached
    return cached


def _pooled_labeled(state: _State) -> tuple[np.ndarray, np.ndarray]:
    """Residuals and window labels pooled over every labeled trace."""
    res_parts, lab_parts = [], []
    for trace_id, trace in sorted(state.traces.items()):
        if trace.labels is None:
            continue
        cached = _compute_residuals(state, trace_id)
        if cached.anchor_labels is not None and len(cached.residuals):
            res_parts.append(cached.residuals)
            lab_parts.append(cached.anchor_labels)
    if not res_parts:
        return np.empty(0), np.empty(0, dtype=np.int8)
    return np.concatenate(res_parts), np.concatenate(lab_parts)


def _live_metrics(state: _State, tau: float) -> dict | None:
    """Confusion metrics over all labeled traces at the given cutoff."""
    if state.checkpoint is None:
        return None
    res, labels = _pooled_labeled(state)
    if len(res) == 0:
        return None
    preds = (res <= tau).astype(np.int8)
    c = confusion(labels, preds)
    total = c.tp + c.tn + c.fp + c.fn
    return {
        "n_windows": int(total),
        "accuracy": (c.tp + c.tn) / total if total else None,
        "predictive": metrics_predictive(c),
        "conventional": metrics_conventional(c),
    }


# --------------------------------------------------------------------------
# Annotations
# --------------------------------------------------------------------------


def _validate_annotation(state: _State, trace_id: str, payload: dict) -> dict:
    """Shape- and bounds-check an annotation; 422 on any violation."""
    if not isinstance(payload, dict):
        raise HTTPException(422, "annotation body must be an object")
    source = payload.get("source")
    if source not in ANNOTATION_SOURCES:
        raise HTTPException(422, f"source must be one of {ANNOTATION_SOURCES}")
    author = payload.get("author")
    if not isinstance(author, str) or not author:
        raise HTTPException(422, "author must be a non-empty string")
    raw_spans = payload.get("spans")
    if not isinstance(raw_spans, list):
        raise HTTPException(422, "spans must be a list of [start, end, label]")
    n_cycles = len(_get_cycles(state, trace_id))
    spans = []
    for item in raw_spans:
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise HTTPException(422, "each span must be [start_cycle, end_cycle, label]")
        try:
            start, end, label = int(item[0]), int(item[1]), int(item[2])
        except (TypeError, ValueError):
            raise HTTPException(422, "span entries must be integers")
        if label not in (0, 1):
            raise HTTPException(422, "span label must be 0 or 1")
        if not (0 <= start < end <= n_cycles):
            raise HTTPException(
                422, f"span [{start}, {end}) outside trace cycles [0, {n_cycles})"
            )
        spans.append([start, end, label])
    ordered = sorted(spans)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur[0] < prev[1]:
            raise HTTPException(422, f"spans {prev} and {cur} overlap")
    timestamp = payload.get("timestamp")
    if timestamp is None:
        timestamp = time.time()
    try:
        timestamp = float(timestamp)
    except (TypeError, ValueError):
        raise HTTPException(422, "timestamp must be a number")
    return {
        "trace_id": trace_id,
        "source": source,
        "author": author,
        "spans": spans,
        "timestamp": timestamp,
    }


def _latest_per_key(records: list[dict]) -> list[dict]:
    """Last record per (source, author) in journal order wins."""
    latest: dict[tuple[str, str], dict] = {}
    for rec in records:
        latest[(rec["source"], rec["author"])] = rec
    return [latest[k] for k in sorted(latest)]


def _latest_for_source(records: list[dict], source: str) -> dict | None:
    found = None
    for rec in records:
        if rec["source"] == source:
            found = rec
    return found


def _render_cycle_labels(record: dict, n_cycles: int) -> np.ndarray:
    """Per-cycle 0/1 labels; cycles outside every span default to normal."""
    labels = np.ones(n_cycles, dtype=np.int8)
    for start, end, label in record["spans"]:
        labels[start:end] = label
    return labels


# --------------------------------------------------------------------------
# App factory
# --------------------------------------------------------------------------


def create_app(
    data_dir: str | Path,
    checkpoint_path: str | Path | None = None,
    max_series_points: int = MAX_SERIES_POINTS,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Build the API over a trace directory and an optional checkpoint.

    ``ui_dir`` mounts a static browser client under ``/ui``; the API itself
    stays framework-free JSON. CORS is wide open: the service binds to
    localhost for a single annotator, not to the public internet.
    """
    data_dir = Path(data_dir)
    checkpoint = None
    checkpoint_id = None
    if checkpoint_path is not None:
        checkpoint = load_checkpoint(checkpoint_path)
        checkpoint_id = Path(checkpoint_path).name
    state = _State(data_dir, checkpoint, checkpoint_id)
    app = FastAPI(title="cvsqa label service")
    app.state.cvsqa = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    @app.get("/session")
    def session():
        return {
            "checkpoint": state.checkpoint_id,
            "mode": state.checkpoint.train_config.mode if state.checkpoint else None,
            "tau": None if state.tau is None else _tau_json(state.tau),
            "n_traces": len(state.traces),
        }

    @app.get("/traces")
    def traces():
        out = []
        for trace_id in sorted(state.traces):
            t = state.traces[trace_id]
            out.append({
                "trace_id": trace_id,
                "fs": t.fs,
                "n_samples": len(t),
                "duration": t.duration,
                "labeled": t.labels is not None,
            })
        return {"traces": out}

    @app.get("/traces/{trace_id}/series")
    def series(
        trace_id: str,
        from_: int | None = Query(None, alias="from"),
        to: int | None = Query(None),
        max_points: int = Query(None),
    ):
        trace = _get_trace(state, trace_id)
        n = len(trace)
        lo = 0 if from_ is None else from_
        hi = n if to is None else to
        if not (0 <= lo <= hi <= n):
            raise HTTPException(400, f"bad range [{lo}, {hi}) for {n} samples")
        cap = max_series_points if max_points is None else max_points
        if cap < 2:
            raise HTTPException(400, "max_points must be >= 2")
        cvs = trace.cvs[lo:hi]
        ecg = trace.ecg[lo:hi]
        labels = trace.labels[lo:hi] if trace.labels is not None else None
        base = {
            "trace_id": trace_id, "fs": trace.fs, "t0": trace.t0,
            "from": lo, "to": hi,
        }
        if hi - lo <= cap:
            base.update({
                "downsampled": False,
                "cvs": cvs.tolist(),
                "ecg": ecg.tolist(),
                "labels": labels.tolist() if labels is not None else None,
            })
            return base
        factor = -((lo - hi) // cap)  # ceil division
        edges = list(range(lo, hi, factor)) + [hi]

        def buckets(a: np.ndarray, reduce) -> list:
            return [float(reduce(a[s - lo : e - lo])) for s, e in zip(edges, edges[1:])]

        base.update({
            "downsampled": True,
            "factor": factor,
            "bucket_starts": edges[:-1],
            "cvs_min": buckets(cvs, np.min),
            "cvs_max": buckets(cvs, np.max),
            "ecg_min": buckets(ecg, np.min),
            "ecg_max": buckets(ecg, np.max),
            "labels": (
                [int(labels[s - lo : e - lo].min()) for s, e in zip(edges, edges[1:])]
                if labels is not None else None
            ),
        })
        return base

    @app.get("/traces/{trace_id}/residuals")
    def residuals(trace_id: str):
        _get_trace(state, trace_id)
        with state.lock:
            cached = _compute_residuals(state, trace_id)
        out = {
            "trace_id": trace_id,
            "mode": cached.mode,
            "n_samples": cached.n_samples,
            "anchors": cached.anchors.tolist(),
            "residuals": cached.residuals.tolist(),
            "warning": cached.warning,
        }
        if cached.cycles is not None:
            out["cycle_spans"] = [[c.start, c.end] for c in cached.cycles]
        return out

    @app.get("/traces/{trace_id}/predictions")
    def predictions(trace_id: str, tau: str | None = Query(None)):
        _get_trace(state, trace_id)
        with state.lock:
            cached = _compute_residuals(state, trace_id)
            if tau is not None:
                t = _parse_tau(tau, "tau")
            elif state.tau is not None:
                t = state.tau
            else:
                raise HTTPException(400, "no cutoff set; pass ?tau= or PUT /cutoff")
        preds = (cached.residuals <= t).astype(np.int8)
        out = {
            "trace_id": trace_id,
            "mode": cached.mode,
            "tau": _tau_json(t),
            "anchors": cached.anchors.tolist(),
            "preds": preds.tolist(),
            "warning": cached.warning,
        }
        if cached.cycles is not None:
            n_cyc = len(cached.cycles)
            cycle_track = np.full(n_cyc, -1, dtype=np.int8)
            cycle_track[cached.anchors] = preds
            out["cycle_spans"] = [[c.start, c.end] for c in cached.cycles]
            out["cycle_track"] = cycle_track.tolist()
        return out

    @app.put("/cutoff")
    def put_cutoff(payload: dict = Body(...)):
        if not isinstance(payload, dict):
            raise HTTPException(400, "body must be an object")
        has_tau = "tau" in payload
        policy = payload.get("policy")
        if has_tau == (policy is not None):
            raise HTTPException(400, "pass exactly one of 'tau' or 'policy'")
        with state.lock:
            if has_tau:
                tau = _parse_tau(payload["tau"], "tau")
            elif policy == "two_sigma":
                _require_checkpoint(state)
                parts = [
                    _compute_residuals(state, tid).residuals
                    for tid in sorted(state.traces)
                ]
                pooled = np.concatenate([p for p in parts if len(p)]) if parts else np.empty(0)
                if len(pooled) == 0:
                    raise HTTPException(400, "no residuals available to fit on")
                tau = float(fit_two_sigma(pooled))
            elif policy == "youden_max":
                _require_checkpoint(state)
                res, labels = _pooled_labeled(state)
                if len(res) == 0:
                    raise HTTPException(400, "youden_max needs labeled traces")
                try:
                    tau = float(youden_max(res, labels))
                except DataError as exc:
                    raise HTTPException(400, str(exc))
            else:
                raise HTTPException(400, f"unknown policy {policy!r}")
            state.tau = tau
        return {"tau": _tau_json(tau), "metrics": _live_metrics(state, tau)}

    @app.post("/traces/{trace_id}/annotations", status_code=201)
    def post_annotation(trace_id: str, payload: dict = Body(...)):
        _get_trace(state, trace_id)
        record = _validate_annotation(state, trace_id, payload)
        with state.lock:
            _append_journal(state, record)
        return record

    @app.get("/traces/{trace_id}/annotations")
    def get_annotations(trace_id: str):
        _get_trace(state, trace_id)
        records = [r for r in state.records if r["trace_id"] == trace_id]
        return {"records": records, "latest": _latest_per_key(records)}

    @app.get("/dissimilarity")
    def dissimilarity(a: str, b: str, trace: str):
        tr = _get_trace(state, trace)
        if a not in ANNOTATION_SOURCES or b not in ANNOTATION_SOURCES:
            raise HTTPException(400, f"sources must be one of {ANNOTATION_SOURCES}")
        records = [r for r in state.records if r["trace_id"] == trace]
        rec_a = _latest_for_source(records, a)
        rec_b = _latest_for_source(records, b)
        if rec_a is None or rec_b is None:
            missing = a if rec_a is None else b
            raise HTTPException(404, f"no {missing!r} annotation for trace {trace!r}")
        n_cycles = len(_get_cycles(state, trace))
        if n_cycles == 0:
            raise HTTPException(400, f"trace {trace!r} has no cycles")
        la = _render_cycle_labels(rec_a, n_cycles)
        lb = _render_cycle_labels(rec_b, n_cycles)
        return {
            "a": a, "b": b, "trace_id": trace,
            "n_cycles": n_cycles,
            "n_differing": int(np.sum(la != lb)),
            "dissimilarity": float(np.mean(la != lb)),
        }

    @app.post("/export/pseudolabels")
    def export_pseudolabels(payload: dict | None = Body(None)):
        ckpt = _require_checkpoint(state)
        payload = payload or {}
        with state.lock:
            if state.tau is None:
                raise HTTPException(400, "no cutoff set; PUT /cutoff first")
            tau = state.tau
            out_dir = Path(payload.get("out_dir") or (state.data_dir / "pseudolabels"))
            trace_ids = payload.get("trace_ids") or sorted(state.traces)
            for tid in trace_ids:
                _get_trace(state, tid)
            out_dir.mkdir(parents=True, exist_ok=True)
            files = []
            review_rows = []
            for tid in trace_ids:
                trace = state.traces[tid]
                cached = _compute_residuals(state, tid)
                preds = (cached.residuals <= tau).astype(np.int8)
                track = np.full(len(trace), -1, dtype=np.int8)
                if cached.mode == "point":
                    track[cached.anchors] = preds
                elif cached.cycles:
                    cyc = np.full(len(cached.cycles), -1, dtype=np.int8)
                    cyc[cached.anchors] = preds
                    for j, c in enumerate(cached.cycles):
                        track[c.start : c.end] = cyc[j]
                track[track < 0] = 1  # positions no window reaches default to normal
                labeled = SignalTrace(
                    trace_id=tid, fs=trace.fs, t0=trace.t0,
                    cvs=trace.cvs, ecg=trace.ecg, labels=track,
                )
                path = out_dir / f"{tid}.csv"
                save_trace(labeled, path)
                files.append(str(path))
                if math.isfinite(tau) and tau > 0:
                    margin = np.abs(cached.residuals - tau) / tau
                    for k in np.flatnonzero(margin < LOW_MARGIN_FRAC):
                        review_rows.append(
                            f"{tid},{int(cached.anchors[k])},{repr(float(cached.residuals[k]))}"
                        )
            sidecar = out_dir / "review.csv"
            from .traces import atomic_write_text

            atomic_write_text(
                sidecar, "\n".join(["trace_id,anchor,residual"] + review_rows) + "\n"
            )
        return {
            "files": files,
            "sidecar": str(sidecar),
            "tau": _tau_json(tau),
            "n_low_margin": len(review_rows),
        }

    return app
