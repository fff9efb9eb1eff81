// App wiring: one trace on screen, cutoff slider with live metrics, span
// editing against the guided track, export. The server owns residuals and
// metrics; the client only re-thresholds and edits spans.

import { ApiError, LabelServiceClient } from "./api.js";
import { TraceChart, clampRange, panRange, xToSample, zoomRange, type ChartData, type Overlays } from "./chart.js";
import {
  UndoStack,
  machineTrackToSpans,
  paintSpan,
  clearRange,
  validateSpans,
  type Span,
} from "./spans.js";
import { applyCutoff, tauFromWire } from "./threshold.js";
import type { AnnotationSource, PredictionsResponse } from "./types.js";

const MAX_SERIES_POINTS = 4000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class App {
  client = new LabelServiceClient("");
  chart: TraceChart;
  data: ChartData = {
    nSamples: 0,
    series: null,
    residuals: null,
    predictions: null,
    machineSpans: [],
    originalSpans: [],
    guidedSpans: [],
    editedSpans: [],
    cycleSpans: null,
    selection: null,
    stale: false,
  };
  overlays: Overlays = { machine: true, original: true, guided: true, residual: true };
  traceId: string | null = null;
  tau = 0;
  sliderMax = 1;
  author = "annotator";
  edits = new UndoStack<Span[]>([]);
  nCycles = 0;
  lastPredictions: PredictionsResponse | null = null;
  private seriesTimer: number | undefined;

  constructor(private canvas: HTMLCanvasElement) {
    this.chart = new TraceChart(canvas, this.data, this.overlays);
  }

  banner(msg: string | null): void {
    const b = el<HTMLDivElement>("banner");
    b.textContent = msg ?? "";
    b.style.display = msg ? "block" : "none";
    this.data.stale = msg !== null;
  }

  async start(): Promise<void> {
    try {
      const session = await this.client.session();
      el<HTMLSpanElement>("session-info").textContent =
        `checkpoint ${session.checkpoint ?? "none"} | mode ${session.mode ?? "-"} | ${session.n_traces} traces`;
      if (session.tau !== null) this.tau = tauFromWire(session.tau);
      const { traces } = await this.client.traces();
      const select = el<HTMLSelectElement>("trace-select");
      select.innerHTML = "";
      for (const t of traces) {
        const opt = document.createElement("option");
        opt.value = t.trace_id;
        opt.textContent = `${t.trace_id} (${t.duration.toFixed(0)} s${t.labeled ? ", labeled" : ""})`;
        select.appendChild(opt);
      }
      const first = traces[0];
      if (first) await this.loadTrace(first.trace_id);
    } catch (err) {
      this.banner(`load failed: ${err instanceof Error ? err.message : err}`);
    }
  }

  async loadTrace(traceId: string): Promise<void> {
    this.traceId = traceId;
    this.edits = new UndoStack<Span[]>([]);
    this.data.editedSpans = [];
    this.data.selection = null;
    try {
      const series = await this.client.series(traceId, { maxPoints: MAX_SERIES_POINTS });
      this.data.series = series;
      this.data.nSamples = series.to - series.from;
      this.chart.setRange({ lo: 0, hi: this.data.nSamples });
      this.banner(null);
    } catch (err) {
      this.banner(`series fetch failed: ${err instanceof Error ? err.message : err}`);
      return;
    }
    try {
      const res = await this.client.residuals(traceId);
      this.data.residuals = res;
      this.data.cycleSpans = res.cycle_spans ?? null;
      this.nCycles = res.cycle_spans ? res.cycle_spans.length : 0;
      const top = res.residuals.reduce((m, v) => Math.max(m, v), 0);
      this.sliderMax = top > 0 ? top * 1.05 : 1;
      if (res.warning) this.banner(res.warning);
      await this.refreshPredictions();
    } catch (err) {
      this.data.residuals = null;
      this.data.predictions = null;
      if (err instanceof ApiError && err.status === 409) {
        this.banner("no checkpoint loaded; residual and prediction tracks unavailable");
      } else {
        this.banner(`residual fetch failed: ${err instanceof Error ? err.message : err}`);
      }
    }
    await this.refreshAnnotations();
    this.syncSlider();
    this.chart.draw();
  }

  /** Server-side predictions pin the machine track; slider moves re-threshold locally. */
  async refreshPredictions(): Promise<void> {
    if (!this.traceId || !this.data.residuals) return;
    try {
      const preds = await this.client.predictions(this.traceId, this.tau);
      this.lastPredictions = preds;
      this.tau = tauFromWire(preds.tau);
      this.data.predictions = applyCutoff(this.data.residuals.residuals, this.tau);
      if (preds.cycle_track) this.data.machineSpans = machineTrackToSpans(preds.cycle_track);
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        // no cutoff set anywhere yet; leave predictions empty until the slider moves
        this.data.predictions = null;
      } else {
        this.banner(`predictions fetch failed: ${err instanceof Error ? err.message : err}`);
      }
    }
  }

  async refreshAnnotations(): Promise<void> {
    if (!this.traceId) return;
    try {
      const { latest } = await this.client.annotations(this.traceId);
      const bySource = (source: AnnotationSource): Span[] => {
        const recs = latest.filter((r) => r.source === source);
        const rec = recs[recs.length - 1];
        return rec ? rec.spans.map((s) => [...s] as Span) : [];
      };
      this.data.originalSpans = bySource("original");
      this.data.guidedSpans = bySource("guided");
      if (this.data.machineSpans.length === 0) this.data.machineSpans = bySource("machine");
    } catch (err) {
      this.banner(`annotations fetch failed: ${err instanceof Error ? err.message : err}`);
    }
  }

  syncSlider(): void {
    const slider = el<HTMLInputElement>("tau-slider");
    slider.max = String(this.sliderMax);
    slider.step = String(this.sliderMax / 1000);
    slider.value = String(Math.min(this.tau, this.sliderMax));
    el<HTMLSpanElement>("tau-value").textContent = this.tau === Infinity ? "inf" : this.tau.toPrecision(5);
  }

  /** Local O(n) re-threshold; no server round-trip until the slider settles. */
  onSliderInput(value: number): void {
    this.tau = value;
    if (this.data.residuals) {
      this.data.predictions = applyCutoff(this.data.residuals.residuals, this.tau);
    }
    el<HTMLSpanElement>("tau-value").textContent = this.tau.toPrecision(5);
    this.chart.draw();
  }

  async commitCutoff(body: { tau: number } | { policy: "two_sigma" | "youden_max" }): Promise<void> {
    try {
      const resp = await this.client.setCutoff(body);
      this.tau = tauFromWire(resp.tau);
      this.renderMetrics(resp.metrics);
      await this.refreshPredictions();
      this.syncSlider();
      this.banner(null);
      this.chart.draw();
    } catch (err) {
      this.banner(`cutoff update failed: ${err instanceof Error ? err.message : err}`);
    }
  }

  renderMetrics(metrics: {
    n_windows: number;
    accuracy: number | null;
    predictive: Record<string, number | null>;
    conventional: Record<string, number | null>;
  }): void {
    const fmt = (v: number | null | undefined) => (v === null || v === undefined ? "-" : v.toFixed(4));
    el<HTMLSpanElement>("metrics").textContent =
      `${metrics.n_windows} labeled windows | acc ${fmt(metrics.accuracy)} | ` +
      `tpr ${fmt(metrics.predictive["tpr"])} | tnr ${fmt(metrics.predictive["tnr"])} | ` +
      `sens ${fmt(metrics.conventional["sensitivity"])} | spec ${fmt(metrics.conventional["specificity"])}`;
  }

  // ----- span editing -------------------------------------------------

  private selectionToCycles(): [number, number] | null {
    const sel = this.data.selection;
    const cycles = this.data.cycleSpans;
    if (!sel || !cycles || cycles.length === 0) return null;
    const lo = Math.min(sel[0], sel[1]);
    const hi = Math.max(sel[0], sel[1]);
    let first = -1;
    let last = -1;
    for (let i = 0; i < cycles.length; i++) {
      const c = cycles[i] as [number, number];
      if (c[1] > lo && c[0] < hi) {
        if (first < 0) first = i;
        last = i;
      }
    }
    return first < 0 ? null : [first, last + 1];
  }

  applyEdit(next: Span[]): void {
    this.edits.push(next);
    this.data.editedSpans = next;
    this.chart.draw();
  }

  markSelection(label: number): void {
    const range = this.selectionToCycles();
    if (!range) return;
    this.applyEdit(paintSpan(this.edits.value, range[0], range[1], label));
  }

  clearSelection(): void {
    const range = this.selectionToCycles();
    if (!range) return;
    this.applyEdit(clearRange(this.edits.value, range[0], range[1]));
  }

  acceptMachine(): void {
    const track = this.lastPredictions?.cycle_track;
    if (!track) {
      this.banner("machine track unavailable; load a checkpoint first");
      return;
    }
    this.applyEdit(machineTrackToSpans(track));
  }

  async saveGuided(postMachineBaseline: boolean): Promise<void> {
    if (!this.traceId) return;
    const spans = this.edits.value;
    const problem = validateSpans(spans, this.nCycles);
    if (problem) {
      el<HTMLSpanElement>("save-status").textContent = problem;
      return;
    }
    try {
      if (postMachineBaseline && this.data.machineSpans.length) {
        await this.client.postAnnotation(this.traceId, {
          source: "machine",
          author: "model",
          spans: this.data.machineSpans.map((s) => [...s] as [number, number, number]),
        });
      }
      await this.client.postAnnotation(this.traceId, {
        source: "guided",
        author: this.author,
        spans: spans.map((s) => [...s] as [number, number, number]),
      });
      el<HTMLSpanElement>("save-status").textContent = "saved";
      await this.refreshAnnotations();
      this.chart.draw();
    } catch (err) {
      // 422 = server-side overlap/bounds rejection; show it inline
      el<HTMLSpanElement>("save-status").textContent =
        err instanceof ApiError ? `rejected: ${err.detail}` : `save failed: ${err}`;
    }
  }

  // ----- pointer handling ----------------------------------------------

  attachPointerHandlers(): void {
    const canvas = this.canvas;
    let dragStart: number | null = null;
    let panning = false;
    canvas.addEventListener("mousedown", (ev) => {
      const x = ev.offsetX;
      if (ev.shiftKey) {
        panning = true;
        dragStart = x;
      } else {
        dragStart = x;
        const s = xToSample(x, this.chart.range, canvas.width);
        this.data.selection = [s, s];
      }
    });
    canvas.addEventListener("mousemove", (ev) => {
      if (dragStart === null) return;
      if (panning) {
        const deltaFrac = (dragStart - ev.offsetX) / canvas.width;
        this.chart.setRange(panRange(this.chart.range, deltaFrac, this.data.nSamples));
        dragStart = ev.offsetX;
        this.scheduleSeriesRefresh();
      } else if (this.data.selection) {
        this.data.selection[1] = xToSample(ev.offsetX, this.chart.range, canvas.width);
      }
      this.chart.draw();
    });
    window.addEventListener("mouseup", () => {
      dragStart = null;
      panning = false;
    });
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY > 0 ? 1.25 : 0.8;
      this.chart.setRange(zoomRange(this.chart.range, ev.offsetX / canvas.width, factor, this.data.nSamples));
      this.scheduleSeriesRefresh();
      this.chart.draw();
    });
  }

  /** Refetch the visible window at display resolution once panning settles. */
  private scheduleSeriesRefresh(): void {
    window.clearTimeout(this.seriesTimer);
    this.seriesTimer = window.setTimeout(async () => {
      if (!this.traceId) return;
      const r = clampRange(this.chart.range, this.data.nSamples);
      try {
        this.data.series = await this.client.series(this.traceId, {
          from: r.lo,
          to: r.hi,
          maxPoints: MAX_SERIES_POINTS,
        });
        this.banner(null);
      } catch (err) {
        this.banner(`series refresh failed: ${err instanceof Error ? err.message : err}`);
      }
      this.chart.draw();
    }, 150);
  }
}

function wire(): void {
  const canvas = el<HTMLCanvasElement>("chart");
  canvas.width = canvas.clientWidth || 960;
  canvas.height = canvas.clientHeight || 380;
  const app = new App(canvas);
  app.attachPointerHandlers();

  el<HTMLSelectElement>("trace-select").addEventListener("change", (ev) => {
    void app.loadTrace((ev.target as HTMLSelectElement).value);
  });
  const slider = el<HTMLInputElement>("tau-slider");
  slider.addEventListener("input", () => app.onSliderInput(Number(slider.value)));
  slider.addEventListener("change", () => void app.commitCutoff({ tau: Number(slider.value) }));
  el<HTMLButtonElement>("preset-two-sigma").addEventListener("click", () =>
    void app.commitCutoff({ policy: "two_sigma" }),
  );
  el<HTMLButtonElement>("preset-youden").addEventListener("click", () =>
    void app.commitCutoff({ policy: "youden_max" }),
  );
  for (const key of ["machine", "original", "guided", "residual"] as const) {
    const box = el<HTMLInputElement>(`overlay-${key}`);
    box.addEventListener("change", () => {
      app.overlays[key] = box.checked;
      app.chart.draw();
    });
  }
  el<HTMLButtonElement>("mark-motion").addEventListener("click", () => app.markSelection(0));
  el<HTMLButtonElement>("mark-normal").addEventListener("click", () => app.markSelection(1));
  el<HTMLButtonElement>("clear-span").addEventListener("click", () => app.clearSelection());
  el<HTMLButtonElement>("accept-machine").addEventListener("click", () => app.acceptMachine());
  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    app.data.editedSpans = app.edits.undo();
    app.chart.draw();
  });
  el<HTMLButtonElement>("redo").addEventListener("click", () => {
    app.data.editedSpans = app.edits.redo();
    app.chart.draw();
  });
  el<HTMLButtonElement>("save").addEventListener("click", () => void app.saveGuided(true));
  const authorBox = el<HTMLInputElement>("author");
  authorBox.addEventListener("change", () => {
    app.author = authorBox.value || "annotator";
  });
  el<HTMLButtonElement>("dissim-run").addEventListener("click", async () => {
    if (!app.traceId) return;
    const a = el<HTMLSelectElement>("dissim-a").value as AnnotationSource;
    const b = el<HTMLSelectElement>("dissim-b").value as AnnotationSource;
    try {
      const d = await app.client.dissimilarity(a, b, app.traceId);
      el<HTMLSpanElement>("dissim-value").textContent =
        `${d.dissimilarity.toFixed(4)} (${d.n_differing}/${d.n_cycles} cycles)`;
    } catch (err) {
      el<HTMLSpanElement>("dissim-value").textContent =
        err instanceof ApiError ? err.detail : String(err);
    }
  });
  el<HTMLButtonElement>("export").addEventListener("click", async () => {
    try {
      const resp = await app.client.exportPseudolabels();
      el<HTMLSpanElement>("export-status").textContent =
        `${resp.files.length} files, ${resp.n_low_margin} low-margin anchors for review`;
    } catch (err) {
      el<HTMLSpanElement>("export-status").textContent =
        err instanceof ApiError ? err.detail : String(err);
    }
  });

  void app.start();
}

wire();
