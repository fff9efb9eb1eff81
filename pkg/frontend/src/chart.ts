// Canvas renderer for one trace: CVS band, ECG line, residual sparkline,
// shaded machine-flagged regions, and annotation overlays. The view range is
// in sample indices; everything else derives from it.

import type { PredictionsResponse, ResidualTrack, SeriesResponse } from "./types.js";
import type { Span } from "./spans.js";

export interface ViewRange {
  lo: number;
  hi: number; // exclusive, samples
}

export function clampRange(range: ViewRange, nSamples: number, minWidth = 32): ViewRange {
  let lo = Math.max(0, Math.floor(range.lo));
  let hi = Math.min(nSamples, Math.ceil(range.hi));
  if (hi - lo < minWidth) {
    const mid = (lo + hi) / 2;
    lo = Math.max(0, Math.floor(mid - minWidth / 2));
    hi = Math.min(nSamples, lo + minWidth);
    lo = Math.max(0, hi - minWidth);
  }
  return { lo, hi };
}

export function zoomRange(range: ViewRange, anchorFrac: number, factor: number, nSamples: number): ViewRange {
  const width = range.hi - range.lo;
  const anchor = range.lo + anchorFrac * width;
  const newWidth = width * factor;
  return clampRange({ lo: anchor - anchorFrac * newWidth, hi: anchor + (1 - anchorFrac) * newWidth }, nSamples);
}

export function panRange(range: ViewRange, deltaFrac: number, nSamples: number): ViewRange {
  const width = range.hi - range.lo;
  let lo = range.lo + deltaFrac * width;
  lo = Math.max(0, Math.min(nSamples - width, lo));
  return clampRange({ lo, hi: lo + width }, nSamples);
}

export function sampleToX(sample: number, range: ViewRange, widthPx: number): number {
  return ((sample - range.lo) / (range.hi - range.lo)) * widthPx;
}

export function xToSample(x: number, range: ViewRange, widthPx: number): number {
  return range.lo + (x / widthPx) * (range.hi - range.lo);
}

export interface Overlays {
  machine: boolean;
  original: boolean;
  guided: boolean;
  residual: boolean;
}

export interface ChartData {
  nSamples: number;
  series: SeriesResponse | null;
  residuals: ResidualTrack | null;
  predictions: Int8Array | null; // per anchor, client-side thresholded
  machineSpans: Span[];
  originalSpans: Span[];
  guidedSpans: Span[];
  editedSpans: Span[];
  cycleSpans: [number, number][] | null; // cycle index -> sample range
  selection: [number, number] | null; // sample range being dragged
  stale: boolean;
}

const COLORS = {
  cvs: "#1668b8",
  cvsBand: "rgba(22, 104, 184, 0.35)",
  ecg: "#8a8f98",
  residual: "#b0560f",
  flagged: "rgba(214, 69, 58, 0.18)",
  machine: "#3b6fd4",
  original: "#d6453a",
  guided: "#2f9e44",
  edited: "#1c7ed6",
  selection: "rgba(60, 60, 60, 0.25)",
  axis: "#c6c9ce",
  text: "#444",
};

const LANE = { signal: [0.06, 0.62], residual: [0.66, 0.84], spans: [0.86, 1.0] } as const;

function laneY(lane: readonly [number, number], frac: number, height: number): number {
  return (lane[0] + (lane[1] - lane[0]) * frac) * height;
}

function minMax(values: number[], lo: number, hi: number): [number, number] {
  let mn = Infinity;
  let mx = -Infinity;
  for (let i = Math.max(0, lo); i < Math.min(values.length, hi); i++) {
    const v = values[i] as number;
    if (v < mn) mn = v;
    if (v > mx) mx = v;
  }
  if (mn > mx) return [0, 1];
  return mn === mx ? [mn - 1, mx + 1] : [mn, mx];
}

export class TraceChart {
  range: ViewRange = { lo: 0, hi: 1 };

  constructor(
    private canvas: HTMLCanvasElement,
    public data: ChartData,
    public overlays: Overlays,
  ) {}

  setRange(range: ViewRange): void {
    this.range = clampRange(range, this.data.nSamples);
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    if (!this.data.series) {
      ctx.fillStyle = COLORS.text;
      ctx.fillText("no trace loaded", 12, 20);
      return;
    }
    this.drawFlagged(ctx, width, height);
    this.drawSignals(ctx, width, height);
    if (this.overlays.residual) this.drawResiduals(ctx, width, height);
    this.drawSpanLanes(ctx, width, height);
    this.drawSelection(ctx, width, height);
    if (this.data.stale) {
      ctx.fillStyle = COLORS.original;
      ctx.fillText("stale", width - 40, 14);
    }
  }

  private sampleOfColumn(series: SeriesResponse, idx: number): number {
    return series.downsampled ? (series.bucket_starts[idx] as number) : series.from + idx;
  }

  private drawSignals(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    const series = this.data.series as SeriesResponse;
    const lane = LANE.signal;
    const cvsLo = series.downsampled ? series.cvs_min : series.cvs;
    const cvsHi = series.downsampled ? series.cvs_max : series.cvs;
    const ecg = series.downsampled ? series.ecg_min : series.ecg;
    const [mn, mx] = minMax(cvsHi, 0, cvsHi.length);
    const [emn, emx] = minMax(ecg, 0, ecg.length);
    const yOf = (v: number) => laneY(lane, 1 - (v - mn) / (mx - mn), height);
    const yOfEcg = (v: number) => laneY(lane, 1 - 0.25 * ((v - emn) / (emx - emn || 1)), height);

    ctx.strokeStyle = COLORS.ecg;
    ctx.lineWidth = 0.75;
    ctx.beginPath();
    for (let i = 0; i < ecg.length; i++) {
      const x = sampleToX(this.sampleOfColumn(series, i), this.range, width);
      const y = yOfEcg(ecg[i] as number);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();

    if (series.downsampled) {
      ctx.fillStyle = COLORS.cvsBand;
      ctx.beginPath();
      for (let i = 0; i < cvsLo.length; i++) {
        const x = sampleToX(this.sampleOfColumn(series, i), this.range, width);
        const y = yOf(series.cvs_max[i] as number);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      }
      for (let i = cvsLo.length - 1; i >= 0; i--) {
        const x = sampleToX(this.sampleOfColumn(series, i), this.range, width);
        ctx.lineTo(x, yOf(series.cvs_min[i] as number));
      }
      ctx.closePath();
      ctx.fill();
    }
    ctx.strokeStyle = COLORS.cvs;
    ctx.lineWidth = 1.25;
    ctx.beginPath();
    for (let i = 0; i < cvsLo.length; i++) {
      const x = sampleToX(this.sampleOfColumn(series, i), this.range, width);
      const mid = series.downsampled
        ? 0.5 * ((series.cvs_min[i] as number) + (series.cvs_max[i] as number))
        : (series.cvs[i] as number);
      const y = yOf(mid);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }

  /** Shade the sample ranges the current client-side thresholding flags. */
  private drawFlagged(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    const { residuals, predictions } = this.data;
    if (!this.overlays.machine || !residuals || !predictions) return;
    ctx.fillStyle = COLORS.flagged;
    const y0 = laneY(LANE.signal, 0, height);
    const y1 = laneY(LANE.signal, 1, height);
    for (const [lo, hi] of this.flaggedSampleRanges(residuals, predictions)) {
      const x0 = sampleToX(lo, this.range, width);
      const x1 = sampleToX(hi, this.range, width);
      if (x1 < 0 || x0 > width) continue;
      ctx.fillRect(x0, y0, Math.max(1, x1 - x0), y1 - y0);
    }
  }

  flaggedSampleRanges(residuals: ResidualTrack, predictions: Int8Array): [number, number][] {
    const out: [number, number][] = [];
    const spans = residuals.cycle_spans ?? null;
    for (let i = 0; i < predictions.length; i++) {
      if (predictions[i] === 1) continue;
      const anchor = residuals.anchors[i] as number;
      const range: [number, number] = spans
        ? [(spans[anchor] as [number, number])[0], (spans[anchor] as [number, number])[1]]
        : [anchor, anchor + 1];
      const last = out[out.length - 1];
      if (last && range[0] <= last[1]) last[1] = Math.max(last[1], range[1]);
      else out.push(range);
    }
    return out;
  }

  private drawResiduals(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    const res = this.data.residuals;
    if (!res || res.residuals.length === 0) return;
    const lane = LANE.residual;
    const [mn, mx] = minMax(res.residuals, 0, res.residuals.length);
    ctx.strokeStyle = COLORS.residual;
    ctx.lineWidth = 1;
    ctx.beginPath();
    const spans = res.cycle_spans ?? null;
    for (let i = 0; i < res.residuals.length; i++) {
      const anchor = res.anchors[i] as number;
      const sample = spans ? (spans[anchor] as [number, number])[0] : anchor;
      const x = sampleToX(sample, this.range, width);
      const y = laneY(lane, 1 - ((res.residuals[i] as number) - mn) / (mx - mn || 1), height);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
    ctx.strokeStyle = COLORS.axis;
    ctx.strokeRect(0, laneY(lane, 0, height), width, laneY(lane, 1, height) - laneY(lane, 0, height));
  }

  /** Three thin tracks: original / machine / guided-or-edited motion spans. */
  private drawSpanLanes(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    const cycles = this.data.cycleSpans;
    if (!cycles) return;
    const rows: [Span[], string, boolean][] = [
      [this.data.originalSpans, COLORS.original, this.overlays.original],
      [this.data.machineSpans, COLORS.machine, this.overlays.machine],
      [this.data.editedSpans.length ? this.data.editedSpans : this.data.guidedSpans, COLORS.guided, this.overlays.guided],
    ];
    const lane = LANE.spans;
    const rowH = (laneY(lane, 1, height) - laneY(lane, 0, height)) / rows.length;
    rows.forEach(([spans, color, visible], row) => {
      if (!visible) return;
      ctx.fillStyle = color;
      const y = laneY(lane, 0, height) + row * rowH;
      for (const [startCycle, endCycle, label] of spans) {
        if (label !== 0) continue; // only motion spans are painted
        const s0 = (cycles[startCycle] as [number, number] | undefined)?.[0];
        const s1 = (cycles[endCycle - 1] as [number, number] | undefined)?.[1];
        if (s0 === undefined || s1 === undefined) continue;
        const x0 = sampleToX(s0, this.range, width);
        const x1 = sampleToX(s1, this.range, width);
        ctx.fillRect(x0, y + 1, Math.max(1, x1 - x0), rowH - 2);
      }
    });
  }

  private drawSelection(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    const sel = this.data.selection;
    if (!sel) return;
    const x0 = sampleToX(sel[0], this.range, width);
    const x1 = sampleToX(sel[1], this.range, width);
    ctx.fillStyle = COLORS.selection;
    ctx.fillRect(Math.min(x0, x1), 0, Math.abs(x1 - x0), height);
  }
}
