// Span algebra for cycle-level annotations.
//
// A span is [start_cycle, end_cycle, label] with a half-open cycle range and
// label 1 = normal, 0 = motion. Cycles not covered by any span render as
// normal; that convention is shared with the server, so a record that only
// carries motion spans and one that carries the full run-length track render
// identically. Editing operations return fresh arrays so the undo stack can
// hold plain snapshots.

export type Span = [number, number, number];

export function spansOverlap(spans: readonly Span[]): boolean {
  const sorted = [...spans].sort((p, q) => p[0] - q[0]);
  for (let i = 1; i < sorted.length; i++) {
    if ((sorted[i] as Span)[0] < (sorted[i - 1] as Span)[1]) return true;
  }
  return false;
}

export function validateSpans(spans: readonly Span[], nCycles: number): string | null {
  for (const [start, end, label] of spans) {
    if (!Number.isInteger(start) || !Number.isInteger(end)) return "span bounds must be integers";
    if (start < 0 || end > nCycles || start >= end) return `bad span [${start}, ${end})`;
    if (label !== 0 && label !== 1) return `label must be 0 or 1, got ${label}`;
  }
  if (spansOverlap(spans)) return "spans overlap";
  return null;
}

/** Paint spans onto a per-cycle label track; uncovered cycles stay normal. */
export function renderLabels(spans: readonly Span[], nCycles: number): Int8Array {
  const track = new Int8Array(nCycles).fill(1);
  for (const [start, end, label] of spans) {
    track.fill(label, Math.max(0, start), Math.min(nCycles, end));
  }
  return track;
}

/** Run-length encode a full label track; round-trips through renderLabels. */
export function trackToSpans(track: ArrayLike<number>): Span[] {
  const spans: Span[] = [];
  let runStart = 0;
  for (let i = 1; i <= track.length; i++) {
    if (i === track.length || track[i] !== track[runStart]) {
      spans.push([runStart, i, track[runStart] as number]);
      runStart = i;
    }
  }
  return spans;
}

/**
 * Machine suggestion -> editable spans. Unassessed cycles (track value -1,
 * e.g. the first R cycles in cycle mode) count as normal: the annotator sees
 * exactly what renderLabels will reproduce on the server.
 */
export function machineTrackToSpans(cycleTrack: ArrayLike<number>): Span[] {
  const clean = new Int8Array(cycleTrack.length);
  for (let i = 0; i < cycleTrack.length; i++) {
    clean[i] = cycleTrack[i] === 0 ? 0 : 1;
  }
  return trackToSpans(clean);
}

/** Overwrite [start, end) with one label, splitting whatever was there. */
export function paintSpan(spans: readonly Span[], start: number, end: number, label: number): Span[] {
  const out: Span[] = [];
  for (const [s, e, l] of spans) {
    if (e <= start || s >= end) {
      out.push([s, e, l]);
      continue;
    }
    if (s < start) out.push([s, start, l]);
    if (e > end) out.push([end, e, l]);
  }
  out.push([start, end, label]);
  out.sort((p, q) => p[0] - q[0]);
  return mergeAdjacent(out);
}

/** Remove span coverage over [start, end); the range falls back to default. */
export function clearRange(spans: readonly Span[], start: number, end: number): Span[] {
  const out: Span[] = [];
  for (const [s, e, l] of spans) {
    if (e <= start || s >= end) {
      out.push([s, e, l]);
      continue;
    }
    if (s < start) out.push([s, start, l]);
    if (e > end) out.push([end, e, l]);
  }
  return out;
}

function mergeAdjacent(sorted: Span[]): Span[] {
  const out: Span[] = [];
  for (const span of sorted) {
    const last = out[out.length - 1];
    if (last && last[1] === span[0] && last[2] === span[2]) {
      last[1] = span[1];
    } else {
      out.push([...span] as Span);
    }
  }
  return out;
}

const UNDO_DEPTH = 50;

export class UndoStack<T> {
  private past: T[] = [];
  private future: T[] = [];

  constructor(private present: T, private depth: number = UNDO_DEPTH) {}

  get value(): T {
    return this.present;
  }

  push(next: T): void {
    this.past.push(this.present);
    if (this.past.length > this.depth) this.past.shift();
    this.present = next;
    this.future = [];
  }

  canUndo(): boolean {
    return this.past.length > 0;
  }

  canRedo(): boolean {
    return this.future.length > 0;
  }

  undo(): T {
    const prev = this.past.pop();
    if (prev !== undefined) {
      this.future.push(this.present);
      this.present = prev;
    }
    return this.present;
  }

  redo(): T {
    const next = this.future.pop();
    if (next !== undefined) {
      this.past.push(this.present);
      this.present = next;
    }
    return this.present;
  }
}
