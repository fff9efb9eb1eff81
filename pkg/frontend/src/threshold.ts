// Client-side thresholding. Must stay bit-consistent with the server:
// an anchor is normal (1) iff residual <= tau, motion (0) otherwise.
// tau = +Infinity crosses the wire as the string "inf".

import type { TauWire } from "./types.js";

export function tauFromWire(v: TauWire): number {
  if (v === "inf") return Infinity;
  if (typeof v !== "number" || Number.isNaN(v) || v < 0) {
    throw new RangeError(`bad tau from server: ${v}`);
  }
  return v;
}

export function tauToWire(tau: number): TauWire {
  if (Number.isNaN(tau) || tau < 0) throw new RangeError(`tau must be >= 0, got ${tau}`);
  return tau === Infinity ? "inf" : tau;
}

export function applyCutoff(residuals: ArrayLike<number>, tau: number): Int8Array {
  const out = new Int8Array(residuals.length);
  for (let i = 0; i < residuals.length; i++) {
    out[i] = (residuals[i] as number) <= tau ? 1 : 0;
  }
  return out;
}

/** Anchors whose flag differs between two cutoffs; used to repaint minimally. */
export function flippedAnchors(residuals: ArrayLike<number>, tauOld: number, tauNew: number): number[] {
  const lo = Math.min(tauOld, tauNew);
  const hi = Math.max(tauOld, tauNew);
  const out: number[] = [];
  for (let i = 0; i < residuals.length; i++) {
    const a = residuals[i] as number;
    if (a > lo && a <= hi) out.push(i);
  }
  return out;
}
