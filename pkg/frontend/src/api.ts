// Thin fetch client for the label service. All state lives server-side;
// this layer only shapes requests and surfaces HTTP errors as ApiError.

import type {
  AnnotationRecord,
  AnnotationsResponse,
  AnnotationSource,
  CutoffResponse,
  DissimilarityResponse,
  ExportResponse,
  PredictionsResponse,
  ResidualTrack,
  SeriesResponse,
  SessionInfo,
  TraceInfo,
} from "./types.js";
import { tauToWire } from "./threshold.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function check<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; statusText is enough
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class LabelServiceClient {
  constructor(private baseUrl: string = "") {}

  private url(path: string, params?: Record<string, string | number | undefined>): string {
    const u = this.baseUrl + path;
    if (!params) return u;
    const q = new URLSearchParams();
    for (const [k, v] of Object.entries(params)) {
      if (v !== undefined) q.set(k, String(v));
    }
    const qs = q.toString();
    return qs ? `${u}?${qs}` : u;
  }

  session(): Promise<SessionInfo> {
    return fetch(this.url("/session")).then((r) => check<SessionInfo>(r));
  }

  traces(): Promise<{ traces: TraceInfo[] }> {
    return fetch(this.url("/traces")).then((r) => check<{ traces: TraceInfo[] }>(r));
  }

  series(traceId: string, opts: { from?: number; to?: number; maxPoints?: number } = {}): Promise<SeriesResponse> {
    return fetch(
      this.url(`/traces/${traceId}/series`, { from: opts.from, to: opts.to, max_points: opts.maxPoints }),
    ).then((r) => check<SeriesResponse>(r));
  }

  residuals(traceId: string): Promise<ResidualTrack> {
    return fetch(this.url(`/traces/${traceId}/residuals`)).then((r) => check<ResidualTrack>(r));
  }

  predictions(traceId: string, tau?: number): Promise<PredictionsResponse> {
    const params = tau === undefined ? undefined : { tau: String(tauToWire(tau)) };
    return fetch(this.url(`/traces/${traceId}/predictions`, params)).then((r) => check<PredictionsResponse>(r));
  }

  setCutoff(body: { tau: number } | { policy: "two_sigma" | "youden_max" }): Promise<CutoffResponse> {
    const wire = "tau" in body ? { tau: tauToWire(body.tau) } : body;
    return fetch(this.url("/cutoff"), {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(wire),
    }).then((r) => check<CutoffResponse>(r));
  }

  postAnnotation(
    traceId: string,
    record: { source: AnnotationSource; author: string; spans: [number, number, number][] },
  ): Promise<AnnotationRecord> {
    return fetch(this.url(`/traces/${traceId}/annotations`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(record),
    }).then((r) => check<AnnotationRecord>(r));
  }

  annotations(traceId: string): Promise<AnnotationsResponse> {
    return fetch(this.url(`/traces/${traceId}/annotations`)).then((r) => check<AnnotationsResponse>(r));
  }

  dissimilarity(a: AnnotationSource, b: AnnotationSource, traceId: string): Promise<DissimilarityResponse> {
    return fetch(this.url("/dissimilarity", { a, b, trace: traceId })).then((r) =>
      check<DissimilarityResponse>(r),
    );
  }

  exportPseudolabels(outDir?: string): Promise<ExportResponse> {
    return fetch(this.url("/export/pseudolabels"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(outDir ? { out_dir: outDir } : {}),
    }).then((r) => check<ExportResponse>(r));
  }
}
