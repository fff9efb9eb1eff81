// Payload shapes for the label-service JSON API. Field names mirror the
// server exactly; tau travels as a number or the string "inf".

export type TauWire = number | "inf";

export type AnnotationSource = "machine" | "original" | "guided";

export interface SessionInfo {
  checkpoint: string | null;
  mode: "point" | "cycle" | null;
  tau: TauWire | null;
  n_traces: number;
}

export interface TraceInfo {
  trace_id: string;
  fs: number;
  n_samples: number;
  duration: number;
  labeled: boolean;
}

export interface SeriesFull {
  trace_id: string;
  fs: number;
  t0: number;
  from: number;
  to: number;
  downsampled: false;
  cvs: number[];
  ecg: number[];
  labels: number[] | null;
}

export interface SeriesBuckets {
  trace_id: string;
  fs: number;
  t0: number;
  from: number;
  to: number;
  downsampled: true;
  factor: number;
  bucket_starts: number[];
  cvs_min: number[];
  cvs_max: number[];
  ecg_min: number[];
  ecg_max: number[];
  labels: number[] | null;
}

export type SeriesResponse = SeriesFull | SeriesBuckets;

export interface ResidualTrack {
  trace_id: string;
  mode: "point" | "cycle";
  n_samples: number;
  anchors: number[];
  residuals: number[];
  warning: string | null;
  cycle_spans?: [number, number][];
}

export interface PredictionsResponse {
  trace_id: string;
  mode: "point" | "cycle";
  tau: TauWire;
  anchors: number[];
  preds: number[];
  warning: string | null;
  cycle_spans?: [number, number][];
  cycle_track?: number[];
}

export interface LiveMetrics {
  n_windows: number;
  accuracy: number | null;
  predictive: Record<string, number | null>;
  conventional: Record<string, number | null>;
}

export interface CutoffResponse {
  tau: TauWire;
  metrics: LiveMetrics;
}

export interface AnnotationRecord {
  trace_id: string;
  source: AnnotationSource;
  author: string;
  spans: [number, number, number][];
  timestamp: number;
}

export interface AnnotationsResponse {
  records: AnnotationRecord[];
  latest: AnnotationRecord[];
}

export interface DissimilarityResponse {
  a: AnnotationSource;
  b: AnnotationSource;
  trace_id: string;
  n_cycles: number;
  n_differing: number;
  dissimilarity: number;
}

export interface ExportResponse {
  files: string[];
  sidecar: string;
  tau: TauWire;
  n_low_margin: number;
}
