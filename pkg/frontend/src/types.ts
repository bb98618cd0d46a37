// JSON contracts of the generation service. Field names mirror the wire
// format exactly; everything here is read-only data from the API.

export interface FeatureInfo {
  name: string;
  kind: "continuous" | "categorical";
  mean?: number;
  std?: number;
  categories?: string[];
}

export interface Schema {
  features: FeatureInfo[];
  target: string;
  target_min: number;
  target_max: number;
}

export type RawRow = Record<string, number | string>;

export interface RowEntry {
  index: number;
  row: RawRow;
  prediction: number;
}

export interface RowsResponse {
  rows: RowEntry[];
  total: number;
}

export interface PathStep {
  alpha: number;
  y_interp: number;
  y_model: number;
  x: number[];
  row: RawRow;
}

export interface CEResult {
  accepted: boolean;
  alpha: number;
  y_query: number;
  y_target: number;
  y_interp: number;
  y_model: number;
  tol: number;
  x: number[];
  row: RawRow;
  path: PathStep[];
  gen_time?: number;
}

export interface Health {
  version: string;
  fingerprint: string;
  ready: boolean;
}
