import type { CEResult, PathStep, RawRow, RowEntry, Schema } from "./types.js";

// All label values in the state live in the model's scaled [0, 1] space,
// the same space /api/rows predictions and /api/generate targets use.
// rawLabel converts for display only.

export interface ViewState {
  schema: Schema | null;
  rows: RowEntry[];
  selected: number;
  target: number;
  tol: number;
  steps: number;
  result: CEResult | null;
  cursor: number;
  error: string | null;
}

export const TOL_MIN = 0.001;
export const TOL_MAX = 0.5;

export function initialState(): ViewState {
  return {
    schema: null,
    rows: [],
    selected: 0,
    target: 0.5,
    tol: 0.05,
    steps: 50,
    result: null,
    cursor: 0,
    error: null,
  };
}

export function clampTarget(v: number): number {
  if (!Number.isFinite(v)) return 0.5;
  return Math.min(1, Math.max(0, v));
}

export function clampTol(v: number): number {
  if (!Number.isFinite(v)) return 0.05;
  return Math.min(TOL_MAX, Math.max(TOL_MIN, v));
}

export function withSchema(
  s: ViewState,
  schema: Schema,
  rows: RowEntry[],
): ViewState {
  const next: ViewState = {
    ...s,
    schema,
    rows,
    selected: 0,
    result: null,
    cursor: 0,
    error: null,
  };
  if (rows.length > 0) next.target = clampTarget(rows[0].prediction);
  return next;
}

/** Picking a row resets the target to that row's own prediction so the
 * first request is the no-change baseline. */
export function selectRow(s: ViewState, index: number): ViewState {
  if (s.rows.length === 0) return s;
  const selected = Math.min(s.rows.length - 1, Math.max(0, index));
  return {
    ...s,
    selected,
    target: clampTarget(s.rows[selected].prediction),
    result: null,
    cursor: 0,
  };
}

export function setTarget(s: ViewState, v: number): ViewState {
  return { ...s, target: clampTarget(v) };
}

export function setTol(s: ViewState, v: number): ViewState {
  return { ...s, tol: clampTol(v) };
}

export function withResult(s: ViewState, result: CEResult): ViewState {
  return { ...s, result, cursor: headlineStep(result), error: null };
}

export function withError(s: ViewState, message: string): ViewState {
  return { ...s, error: message };
}

/** Path index of the step the headline counterfactual came from. */
export function headlineStep(result: CEResult): number {
  const i = result.path.findIndex((p) => p.alpha === result.alpha);
  return i >= 0 ? i : result.path.length - 1;
}

/** Cursor requests beyond the path clamp to the last step. */
export function setCursor(s: ViewState, i: number): ViewState {
  if (s.result === null || s.result.path.length === 0) return s;
  const cursor = Math.min(s.result.path.length - 1, Math.max(0, Math.trunc(i)));
  return { ...s, cursor };
}

export function cursorStep(s: ViewState): PathStep | null {
  if (s.result === null || s.result.path.length === 0) return null;
  return s.result.path[Math.min(s.cursor, s.result.path.length - 1)];
}

export function selectedRow(s: ViewState): RowEntry | null {
  return s.rows.length > 0 ? s.rows[s.selected] : null;
}

/** The feature dict to send as a query: the stored row minus its target
 * column. */
export function queryRow(s: ViewState): RawRow | null {
  const entry = selectedRow(s);
  if (entry === null || s.schema === null) return null;
  const out: RawRow = {};
  for (const f of s.schema.features) out[f.name] = entry.row[f.name];
  return out;
}

export function rawLabel(schema: Schema, v: number): number {
  return schema.target_min + v * (schema.target_max - schema.target_min);
}

/** Distance of the counterfactual's prediction from the requested target;
 * the badge compares it against tol. */
export function validityGap(result: CEResult): number {
  return Math.abs(result.y_model - result.y_target);
}

export function hasCategorical(schema: Schema): boolean {
  return schema.features.some((f) => f.kind === "categorical");
}
