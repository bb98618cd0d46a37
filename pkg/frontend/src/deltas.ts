import type { RawRow, Schema } from "./types.js";

// A change below this is one-hot/regression noise, not a real edit.
const CHANGE_EPS = 1e-9;

export interface DeltaRow {
  name: string;
  kind: "continuous" | "categorical";
  from: number | string;
  to: number | string;
  delta: number | null;
  changed: boolean;
}

/** Per-feature comparison of two raw rows (query vs counterfactual), in
 * original units. Categorical features compare as labels. */
export function featureDeltas(
  schema: Schema,
  from: RawRow,
  to: RawRow,
): DeltaRow[] {
  return schema.features.map((f) => {
    if (f.kind === "categorical") {
      const a = String(from[f.name]);
      const b = String(to[f.name]);
      return {
        name: f.name,
        kind: f.kind,
        from: a,
        to: b,
        delta: null,
        changed: a !== b,
      };
    }
    const a = Number(from[f.name]);
    const b = Number(to[f.name]);
    const delta = b - a;
    return {
      name: f.name,
      kind: f.kind,
      from: a,
      to: b,
      delta,
      changed: Math.abs(delta) > CHANGE_EPS,
    };
  });
}

/** Largest continuous |delta|, for scaling the bar widths. Returns 1 when
 * nothing moved so the scale is always usable as a divisor. */
export function maxAbsDelta(rows: DeltaRow[]): number {
  let m = 0;
  for (const r of rows) {
    if (r.delta !== null) m = Math.max(m, Math.abs(r.delta));
  }
  return m > 0 ? m : 1;
}
