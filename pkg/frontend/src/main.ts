import { ApiClient, ApiError } from "./api.js";
import type { GeneratePayload } from "./api.js";
import { pathChartSvg } from "./chart.js";
import { GENERATE_DEBOUNCE_MS, debounce } from "./debounce.js";
import { featureDeltas, maxAbsDelta } from "./deltas.js";
import { RequestGate } from "./requests.js";
import * as st from "./state.js";
import type { CEResult } from "./types.js";

const api = new ApiClient();
let state = st.initialState();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

// -- request plumbing ------------------------------------------------------

const gate = new RequestGate<GeneratePayload, CEResult>(
  (payload) => api.generate(payload),
  (result) => {
    state = st.withResult(state, result);
    renderResult();
  },
  (err) => {
    if (err instanceof ApiError) {
      // 4xx from the service renders inline next to the controls
      el("request-error").textContent = err.message;
      el("request-error").hidden = false;
    } else {
      showBanner(`service unreachable: ${String(err)}`);
    }
  },
);

function requestGenerate(): void {
  const query = st.queryRow(state);
  if (query === null) return;
  el("request-error").hidden = true;
  gate.submit({
    query,
    target: state.target,
    tol: state.tol,
    steps: state.steps,
  });
}

const scrubGenerate = debounce(requestGenerate, GENERATE_DEBOUNCE_MS);

// -- rendering -------------------------------------------------------------

function showBanner(message: string): void {
  el("banner-msg").textContent = message;
  el("banner").hidden = false;
}

function fmtNum(v: number | string, digits = 3): string {
  const n = Number(v);
  return Number.isFinite(n) ? n.toFixed(digits) : String(v);
}

function renderSchema(): void {
  const schema = state.schema;
  if (schema === null) return;
  const body = el("feature-rows");
  body.innerHTML = "";
  for (const f of schema.features) {
    const tr = document.createElement("tr");
    const range =
      f.kind === "continuous"
        ? `${fmtNum(f.mean ?? 0)} ± ${fmtNum(f.std ?? 0)}`
        : (f.categories ?? []).join(", ");
    tr.innerHTML = `<td>${f.name}</td><td>${f.kind}</td><td>${range}</td>`;
    body.appendChild(tr);
  }
  el("target-name").textContent = schema.target;
  el("target-range").textContent =
    `${fmtNum(schema.target_min)} … ${fmtNum(schema.target_max)}`;
  el("categorical-panel").hidden = !st.hasCategorical(schema);
}

function renderRows(): void {
  const select = el<HTMLSelectElement>("row-select");
  select.innerHTML = "";
  for (const entry of state.rows) {
    const opt = document.createElement("option");
    opt.value = String(entry.index);
    opt.textContent = `row ${entry.index}  (prediction ${fmtNum(entry.prediction)})`;
    select.appendChild(opt);
  }
  select.selectedIndex = state.selected;
}

function renderTarget(): void {
  const schema = state.schema;
  el<HTMLInputElement>("target-slider").value = String(state.target);
  const raw = schema === null ? state.target : st.rawLabel(schema, state.target);
  el("target-readout").textContent =
    `${state.target.toFixed(3)} (raw ${fmtNum(raw)})`;
  el<HTMLInputElement>("tol-input").value = String(state.tol);
}

function renderBadge(result: CEResult): void {
  const badge = el("badge");
  const gap = st.validityGap(result);
  badge.classList.toggle("accepted", result.accepted);
  badge.classList.toggle("rejected", !result.accepted);
  badge.textContent = result.accepted
    ? `accepted  |f(x) − target| = ${gap.toFixed(4)} < ${result.tol}`
    : `not accepted  closest |f(x) − target| = ${gap.toFixed(4)} ≥ ${result.tol}`;
}

function renderDeltas(result: CEResult): void {
  const schema = state.schema;
  const query = st.selectedRow(state);
  if (schema === null || query === null) return;
  const rows = featureDeltas(schema, query.row, result.row);
  const scale = maxAbsDelta(rows);
  const body = el("delta-rows");
  body.innerHTML = "";
  for (const r of rows) {
    const tr = document.createElement("tr");
    if (r.changed) tr.classList.add("changed");
    const bar = document.createElement("td");
    if (r.delta !== null) {
      const w = Math.abs(r.delta) / scale * 100;
      const dir = r.delta >= 0 ? "pos" : "neg";
      bar.innerHTML =
        `<div class="bar ${dir}" style="width:${w.toFixed(1)}%"></div>`;
    } else {
      bar.textContent = r.changed ? `${r.from} → ${r.to}` : "unchanged";
    }
    tr.innerHTML =
      `<td>${r.name}</td><td>${fmtNum(r.from)}</td><td>${fmtNum(r.to)}</td>` +
      `<td>${r.delta === null ? "" : fmtNum(r.delta)}</td>`;
    tr.appendChild(bar);
    body.appendChild(tr);
  }
}

function renderChart(result: CEResult): void {
  const step = st.cursorStep(state);
  el("chart").innerHTML = pathChartSvg(
    result.path.map((p) => ({ alpha: p.alpha, y: p.y_model })),
    {
      width: 560,
      height: 240,
      target: result.y_target,
      tol: result.tol,
      markerAlpha: result.alpha,
      cursorAlpha: step === null ? null : step.alpha,
    },
  );
}

function renderStep(): void {
  const result = state.result;
  const schema = state.schema;
  const query = st.selectedRow(state);
  const step = st.cursorStep(state);
  if (result === null || schema === null || query === null || step === null) {
    return;
  }
  el<HTMLInputElement>("cursor").max = String(result.path.length - 1);
  el<HTMLInputElement>("cursor").value = String(state.cursor);
  el("cursor-readout").textContent =
    `α = ${step.alpha.toFixed(3)}   f(x) = ${step.y_model.toFixed(4)}`;
  const body = el("step-rows");
  body.innerHTML = "";
  for (const d of featureDeltas(schema, query.row, step.row)) {
    const tr = document.createElement("tr");
    if (d.changed) tr.classList.add("changed");
    tr.innerHTML =
      `<td>${d.name}</td><td>${fmtNum(d.from)}</td><td>${fmtNum(d.to)}</td>`;
    body.appendChild(tr);
  }
  renderChart(result);
}

function renderResult(): void {
  const result = state.result;
  if (result === null) {
    el("result-panel").hidden = true;
    return;
  }
  el("result-panel").hidden = false;
  renderBadge(result);
  renderDeltas(result);
  renderStep();
}

// -- wiring ----------------------------------------------------------------

function bind(): void {
  el<HTMLSelectElement>("row-select").addEventListener("change", (ev) => {
    const index = Number((ev.target as HTMLSelectElement).value);
    const pos = state.rows.findIndex((r) => r.index === index);
    state = st.selectRow(state, pos < 0 ? 0 : pos);
    renderTarget();
    renderResult();
    requestGenerate();
  });

  el<HTMLInputElement>("target-slider").addEventListener("input", (ev) => {
    state = st.setTarget(state, Number((ev.target as HTMLInputElement).value));
    renderTarget();
    scrubGenerate();
  });

  el<HTMLInputElement>("tol-input").addEventListener("change", (ev) => {
    state = st.setTol(state, Number((ev.target as HTMLInputElement).value));
    renderTarget();
    scrubGenerate();
  });

  el<HTMLInputElement>("cursor").addEventListener("input", (ev) => {
    state = st.setCursor(state, Number((ev.target as HTMLInputElement).value));
    renderStep();
  });

  el("banner-retry").addEventListener("click", () => {
    el("banner").hidden = true;
    void init();
  });
}

async function init(): Promise<void> {
  try {
    const health = await api.health();
    el("health").textContent =
      `service ${health.version}  model ${health.fingerprint.slice(0, 12)}…`;
    const [schema, rows] = await Promise.all([api.schema(), api.rows(25)]);
    state = st.withSchema(state, schema, rows.rows);
    renderSchema();
    renderRows();
    renderTarget();
    renderResult();
    requestGenerate();
  } catch (err) {
    // the page stays usable; the banner offers a retry
    showBanner(
      err instanceof ApiError
        ? `service error: ${err.message}`
        : `cannot reach the service: ${String(err)}`,
    );
  }
}

bind();
void init();
