import { describe, expect, it } from "vitest";

import {
  PAD,
  pathChartSvg,
  xScale,
  yScale,
  type ChartOptions,
  type ChartPoint,
} from "../src/chart.js";

const W = 560;
const H = 240;

function opts(extra: Partial<ChartOptions> = {}): ChartOptions {
  return { width: W, height: H, target: 0.6, tol: 0.05, markerAlpha: null, ...extra };
}

describe("scales", () => {
  it("maps alpha onto the padded horizontal span", () => {
    expect(xScale(0, W)).toBe(PAD);
    expect(xScale(1, W)).toBe(W - PAD);
    expect(xScale(0.5, W)).toBe(W / 2);
  });

  it("maps label 0 to the bottom and 1 to the top", () => {
    expect(yScale(0, H)).toBe(H - PAD);
    expect(yScale(1, H)).toBe(PAD);
  });

  it("clamps out-of-range labels to the viewport", () => {
    expect(yScale(1.4, H)).toBe(PAD);
    expect(yScale(-0.3, H)).toBe(H - PAD);
  });
});

describe("pathChartSvg", () => {
  const points: ChartPoint[] = [
    { alpha: 0.25, y: 0.3 },
    { alpha: 0.5, y: 0.45 },
    { alpha: 1.0, y: 0.62 },
  ];

  it("draws the polyline through the scaled points", () => {
    const svg = pathChartSvg(points, opts());
    const m = svg.match(/data-role="path" points="([^"]+)"/);
    expect(m).not.toBeNull();
    const pairs = m![1].split(" ").map((s) => s.split(",").map(Number));
    expect(pairs).toHaveLength(3);
    expect(pairs[0][0]).toBeCloseTo(xScale(0.25, W), 2);
    expect(pairs[0][1]).toBeCloseTo(yScale(0.3, H), 2);
    expect(pairs[2][0]).toBeCloseTo(xScale(1.0, W), 2);
    expect(pairs[2][1]).toBeCloseTo(yScale(0.62, H), 2);
  });

  it("centers the tolerance band on the target line", () => {
    const svg = pathChartSvg(points, opts());
    const band = svg.match(/data-role="tol-band" x="\d+" y="([\d.]+)" width="\d+" height="([\d.]+)"/);
    const line = svg.match(/data-role="target-line"[^/]*y1="([\d.]+)"/);
    expect(band).not.toBeNull();
    expect(line).not.toBeNull();
    const top = Number(band![1]);
    const height = Number(band![2]);
    const mid = Number(line![1]);
    expect(top + height / 2).toBeCloseTo(mid, 1);
    expect(height).toBeCloseTo(yScale(0.55, H) - yScale(0.65, H), 1);
  });

  it("marks the accepted step only when it lies on the path", () => {
    const marked = pathChartSvg(points, opts({ markerAlpha: 0.5 }));
    const m = marked.match(/data-role="accept-marker" cx="([\d.]+)" cy="([\d.]+)"/);
    expect(m).not.toBeNull();
    expect(Number(m![1])).toBeCloseTo(xScale(0.5, W), 2);
    expect(Number(m![2])).toBeCloseTo(yScale(0.45, H), 2);

    expect(pathChartSvg(points, opts())).not.toContain("accept-marker");
    expect(pathChartSvg(points, opts({ markerAlpha: 0.33 }))).not.toContain("accept-marker");
  });

  it("draws the scrub cursor as a vertical line at its alpha", () => {
    const svg = pathChartSvg(points, opts({ cursorAlpha: 0.25 }));
    const m = svg.match(/data-role="cursor" x1="([\d.]+)" x2="([\d.]+)"/);
    expect(m).not.toBeNull();
    expect(m![1]).toBe(m![2]);
    expect(Number(m![1])).toBeCloseTo(xScale(0.25, W), 2);
    expect(pathChartSvg(points, opts())).not.toContain('data-role="cursor"');
  });

  it("omits the polyline when there are no points yet", () => {
    const svg = pathChartSvg([], opts());
    expect(svg).not.toContain('data-role="path"');
    expect(svg).toContain('data-role="axis-x"');
    expect(svg).toContain('data-role="axis-y"');
  });

  it("keeps a band around an edge target inside the viewport", () => {
    const svg = pathChartSvg(points, opts({ target: 1.0, tol: 0.1 }));
    const band = svg.match(/data-role="tol-band" x="\d+" y="([\d.]+)"/);
    expect(Number(band![1])).toBeGreaterThanOrEqual(PAD);
  });
});
