// Path chart: model prediction f(x_s) against the interpolation position
// alpha, with the target line, the tolerance band, and a marker on the
// headline step. Pure string assembly so the geometry is unit-testable.

export interface ChartPoint {
  alpha: number;
  y: number;
}

export interface ChartOptions {
  width: number;
  height: number;
  target: number;
  tol: number;
  /** alpha of the accepted/headline step; null hides the marker */
  markerAlpha: number | null;
  /** alpha of the scrub cursor; null hides the cursor line */
  cursorAlpha?: number | null;
}

export const PAD = 28;

export function xScale(alpha: number, width: number): number {
  return PAD + alpha * (width - 2 * PAD);
}

/** Label space [0, 1] maps top-down onto the padded viewport. */
export function yScale(v: number, height: number): number {
  const clamped = Math.min(1, Math.max(0, v));
  return height - PAD - clamped * (height - 2 * PAD);
}

function fmt(v: number): string {
  return String(Math.round(v * 100) / 100);
}

export function pathChartSvg(
  points: ChartPoint[],
  opts: ChartOptions,
): string {
  const { width: w, height: h, target, tol } = opts;
  const bandTop = yScale(target + tol, h);
  const bandBottom = yScale(target - tol, h);
  const poly = points
    .map((p) => `${fmt(xScale(p.alpha, w))},${fmt(yScale(p.y, h))}`)
    .join(" ");

  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${w} ${h}" role="img" aria-label="prediction along the path">`,
  );
  parts.push(
    `<rect data-role="tol-band" x="${PAD}" y="${fmt(bandTop)}" ` +
      `width="${w - 2 * PAD}" height="${fmt(bandBottom - bandTop)}"/>`,
  );
  parts.push(
    `<line data-role="target-line" x1="${PAD}" x2="${w - PAD}" ` +
      `y1="${fmt(yScale(target, h))}" y2="${fmt(yScale(target, h))}"/>`,
  );
  parts.push(`<line data-role="axis-x" x1="${PAD}" x2="${w - PAD}" y1="${h - PAD}" y2="${h - PAD}"/>`);
  parts.push(`<line data-role="axis-y" x1="${PAD}" x2="${PAD}" y1="${PAD}" y2="${h - PAD}"/>`);
  if (points.length > 0) {
    parts.push(`<polyline data-role="path" points="${poly}"/>`);
  }
  if (opts.cursorAlpha !== null && opts.cursorAlpha !== undefined) {
    const cx = fmt(xScale(opts.cursorAlpha, w));
    parts.push(
      `<line data-role="cursor" x1="${cx}" x2="${cx}" y1="${PAD}" y2="${h - PAD}"/>`,
    );
  }
  if (opts.markerAlpha !== null) {
    const p = points.find((q) => q.alpha === opts.markerAlpha);
    if (p !== undefined) {
      parts.push(
        `<circle data-role="accept-marker" cx="${fmt(xScale(p.alpha, w))}" ` +
          `cy="${fmt(yScale(p.y, h))}" r="4"/>`,
      );
    }
  }
  parts.push("</svg>");
  return parts.join("");
}
