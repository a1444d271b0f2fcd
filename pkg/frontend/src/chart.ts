/**
 * Trajectory chart: an ordered-by-k buffer of scalar observations and a
 * dependency-free SVG line renderer, so the same code paths run in the
 * browser and under test.
 */

export interface ChartPoint {
  k: number;
  value: number;
}

/** Buffer of (k, value) points kept sorted by k; duplicate k replaces. */
export class TrajectoryBuffer {
  private points: ChartPoint[] = [];

  add(k: number, value: number): void {
    if (!Number.isFinite(k) || !Number.isFinite(value)) {
      throw new Error(`non-finite chart point (${k}, ${value})`);
    }
    let lo = 0;
    let hi = this.points.length;
    while (lo < hi) {
      const mid = (lo + hi) >> 1;
      if (this.points[mid]!.k < k) lo = mid + 1;
      else hi = mid;
    }
    if (lo < this.points.length && this.points[lo]!.k === k) {
      this.points[lo] = { k, value };
    } else {
      this.points.splice(lo, 0, { k, value });
    }
  }

  get data(): readonly ChartPoint[] {
    return this.points;
  }

  get length(): number {
    return this.points.length;
  }

  get last(): ChartPoint | null {
    return this.points.length > 0 ? this.points[this.points.length - 1]! : null;
  }

  clear(): void {
    this.points = [];
  }
}

export interface ChartOptions {
  width?: number;
  height?: number;
  /** freeze the chart and annotate the final value */
  finished?: boolean;
  /** axis label for the observable */
  label?: string;
}

interface Scale {
  x(k: number): number;
  y(v: number): number;
}

const PAD = 28;

function makeScale(points: readonly ChartPoint[], width: number, height: number): Scale {
  const ks = points.map((p) => p.k);
  const vs = points.map((p) => p.value);
  const kMin = Math.min(...ks);
  const kMax = Math.max(...ks);
  let vMin = Math.min(...vs);
  let vMax = Math.max(...vs);
  if (vMax === vMin) {
    vMin -= 1;
    vMax += 1;
  }
  const kSpan = kMax === kMin ? 1 : kMax - kMin;
  return {
    x: (k) => PAD + ((k - kMin) / kSpan) * (width - 2 * PAD),
    y: (v) => height - PAD - ((v - vMin) / (vMax - vMin)) * (height - 2 * PAD),
  };
}

function fmt(x: number): string {
  return Number(x.toFixed(3)).toString();
}

/** SVG path data ("M x y L x y ...") for the polyline through the points. */
export function svgPath(
  points: readonly ChartPoint[],
  width: number,
  height: number,
): string {
  if (points.length === 0) return "";
  const s = makeScale(points, width, height);
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"} ${fmt(s.x(p.k))} ${fmt(s.y(p.value))}`)
    .join(" ");
}

/** Full SVG markup for the trajectory; a single point renders as a marker. */
export function renderChart(
  buffer: TrajectoryBuffer,
  opts: ChartOptions = {},
): string {
  const width = opts.width ?? 640;
  const height = opts.height ?? 320;
  const points = buffer.data;
  if (points.length === 0) {
    throw new Error("cannot render an empty trajectory");
  }
  const s = makeScale(points, width, height);
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
      `width="${width}" height="${height}" role="img">`,
  ];
  if (opts.label) {
    parts.push(`<text x="${PAD}" y="16" class="chart-label">${opts.label}</text>`);
  }
  if (points.length === 1) {
    const p = points[0]!;
    parts.push(
      `<circle cx="${fmt(s.x(p.k))}" cy="${fmt(s.y(p.value))}" r="4" class="chart-marker"/>`,
    );
  } else {
    parts.push(
      `<path d="${svgPath(points, width, height)}" fill="none" class="chart-line"/>`,
    );
  }
  if (opts.finished) {
    const last = points[points.length - 1]!;
    parts.push(
      `<text x="${fmt(s.x(last.k))}" y="${fmt(s.y(last.value) - 8)}" ` +
        `class="chart-final">final: ${fmt(last.value)}</text>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}
