/**
 * Dependency-free SVG chart builders.
 *
 * Each function maps server numbers to SVG markup; the only arithmetic
 * is coordinate scaling.  A dotted vertical rule marks the prediction
 * landmark on the time axis.
 */

export interface SeriesBand {
  horizons: number[];
  mean: number[];
  lower: number[];
  upper: number[];
}

export interface ObservedPoint {
  time: number;
  value: number;
}

const WIDTH = 460;
const HEIGHT = 260;
const MARGIN = { top: 16, right: 14, bottom: 34, left: 52 };

interface Scale {
  (value: number): number;
  domain: [number, number];
}

function scaleLinear(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const fn = ((value: number) => r0 + ((value - d0) / span) * (r1 - r0)) as Scale;
  fn.domain = domain;
  return fn;
}

function ticks(domain: [number, number], count: number): number[] {
  const [lo, hi] = domain;
  const step = (hi - lo) / (count - 1) || 1;
  return Array.from({ length: count }, (_, i) => lo + i * step);
}

function fmt(value: number): string {
  const rounded = Math.round(value * 100) / 100;
  return String(rounded);
}

function axes(x: Scale, y: Scale, xLabel: string, yLabel: string): string {
  const parts: string[] = [];
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  parts.push(`<line class="axis" x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}"/>`);
  parts.push(`<line class="axis" x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}"/>`);
  for (const t of ticks(x.domain, 5)) {
    const px = x(t);
    parts.push(`<line class="tick" x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 4}"/>`);
    parts.push(`<text class="tick-label" x="${px}" y="${y0 + 16}" text-anchor="middle">${fmt(t)}</text>`);
  }
  for (const t of ticks(y.domain, 5)) {
    const py = y(t);
    parts.push(`<line class="tick" x1="${x0 - 4}" y1="${py}" x2="${x0}" y2="${py}"/>`);
    parts.push(`<text class="tick-label" x="${x0 - 7}" y="${py + 3}" text-anchor="end">${fmt(t)}</text>`);
  }
  parts.push(
    `<text class="axis-label" x="${(x0 + x1) / 2}" y="${HEIGHT - 4}" text-anchor="middle">${xLabel}</text>`,
  );
  parts.push(
    `<text class="axis-label" x="12" y="${(y0 + y1) / 2}" transform="rotate(-90 12 ${(y0 + y1) / 2})" text-anchor="middle">${yLabel}</text>`,
  );
  return parts.join("");
}

function polyline(xs: number[], ys: number[], className: string): string {
  const points = xs.map((x, i) => `${x.toFixed(2)},${ys[i].toFixed(2)}`).join(" ");
  return `<polyline class="${className}" points="${points}" fill="none"/>`;
}

function bandPolygon(x: Scale, y: Scale, band: SeriesBand): string {
  const upper = band.horizons.map((h, i) => `${x(h).toFixed(2)},${y(band.upper[i]).toFixed(2)}`);
  const lower = band.horizons
    .map((h, i) => `${x(h).toFixed(2)},${y(band.lower[i]).toFixed(2)}`)
    .reverse();
  return `<polygon class="band" points="${[...upper, ...lower].join(" ")}"/>`;
}

function landmarkRule(x: Scale, y: Scale, landmark: number): string {
  const px = x(landmark);
  return (
    `<line class="landmark" x1="${px.toFixed(2)}" y1="${y(y.domain[0]).toFixed(2)}" ` +
    `x2="${px.toFixed(2)}" y2="${y(y.domain[1]).toFixed(2)}" stroke-dasharray="2,4"/>`
  );
}

export function trajectoryChart(
  band: SeriesBand,
  observed: ObservedPoint[],
  landmark: number,
  yLabel: string,
): string {
  const allTimes = [...band.horizons, ...observed.map((p) => p.time), landmark];
  const allValues = [...band.lower, ...band.upper, ...observed.map((p) => p.value)];
  const pad = (Math.max(...allValues) - Math.min(...allValues) || 1) * 0.08;
  const x = scaleLinear([Math.min(...allTimes), Math.max(...allTimes)], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = scaleLinear(
    [Math.min(...allValues) - pad, Math.max(...allValues) + pad],
    [HEIGHT - MARGIN.bottom, MARGIN.top],
  );
  const dots = observed
    .map((p) => `<circle class="observed" cx="${x(p.time).toFixed(2)}" cy="${y(p.value).toFixed(2)}" r="3.2"/>`)
    .join("");
  return (
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" class="chart">` +
    axes(x, y, "months", yLabel) +
    bandPolygon(x, y, band) +
    polyline(band.horizons.map(x), band.mean.map((v) => y(v)), "mean-line") +
    dots +
    landmarkRule(x, y, landmark) +
    `</svg>`
  );
}

export function riskChart(band: SeriesBand, landmark: number): string {
  const x = scaleLinear(
    [landmark, Math.max(...band.horizons)],
    [MARGIN.left, WIDTH - MARGIN.right],
  );
  const y = scaleLinear([0, 1], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  return (
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" class="chart">` +
    axes(x, y, "months", "P(event by t')") +
    bandPolygon(x, y, band) +
    polyline(band.horizons.map(x), band.mean.map((v) => y(v)), "mean-line risk-line") +
    landmarkRule(x, y, landmark) +
    `</svg>`
  );
}

const CATEGORY_COLORS = [
  "#2c7fb8", "#7fcdbb", "#c7e9b4", "#fee391", "#fe9929", "#d95f0e", "#993404", "#7a0177",
];

/** Stacked per-category probability bars, one bar per horizon. */
export function categoryBars(horizons: number[], probs: number[][], title: string): string {
  const x0 = MARGIN.left;
  const plotWidth = WIDTH - MARGIN.left - MARGIN.right;
  const y = scaleLinear([0, 1], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const barWidth = (plotWidth / horizons.length) * 0.6;
  const parts: string[] = [];
  horizons.forEach((h, i) => {
    const cx = x0 + ((i + 0.5) * plotWidth) / horizons.length;
    let cumulative = 0;
    probs[i].forEach((p, cat) => {
      const yTop = y(cumulative + p);
      const height = y(cumulative) - yTop;
      parts.push(
        `<rect class="cat cat-${cat + 1}" x="${(cx - barWidth / 2).toFixed(2)}" y="${yTop.toFixed(2)}" ` +
        `width="${barWidth.toFixed(2)}" height="${height.toFixed(2)}" fill="${CATEGORY_COLORS[cat % CATEGORY_COLORS.length]}">` +
        `<title>category ${cat + 1}: ${(100 * p).toFixed(1)}%</title></rect>`,
      );
      cumulative += p;
    });
    parts.push(
      `<text class="tick-label" x="${cx.toFixed(2)}" y="${HEIGHT - MARGIN.bottom + 16}" text-anchor="middle">${fmt(h)}</text>`,
    );
  });
  for (const t of ticks([0, 1], 5)) {
    parts.push(`<text class="tick-label" x="${x0 - 7}" y="${(y(t) + 3).toFixed(2)}" text-anchor="end">${fmt(t)}</text>`);
  }
  return (
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" class="chart" aria-label="${title}">` +
    parts.join("") +
    `</svg>`
  );
}
