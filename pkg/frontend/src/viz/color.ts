/** Correlation color scale, kept numerically identical to the server's so a
 * cell colored client-side always matches the `color` string the API returns
 * for the same coefficient. */

export type Rgb = readonly [number, number, number];

export const RED_ANCHOR: Rgb = [215, 48, 39];
export const YELLOW_ANCHOR: Rgb = [255, 255, 191];
export const GREEN_ANCHOR: Rgb = [26, 152, 80];

/** Diverging red(-1) -> yellow(0) -> green(+1), linear per component. */
export function colorFor(r: number): Rgb {
  if (!(r >= -1 && r <= 1)) {
    throw new RangeError(`correlation ${r} outside [-1, 1]`);
  }
  const [lo, hi, t] =
    r < 0
      ? ([RED_ANCHOR, YELLOW_ANCHOR, r + 1] as const)
      : ([YELLOW_ANCHOR, GREEN_ANCHOR, r] as const);
  return [
    lo[0] + (hi[0] - lo[0]) * t,
    lo[1] + (hi[1] - lo[1]) * t,
    lo[2] + (hi[2] - lo[2]) * t,
  ];
}

/** Round half to even, as the server does; Math.round rounds half up and
 * would disagree on exact .5 components. */
export function roundHalfEven(value: number): number {
  const floor = Math.floor(value);
  const diff = value - floor;
  if (diff < 0.5) return floor;
  if (diff > 0.5) return floor + 1;
  return floor % 2 === 0 ? floor : floor + 1;
}

export function cssColor(rgb: Rgb): string {
  return `rgb(${roundHalfEven(rgb[0])},${roundHalfEven(rgb[1])},${roundHalfEven(rgb[2])})`;
}

export interface CorrelationThresholds {
  good: number;
  moderate: number;
}

export const DEFAULT_THRESHOLDS: CorrelationThresholds = {
  good: 0.7,
  moderate: 0.4,
};

export function classifyCorrelation(
  r: number,
  thresholds: CorrelationThresholds = DEFAULT_THRESHOLDS,
): "good" | "moderate" | "poor" {
  const strength = Math.abs(r);
  if (strength >= thresholds.good) return "good";
  if (strength >= thresholds.moderate) return "moderate";
  return "poor";
}
