/** Scatter plot of one variable pair, drawn straight to SVG. */

import { extent, linearScale, svgEl } from "./svg";

export interface ScatterSpec {
  xName: string;
  yName: string;
  points: readonly (readonly [number, number])[];
  width?: number;
  height?: number;
}

const MARGIN = { top: 16, right: 16, bottom: 34, left: 46 };

export function renderScatter(spec: ScatterSpec): SVGSVGElement {
  const width = spec.width ?? 360;
  const height = spec.height ?? 280;
  const inner = {
    width: width - MARGIN.left - MARGIN.right,
    height: height - MARGIN.top - MARGIN.bottom,
  };
  const xs = spec.points.map((p) => p[0]);
  const ys = spec.points.map((p) => p[1]);
  const x = linearScale(extent(xs), [0, inner.width]);
  const y = linearScale(extent(ys), [inner.height, 0]);

  const svg = svgEl("svg", {
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    class: "scatter-plot",
    "data-x": spec.xName,
    "data-y": spec.yName,
  });
  const plot = svgEl("g", {
    transform: `translate(${MARGIN.left},${MARGIN.top})`,
  });
  plot.append(
    svgEl("rect", {
      width: inner.width,
      height: inner.height,
      fill: "none",
      stroke: "#cbd5e1",
    }),
  );
  for (const [px, py] of spec.points) {
    plot.append(
      svgEl("circle", {
        cx: x(px).toFixed(2),
        cy: y(py).toFixed(2),
        r: 3,
        fill: "#2563eb",
        "fill-opacity": 0.65,
        class: "scatter-point",
      }),
    );
  }
  const [xLo, xHi] = extent(xs);
  const [yLo, yHi] = extent(ys);
  plot.append(
    svgEl("text", {
      x: inner.width / 2,
      y: inner.height + 26,
      "text-anchor": "middle",
      class: "axis-label",
    }, spec.xName),
    svgEl("text", {
      x: -34,
      y: inner.height / 2,
      transform: `rotate(-90 -34 ${inner.height / 2})`,
      "text-anchor": "middle",
      class: "axis-label",
    }, spec.yName),
    svgEl("text", { x: 0, y: inner.height + 12, class: "tick" }, fmt(xLo)),
    svgEl("text", {
      x: inner.width, y: inner.height + 12, "text-anchor": "end", class: "tick",
    }, fmt(xHi)),
    svgEl("text", { x: -4, y: inner.height, "text-anchor": "end", class: "tick" }, fmt(yLo)),
    svgEl("text", { x: -4, y: 10, "text-anchor": "end", class: "tick" }, fmt(yHi)),
  );
  svg.append(plot);
  return svg;
}

function fmt(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return value.toPrecision(3);
}
