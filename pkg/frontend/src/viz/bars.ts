/** Frequency bar chart for a categorical variable. */

import { linearScale, svgEl } from "./svg";

export interface BarSpec {
  name: string;
  counts: readonly (readonly [string, number])[];
  width?: number;
  height?: number;
}

const MARGIN = { top: 16, right: 16, bottom: 48, left: 46 };

export function renderBars(spec: BarSpec): SVGSVGElement {
  const width = spec.width ?? 360;
  const height = spec.height ?? 280;
  const inner = {
    width: width - MARGIN.left - MARGIN.right,
    height: height - MARGIN.top - MARGIN.bottom,
  };
  const maxCount = Math.max(1, ...spec.counts.map(([, n]) => n));
  const y = linearScale([0, maxCount], [inner.height, 0]);
  const slot = inner.width / Math.max(1, spec.counts.length);
  const barWidth = Math.max(4, slot * 0.72);

  const svg = svgEl("svg", {
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    class: "bar-chart",
    "data-variable": spec.name,
  });
  const plot = svgEl("g", {
    transform: `translate(${MARGIN.left},${MARGIN.top})`,
  });
  spec.counts.forEach(([label, count], i) => {
    const xMid = slot * i + slot / 2;
    plot.append(
      svgEl("rect", {
        x: (xMid - barWidth / 2).toFixed(2),
        y: y(count).toFixed(2),
        width: barWidth.toFixed(2),
        height: (inner.height - y(count)).toFixed(2),
        fill: "#7c3aed",
        class: "freq-bar",
        "data-level": label,
        "data-count": count,
      }),
      svgEl("text", {
        x: xMid,
        y: inner.height + 14,
        "text-anchor": "middle",
        class: "tick",
      }, label),
    );
  });
  plot.append(
    svgEl("text", {
      x: inner.width / 2,
      y: inner.height + 38,
      "text-anchor": "middle",
      class: "axis-label",
    }, spec.name),
    svgEl("text", { x: -6, y: 10, "text-anchor": "end", class: "tick" },
      String(maxCount)),
  );
  svg.append(plot);
  return svg;
}
