// Evidence view: each neighbor's historical price window overlaid on one SVG
// line chart (opacity scales with weight) plus a clickable legend.

import { dateRange, percent } from "./format.js";
import { EvidenceEntry, HistoryPayload } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const WIDTH = 640;
const HEIGHT = 260;
const PAD = 28;

export interface EvidenceView {
  element: HTMLElement;
  /** series opacity by evidence index, exposed for tests */
  opacities: number[];
}

interface Series {
  entry: EvidenceEntry;
  prices: number[];
}

function windowPrices(entry: EvidenceEntry, history: HistoryPayload | undefined): number[] {
  if (!history || !entry.window_start_date || !entry.step_end_date) return [];
  const prices: number[] = [];
  for (const day of history.days) {
    if (day.date >= entry.window_start_date && day.date <= entry.step_end_date) {
      const price = day.imputed_price ?? day.raw_price;
      if (price !== null) prices.push(price);
    }
  }
  return prices;
}

function polyline(prices: number[], lo: number, hi: number): SVGPolylineElement {
  const line = document.createElementNS(SVG_NS, "polyline");
  const span = hi - lo || 1;
  const step = prices.length > 1 ? (WIDTH - 2 * PAD) / (prices.length - 1) : 0;
  const points = prices
    .map((p, i) => {
      const x = PAD + i * step;
      const y = HEIGHT - PAD - ((p - lo) / span) * (HEIGHT - 2 * PAD);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  line.setAttribute("points", points);
  line.setAttribute("fill", "none");
  return line;
}

/**
 * Render neighbor windows against per-market history payloads. Evidence must
 * already be sorted by descending weight (the API contract); the top entry is
 * drawn most opaque.
 */
export function renderEvidence(
  evidence: EvidenceEntry[],
  histories: Map<string, HistoryPayload>,
): EvidenceView {
  const root = document.createElement("div");
  root.className = "evidence";

  if (evidence.length === 0) {
    const empty = document.createElement("p");
    empty.className = "evidence-empty";
    empty.textContent = "No comparable historical windows were found for this forecast.";
    root.appendChild(empty);
    return { element: root, opacities: [] };
  }

  const series: Series[] = evidence.map((entry) => ({
    entry,
    prices: windowPrices(entry, histories.get(entry.market_id)),
  }));
  const allPrices = series.flatMap((s) => s.prices).concat(evidence.map((e) => e.neighbor_price));
  const lo = Math.min(...allPrices);
  const hi = Math.max(...allPrices);
  const maxWeight = Math.max(...evidence.map((e) => e.weight));

  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${WIDTH} ${HEIGHT}`);
  svg.setAttribute("class", "evidence-chart");
  svg.setAttribute("role", "img");

  const opacities: number[] = [];
  const lines: SVGPolylineElement[] = [];
  series.forEach((s, index) => {
    const opacity = 0.25 + 0.75 * (s.entry.weight / maxWeight);
    opacities.push(opacity);
    const line = polyline(s.prices, lo, hi);
    line.setAttribute("class", `evidence-series series-${index}`);
    line.setAttribute("stroke-opacity", opacity.toFixed(3));
    line.dataset.index = String(index);
    svg.appendChild(line);
    lines.push(line);
  });
  root.appendChild(svg);

  const legend = document.createElement("ul");
  legend.className = "evidence-legend";
  evidence.forEach((entry, index) => {
    const item = document.createElement("li");
    item.className = "legend-row";
    item.dataset.index = String(index);
    const windowText = dateRange(entry.window_start_date, entry.window_end_date);
    const stepText = dateRange(entry.step_start_date, entry.step_end_date);
    item.textContent = `${entry.market_id} · ${windowText} · weight ${percent(entry.weight)} · then ₹${entry.neighbor_price} (${stepText})`;
    item.addEventListener("click", () => {
      legend.querySelectorAll(".highlighted").forEach((el) => el.classList.remove("highlighted"));
      lines.forEach((l) => l.classList.remove("highlighted"));
      item.classList.add("highlighted");
      lines[index]?.classList.add("highlighted");
    });
    legend.appendChild(item);
  });
  root.appendChild(legend);
  return { element: root, opacities };
}
