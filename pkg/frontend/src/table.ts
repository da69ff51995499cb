// Forecast table: one row per horizon, every number a formatted API field.

import { money2, percent } from "./format.js";
import { ARROWS, DirectionLabels } from "./i18n.js";
import { ForecastPayload, SchemaError, validateForecast } from "./types.js";

const HORIZON_NAMES: Record<number, string> = {
  1: "1 day",
  7: "1 week",
  14: "2 weeks",
  28: "4 weeks",
};

function cell(row: HTMLTableRowElement, className: string, text: string): HTMLTableCellElement {
  const td = document.createElement("td");
  td.className = className;
  td.textContent = text;
  row.appendChild(td);
  return td;
}

/**
 * Render the multi-horizon forecast table into a detached element.
 * Throws SchemaError (leaving no partial output) when the payload is off-shape.
 */
export function renderForecastTable(
  payload: ForecastPayload,
  labels: DirectionLabels,
): HTMLTableElement {
  const checked = validateForecast(payload);
  const table = document.createElement("table");
  table.className = "forecast-table";
  const thead = document.createElement("thead");
  const head = document.createElement("tr");
  thead.appendChild(head);
  for (const title of ["Horizon", "Direction", "Down", "Steady", "Up", "Predicted price", "Price range"]) {
    const th = document.createElement("th");
    th.textContent = title;
    head.appendChild(th);
  }
  const body = document.createElement("tbody");
  table.append(thead, body);
  for (const h of checked.horizons) {
    const row = document.createElement("tr");
    body.appendChild(row);
    row.dataset.q = String(h.q);
    cell(row, "horizon", HORIZON_NAMES[h.q] ?? `${h.q} days`);
    const direction = cell(row, `direction direction-${h.direction}`, `${ARROWS[h.direction]} ${labels[h.direction]}`);
    direction.dataset.direction = h.direction;
    cell(row, "posterior posterior-down", percent(h.posterior.down));
    cell(row, "posterior posterior-flat", percent(h.posterior.flat));
    cell(row, "posterior posterior-up", percent(h.posterior.up));
    cell(row, "price", `₹ ${money2(h.predicted_price_rs_per_quintal)}`);
    cell(row, "interval", `₹ ${money2(h.interval.lower)} – ₹ ${money2(h.interval.upper)}`);
  }
  return table;
}

export function renderErrorBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = document.createElement("div");
  banner.className = "error-banner";
  const text = document.createElement("span");
  text.textContent = message;
  const retry = document.createElement("button");
  retry.textContent = "Retry";
  retry.className = "retry";
  retry.addEventListener("click", onRetry);
  banner.append(text, retry);
  return banner;
}

export { SchemaError };
