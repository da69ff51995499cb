// API payload shapes for /api/v1 plus runtime schema checks. The UI renders
// these fields verbatim (formatting only); anything off-shape raises
// SchemaError so the table is never partially rendered.

export interface MarketInfo {
  market_id: string;
  name: string;
  latitude: number | null;
  longitude: number | null;
  state: string;
}

export interface Posterior {
  down: number;
  flat: number;
  up: number;
}

export interface IntervalInfo {
  lower: number;
  upper: number;
  method: string;
  param: number;
}

export interface Horizon {
  q: number;
  direction: "down" | "flat" | "up";
  posterior: Posterior;
  predicted_price_rs_per_quintal: number;
  interval: IntervalInfo;
  model_version: number;
}

export interface ForecastPayload {
  generated_at: string;
  horizons: Horizon[];
}

export interface EvidenceEntry {
  market_id: string;
  step_start_date: string | null;
  step_end_date: string | null;
  window_start_date: string | null;
  window_end_date: string | null;
  weight: number;
  neighbor_price: number;
}

export interface HistoryDay {
  date: string;
  raw_price: number | null;
  imputed_price: number | null;
}

export interface HistoryPayload {
  market_id: string;
  produce: string;
  days: HistoryDay[];
}

export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

function isFiniteNumber(value: unknown): value is number {
  return typeof value === "number" && Number.isFinite(value);
}

export function validateForecast(payload: unknown): ForecastPayload {
  const p = payload as ForecastPayload;
  if (!p || typeof p !== "object" || !Array.isArray(p.horizons)) {
    throw new SchemaError("forecast payload missing horizons");
  }
  for (const h of p.horizons) {
    if (!isFiniteNumber(h.q)) throw new SchemaError("horizon missing q");
    if (h.direction !== "down" && h.direction !== "flat" && h.direction !== "up") {
      throw new SchemaError(`bad direction ${String(h.direction)}`);
    }
    const post = h.posterior;
    if (!post || !isFiniteNumber(post.down) || !isFiniteNumber(post.flat) || !isFiniteNumber(post.up)) {
      throw new SchemaError("horizon posterior malformed");
    }
    if (!isFiniteNumber(h.predicted_price_rs_per_quintal)) {
      throw new SchemaError("horizon missing predicted price");
    }
    if (!h.interval || !isFiniteNumber(h.interval.lower) || !isFiniteNumber(h.interval.upper)) {
      throw new SchemaError("horizon interval malformed");
    }
  }
  return p;
}

export function validateEvidence(payload: unknown): EvidenceEntry[] {
  if (!Array.isArray(payload)) throw new SchemaError("evidence payload is not a list");
  for (const e of payload as EvidenceEntry[]) {
    if (typeof e.market_id !== "string") throw new SchemaError("evidence entry missing market_id");
    if (!isFiniteNumber(e.weight)) throw new SchemaError("evidence entry missing weight");
    if (!isFiniteNumber(e.neighbor_price)) throw new SchemaError("evidence entry missing price");
  }
  return payload as EvidenceEntry[];
}

export function validateHistory(payload: unknown): HistoryPayload {
  const p = payload as HistoryPayload;
  if (!p || !Array.isArray(p.days)) throw new SchemaError("history payload missing days");
  return p;
}
