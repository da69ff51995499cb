// Thin fetch client for /api/v1 with cancel-on-supersede: starting a new
// selection epoch aborts every request still in flight from the previous one.

import {
  EvidenceEntry,
  ForecastPayload,
  HistoryPayload,
  MarketInfo,
  validateEvidence,
  validateForecast,
  validateHistory,
} from "./types.js";

export class ApiError extends Error {
  constructor(message: string, readonly status: number, readonly code?: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  private controller: AbortController | null = null;

  constructor(readonly baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  /** Abort in-flight requests; later requests join the new epoch. */
  supersede(): void {
    if (this.controller) this.controller.abort();
    this.controller = new AbortController();
  }

  private async get(path: string): Promise<unknown> {
    if (!this.controller) this.controller = new AbortController();
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      signal: this.controller.signal,
    });
    if (!response.ok) {
      let code: string | undefined;
      try {
        const body = (await response.json()) as { error?: { code?: string } };
        code = body.error?.code;
      } catch {
        // non-JSON error body
      }
      throw new ApiError(`GET ${path} -> ${response.status}`, response.status, code);
    }
    return response.json();
  }

  async markets(): Promise<MarketInfo[]> {
    return (await this.get("/markets")) as MarketInfo[];
  }

  async produce(): Promise<string[]> {
    return (await this.get("/produce")) as string[];
  }

  async forecast(marketId: string, produce: string): Promise<ForecastPayload> {
    return validateForecast(await this.get(`/forecast/${marketId}/${produce}`));
  }

  async evidence(marketId: string, produce: string, q: number): Promise<EvidenceEntry[]> {
    return validateEvidence(await this.get(`/evidence/${marketId}/${produce}?q=${q}`));
  }

  async history(marketId: string, produce: string, days: number): Promise<HistoryPayload> {
    return validateHistory(await this.get(`/history/${marketId}/${produce}?days=${days}`));
  }
}
