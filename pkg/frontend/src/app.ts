// Controller: view state, data fetching (one forecast request per selection,
// one evidence request per horizon change), and rendering into the page shell.

import { ApiClient } from "./api.js";
import { renderEvidence } from "./evidence.js";
import { applyLayout } from "./layout.js";
import { DirectionLabels, Lang, directionLabels, pickLang } from "./i18n.js";
import { renderErrorBanner, renderForecastTable } from "./table.js";
import { EvidenceEntry, ForecastPayload, HistoryPayload, MarketInfo } from "./types.js";

const HISTORY_DAYS = 730;

export interface ViewState {
  marketId: string | null;
  produce: string | null;
  q: number;
  evidenceExpanded: boolean;
  lang: Lang;
}

export class App {
  state: ViewState;
  private labels: DirectionLabels;
  private markets: MarketInfo[] = [];
  private produceList: string[] = [];
  private forecast: ForecastPayload | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    deviceLocale?: string,
  ) {
    this.state = {
      marketId: null,
      produce: null,
      q: 7,
      evidenceExpanded: true,
      lang: pickLang(deviceLocale),
    };
    this.labels = directionLabels(this.state.lang);
    this.buildShell();
  }

  private buildShell(): void {
    this.root.innerHTML = "";
    this.root.classList.add("app");
    const controls = document.createElement("div");
    controls.className = "controls";
    const marketSelect = document.createElement("select");
    marketSelect.id = "market-select";
    const produceSelect = document.createElement("select");
    produceSelect.id = "produce-select";
    const horizonSelect = document.createElement("select");
    horizonSelect.id = "horizon-select";
    controls.append(marketSelect, produceSelect, horizonSelect);

    const panes = document.createElement("div");
    panes.className = "panes";
    const forecastPane = document.createElement("section");
    forecastPane.id = "forecast-pane";
    const evidencePane = document.createElement("section");
    evidencePane.id = "evidence-pane";
    panes.append(forecastPane, evidencePane);
    this.root.append(controls, panes);

    marketSelect.addEventListener("change", () => {
      void this.select(marketSelect.value, this.state.produce ?? this.produceList[0] ?? null);
    });
    produceSelect.addEventListener("change", () => {
      void this.select(this.state.marketId ?? this.markets[0]?.market_id ?? null, produceSelect.value);
    });
    horizonSelect.addEventListener("change", () => {
      void this.changeHorizon(Number(horizonSelect.value));
    });
  }

  private pane(id: string): HTMLElement {
    return this.root.querySelector(`#${id}`) as HTMLElement;
  }

  async start(viewportWidth: number): Promise<void> {
    applyLayout(this.root, viewportWidth);
    [this.markets, this.produceList] = await Promise.all([
      this.api.markets(),
      this.api.produce(),
    ]);
    const marketSelect = this.pane("market-select") as unknown as HTMLSelectElement;
    for (const m of this.markets) {
      const option = document.createElement("option");
      option.value = m.market_id;
      option.textContent = `${m.name} (${m.state})`;
      marketSelect.appendChild(option);
    }
    const produceSelect = this.pane("produce-select") as unknown as HTMLSelectElement;
    for (const p of this.produceList) {
      const option = document.createElement("option");
      option.value = p;
      option.textContent = p;
      produceSelect.appendChild(option);
    }
    const first = this.markets[0];
    const firstProduce = this.produceList[0];
    if (first && firstProduce) {
      await this.select(first.market_id, firstProduce);
    }
  }

  /** Selection change: exactly one forecast request plus one evidence request. */
  async select(marketId: string | null, produce: string | null): Promise<void> {
    if (!marketId || !produce) return;
    this.state.marketId = marketId;
    this.state.produce = produce;
    this.api.supersede();
    try {
      this.forecast = await this.api.forecast(marketId, produce);
      this.renderForecast();
      this.syncHorizonOptions();
      await this.loadEvidence();
    } catch (error) {
      this.showError(error, () => void this.select(marketId, produce));
    }
  }

  /** Horizon change: one evidence request; the forecast table stays as is. */
  async changeHorizon(q: number): Promise<void> {
    this.state.q = q;
    try {
      await this.loadEvidence();
    } catch (error) {
      this.showError(error, () => void this.changeHorizon(q));
    }
  }

  private syncHorizonOptions(): void {
    const select = this.pane("horizon-select") as unknown as HTMLSelectElement;
    select.innerHTML = "";
    const served = this.forecast?.horizons.map((h) => h.q) ?? [];
    for (const q of served) {
      const option = document.createElement("option");
      option.value = String(q);
      option.textContent = `${q}-day step`;
      select.appendChild(option);
    }
    if (!served.includes(this.state.q) && served.length > 0) {
      this.state.q = served[0] as number;
    }
    select.value = String(this.state.q);
  }

  private renderForecast(): void {
    const pane = this.pane("forecast-pane");
    pane.innerHTML = "";
    if (!this.forecast) return;
    const heading = document.createElement("h2");
    heading.textContent = `${this.state.produce} at ${this.state.marketId}`;
    const stamp = document.createElement("p");
    stamp.className = "generated-at";
    stamp.textContent = `Forecast generated ${this.forecast.generated_at}`;
    pane.append(heading, renderForecastTable(this.forecast, this.labels), stamp);
  }

  private async loadEvidence(): Promise<void> {
    const { marketId, produce, q } = this.state;
    if (!marketId || !produce) return;
    const evidence = await this.api.evidence(marketId, produce, q);
    const histories = await this.fetchNeighborHistories(evidence, produce);
    const pane = this.pane("evidence-pane");
    pane.innerHTML = "";
    const heading = document.createElement("h2");
    heading.textContent = "Why this forecast";
    pane.appendChild(heading);
    pane.appendChild(renderEvidence(evidence, histories).element);
  }

  private async fetchNeighborHistories(
    evidence: EvidenceEntry[],
    produce: string,
  ): Promise<Map<string, HistoryPayload>> {
    const distinct = [...new Set(evidence.map((e) => e.market_id))];
    const histories = new Map<string, HistoryPayload>();
    await Promise.all(
      distinct.map(async (marketId) => {
        try {
          histories.set(marketId, await this.api.history(marketId, produce, HISTORY_DAYS));
        } catch {
          // window renders from neighbor_price alone when history is missing
        }
      }),
    );
    return histories;
  }

  private showError(error: unknown, retry: () => void): void {
    const pane = this.pane("forecast-pane");
    pane.innerHTML = "";
    const message = error instanceof Error ? error.message : String(error);
    pane.appendChild(renderErrorBanner(`Could not load forecast: ${message}`, retry));
  }
}
