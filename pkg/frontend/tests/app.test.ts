// Integration against the stub server: request discipline per selection and
// horizon change, rendering into the shell, cancel-on-supersede.

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";
import { StubServer, startStub } from "./stub-server.js";

let stub: StubServer;
let root: HTMLElement;

beforeEach(async () => {
  stub = await startStub();
  root = document.createElement("div");
  document.body.appendChild(root);
});

afterEach(async () => {
  await stub.close();
  document.body.innerHTML = "";
});

function makeApp(): App {
  const api = new ApiClient(stub.url, (...args) => fetch(...args));
  return new App(root, api, "en-IN");
}

describe("App", () => {
  it("start issues exactly one forecast and one evidence request", async () => {
    const app = makeApp();
    await app.start(1024);
    expect(stub.counts.forecast).toBe(1);
    expect(stub.counts.evidence).toBe(1);
    expect(stub.counts.markets).toBe(1);
    expect(stub.counts.produce).toBe(1);
  });

  it("renders four horizon rows from the stub payload", async () => {
    const app = makeApp();
    await app.start(1024);
    const rows = root.querySelectorAll("#forecast-pane tbody tr");
    expect(rows).toHaveLength(4);
    expect(root.querySelectorAll("#evidence-pane .legend-row")).toHaveLength(5);
  });

  it("a horizon change issues one more evidence request and no forecast request", async () => {
    const app = makeApp();
    await app.start(1024);
    const before = { ...stub.counts };
    await app.changeHorizon(14);
    expect(stub.counts.evidence).toBe(before.evidence + 1);
    expect(stub.counts.forecast).toBe(before.forecast);
  });

  it("a new selection issues exactly one more forecast and one more evidence request", async () => {
    const app = makeApp();
    await app.start(1024);
    const before = { ...stub.counts };
    await app.select("CUTTACK", "tomato");
    expect(stub.counts.forecast).toBe(before.forecast + 1);
    expect(stub.counts.evidence).toBe(before.evidence + 1);
  });

  it("history fetches stay bounded by distinct neighbor markets", async () => {
    const app = makeApp();
    await app.start(1024);
    // evidence fixture references 3 distinct markets
    expect(stub.counts.history).toBe(3);
  });

  it("rapid reselection aborts the superseded requests", async () => {
    const app = makeApp();
    await app.start(1024);
    const first = app.select("BANKI", "tomato"); // superseded immediately
    const second = app.select("KENDUPATNA", "brinjal");
    await Promise.allSettled([first, second]);
    expect(app.state.marketId).toBe("KENDUPATNA");
    const heading = root.querySelector("#forecast-pane h2");
    expect(heading?.textContent).toContain("KENDUPATNA");
  });

  it("shows an error banner with retry when the market is unknown", async () => {
    const app = makeApp();
    await app.start(1024);
    await app.select("NOWHERE", "tomato");
    const banner = root.querySelector(".error-banner");
    expect(banner).not.toBeNull();
    expect(banner!.querySelector("button.retry")).not.toBeNull();
  });
});
