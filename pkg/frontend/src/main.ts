import { ApiClient } from "./api.js";
import { App } from "./app.js";
import { applyLayout } from "./layout.js";

const root = document.getElementById("app");
if (root) {
  const api = new ApiClient("/api/v1");
  const app = new App(root, api, navigator.language);
  window.addEventListener("resize", () => applyLayout(root, window.innerWidth));
  void app.start(window.innerWidth);
}
