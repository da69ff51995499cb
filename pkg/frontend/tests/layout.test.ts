import { describe, expect, it } from "vitest";

import { applyLayout, layoutMode } from "../src/layout.js";

describe("layoutMode", () => {
  it("stacks a 375px phone viewport into a single column", () => {
    expect(layoutMode(375)).toBe("single-column");
  });

  it("uses two panes at 1280px", () => {
    expect(layoutMode(1280)).toBe("two-pane");
  });

  it("switches exactly at the 480px breakpoint", () => {
    expect(layoutMode(479)).toBe("single-column");
    expect(layoutMode(480)).toBe("two-pane");
  });
});

describe("applyLayout", () => {
  it("applies the mode class and removes the other", () => {
    const root = document.createElement("div");
    applyLayout(root, 320);
    expect(root.classList.contains("single-column")).toBe(true);
    applyLayout(root, 1024);
    expect(root.classList.contains("two-pane")).toBe(true);
    expect(root.classList.contains("single-column")).toBe(false);
  });
});
