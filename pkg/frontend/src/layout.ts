// Responsive mode: stacked single column below 480px, two panes otherwise.

export type LayoutMode = "single-column" | "two-pane";

export const BREAKPOINT_PX = 480;

export function layoutMode(viewportWidth: number): LayoutMode {
  return viewportWidth < BREAKPOINT_PX ? "single-column" : "two-pane";
}

export function applyLayout(root: HTMLElement, viewportWidth: number): LayoutMode {
  const mode = layoutMode(viewportWidth);
  root.classList.remove("single-column", "two-pane");
  root.classList.add(mode);
  return mode;
}
