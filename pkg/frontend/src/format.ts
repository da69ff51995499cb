// Display formatting only: the UI never recomputes forecast numbers.

export function money2(value: number): string {
  return value.toFixed(2);
}

export function percent(share: number): string {
  return `${Math.round(share * 100)}%`;
}

export function dateRange(start: string | null, end: string | null): string {
  if (!start || !end) return "";
  return start === end ? start : `${start} – ${end}`;
}
