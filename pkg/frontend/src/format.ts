import type { KappaJson } from "./api.js";

export function formatPercent(fraction: number, decimals = 1): string {
  return `${(100 * fraction).toFixed(decimals)}%`;
}

// Kappa arrives with an explicit undefined flag; never coerce that to 0.
export function formatKappa(k: KappaJson | null | undefined): string {
  if (!k || k.undefined || k.value === null) return "not computable";
  return formatPercent(k.value);
}

export function formatClock(ms: number): string {
  const d = new Date(ms);
  const pad = (x: number) => String(x).padStart(2, "0");
  return `${pad(d.getHours())}:${pad(d.getMinutes())}:${pad(d.getSeconds())}`;
}
