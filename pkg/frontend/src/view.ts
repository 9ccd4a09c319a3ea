import type { ClassEntry, Prediction } from "./api.js";

export interface BarView {
  label: string;
  percent: string;
  widthPct: number;
  incremental: boolean;
}

/** Ranked probability bars, highest first; taught classes are flagged so
 *  the UI can badge them. */
export function predictionBars(preds: Prediction[], top = 8): BarView[] {
  return [...preds]
    .sort((a, b) => b.probability - a.probability)
    .slice(0, top)
    .map((p) => ({
      label: p.display_name,
      percent: (100 * p.probability).toFixed(1) + "%",
      widthPct: Math.max(1, Math.round(100 * p.probability)),
      incremental: p.origin === "incremental",
    }));
}

export function probabilitySum(preds: Prediction[]): number {
  return preds.reduce((s, p) => s + p.probability, 0);
}

export function classListLines(entries: ClassEntry[]): string[] {
  return entries.map((e) =>
    `${e.display_name}${e.origin === "incremental" ? " *" : ""}`);
}
