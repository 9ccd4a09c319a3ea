import { describe, expect, it } from "vitest";
import type { Prediction } from "../src/api.js";
import { classListLines, predictionBars, probabilitySum } from "../src/view.js";

const preds: Prediction[] = [
  { class_id: 0, display_name: "ant", origin: "base", probability: 0.15 },
  { class_id: 7, display_name: "star", origin: "incremental", probability: 0.6 },
  { class_id: 1, display_name: "bee", origin: "base", probability: 0.25 },
];

describe("predictionBars", () => {
  it("sorts descending and flags taught classes", () => {
    const bars = predictionBars(preds);
    expect(bars.map((b) => b.label)).toEqual(["star", "bee", "ant"]);
    expect(bars[0].incremental).toBe(true);
    expect(bars[1].incremental).toBe(false);
    expect(bars[0].percent).toBe("60.0%");
    const widths = bars.map((b) => b.widthPct);
    expect([...widths].sort((a, b) => b - a)).toEqual(widths);
  });

  it("limits to the requested number of rows", () => {
    expect(predictionBars(preds, 2)).toHaveLength(2);
  });
});

describe("probabilitySum", () => {
  it("adds displayed probabilities", () => {
    expect(probabilitySum(preds)).toBeCloseTo(1.0, 9);
  });
});

describe("classListLines", () => {
  it("marks taught entries", () => {
    const lines = classListLines([
      { class_id: 0, display_name: "ant", origin: "base", exemplar_count: 40 },
      { class_id: 9, display_name: "star", origin: "incremental", exemplar_count: 5 },
    ]);
    expect(lines).toEqual(["ant", "star *"]);
  });
});
