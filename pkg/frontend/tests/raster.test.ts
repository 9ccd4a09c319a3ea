import { describe, expect, it } from "vitest";
import { encodePng, exportCanvas, rasterize } from "../src/raster.js";
import type { Stroke } from "../src/strokes.js";

// y=124 in canvas space lands on the centre of pixel row 15 after the 8x
// downscale, so the full ink coverage falls on one row
const line: Stroke = { points: [{ x: 20, y: 124 }, { x: 236, y: 124 }], width: 16 };

describe("rasterize", () => {
  it("marks dark pixels along a straight stroke", () => {
    const gray = rasterize([line], 256, 32);
    const rowIdx = 15 * 32;
    const row = Array.from(gray.slice(rowIdx, rowIdx + 32));
    const darkInRow = row.filter((v) => v < 128).length;
    expect(darkInRow).toBeGreaterThan(20);
    const topRow = Array.from(gray.slice(0, 32));
    expect(Math.min(...topRow)).toBe(255);
  });

  it("leaves an empty canvas white", () => {
    const gray = rasterize([], 256, 32);
    expect(Math.min(...Array.from(gray))).toBe(255);
  });

  it("is anti-aliased at stroke borders", () => {
    const gray = rasterize([line], 256, 32);
    const values = new Set(Array.from(gray));
    const partial = Array.from(values).filter((v) => v > 40 && v < 240);
    expect(partial.length).toBeGreaterThan(0);
  });
});

describe("exportCanvas", () => {
  it("produces identical bytes for identical stroke lists", () => {
    const strokes = [line, { points: [{ x: 50, y: 30 }, { x: 90, y: 200 }], width: 5 }];
    const a = exportCanvas(strokes, 256, 32);
    const b = exportCanvas(strokes.map((s) => ({ ...s, points: [...s.points] })), 256, 32);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  it("refuses an empty canvas", () => {
    expect(() => exportCanvas([], 256, 32)).toThrow(/empty canvas/);
  });
});

describe("encodePng", () => {
  it("emits a decodable grayscale png", async () => {
    const gray = rasterize([line], 256, 32);
    const png = encodePng(gray, 32, 32);
    expect(Array.from(png.slice(0, 8))).toEqual([137, 80, 78, 71, 13, 10, 26, 10]);
    // IHDR width/height big-endian at offsets 16 and 20
    const view = new DataView(png.buffer, png.byteOffset);
    expect(view.getUint32(16)).toBe(32);
    expect(view.getUint32(20)).toBe(32);
    // node zlib must inflate the IDAT payload back to the raw scanlines
    const { inflateSync } = await import("node:zlib");
    const idatLen = view.getUint32(33);
    const idat = png.slice(41, 41 + idatLen);
    const raw = inflateSync(Buffer.from(idat));
    expect(raw.length).toBe(32 * 33); // rows + filter bytes
  });

  it("rejects a mis-sized buffer", () => {
    expect(() => encodePng(new Uint8Array(10), 32, 32)).toThrow(/expected/);
  });
});
