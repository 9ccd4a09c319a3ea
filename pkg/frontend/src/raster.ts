import type { Stroke } from "./strokes.js";

/** Pure, environment-free rasteriser and PNG encoder.
 *
 *  The export path must be deterministic (identical strokes -> identical
 *  bytes), so we avoid canvas.toDataURL and rasterise ourselves: distance
 *  to each stroke segment gives anti-aliased coverage, dark ink on white.
 *  The PNG uses stored (uncompressed) deflate blocks, which every decoder
 *  accepts and which keeps the encoder free of zlib dependencies.
 */

function segmentDistance(px: number, py: number, ax: number, ay: number,
                         bx: number, by: number): number {
  const dx = bx - ax;
  const dy = by - ay;
  const lenSq = dx * dx + dy * dy;
  let t = lenSq > 0 ? ((px - ax) * dx + (py - ay) * dy) / lenSq : 0;
  t = Math.max(0, Math.min(1, t));
  return Math.hypot(px - (ax + t * dx), py - (ay + t * dy));
}

/** Render strokes (in canvas coordinates) to a size x size grayscale image.
 *  255 = white background, 0 = full ink. */
export function rasterize(strokes: Stroke[], canvasSize: number,
                          size: number): Uint8Array {
  const ink = new Float64Array(size * size); // coverage in [0, 1]
  const scale = size / canvasSize;
  for (const stroke of strokes) {
    const pts = stroke.points;
    if (pts.length === 0) continue;
    const radius = Math.max(0.5, (stroke.width * scale) / 2);
    const segs = pts.length === 1 ? [[pts[0], pts[0]]] :
      pts.slice(1).map((p, i) => [pts[i], p]);
    for (const [a, b] of segs) {
      const ax = a.x * scale, ay = a.y * scale;
      const bx = b.x * scale, by = b.y * scale;
      const x0 = Math.max(0, Math.floor(Math.min(ax, bx) - radius - 1));
      const x1 = Math.min(size - 1, Math.ceil(Math.max(ax, bx) + radius + 1));
      const y0 = Math.max(0, Math.floor(Math.min(ay, by) - radius - 1));
      const y1 = Math.min(size - 1, Math.ceil(Math.max(ay, by) + radius + 1));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          const d = segmentDistance(x + 0.5, y + 0.5, ax, ay, bx, by);
          const cover = Math.max(0, Math.min(1, radius + 0.5 - d));
          const idx = y * size + x;
          if (cover > ink[idx]) ink[idx] = cover;
        }
      }
    }
  }
  const gray = new Uint8Array(size * size);
  for (let i = 0; i < ink.length; i++) {
    gray[i] = Math.round(255 * (1 - 0.9 * ink[i]));
  }
  return gray;
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1, b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(n: number): Uint8Array {
  return new Uint8Array([(n >>> 24) & 0xff, (n >>> 16) & 0xff, (n >>> 8) & 0xff, n & 0xff]);
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typed = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) typed[i] = type.charCodeAt(i);
  typed.set(data, 4);
  const out = new Uint8Array(8 + data.length + 4);
  out.set(u32(data.length), 0);
  out.set(typed, 4);
  out.set(u32(crc32(typed)), 8 + data.length);
  return out;
}

function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const max = 65535;
  for (let off = 0; off < raw.length; off += max) {
    const part = raw.subarray(off, Math.min(off + max, raw.length));
    const final = off + max >= raw.length ? 1 : 0;
    const header = new Uint8Array([
      final, part.length & 0xff, (part.length >>> 8) & 0xff,
      ~part.length & 0xff, (~part.length >>> 8) & 0xff,
    ]);
    blocks.push(header, part);
  }
  blocks.push(u32(adler32(raw)));
  const total = blocks.reduce((n, b) => n + b.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const b of blocks) {
    out.set(b, pos);
    pos += b.length;
  }
  return out;
}

/** Encode an 8-bit grayscale image as a PNG. */
export function encodePng(gray: Uint8Array, width: number, height: number): Uint8Array {
  if (gray.length !== width * height) {
    throw new Error(`gray buffer is ${gray.length}, expected ${width * height}`);
  }
  const raw = new Uint8Array(height * (width + 1)); // filter byte 0 per row
  for (let y = 0; y < height; y++) {
    raw.set(gray.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  const ihdr = new Uint8Array(13);
  ihdr.set(u32(width), 0);
  ihdr.set(u32(height), 4);
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 0;  // grayscale
  const signature = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);
  const parts = [signature, chunk("IHDR", ihdr), chunk("IDAT", zlibStored(raw)),
                 chunk("IEND", new Uint8Array(0))];
  const total = parts.reduce((n, b) => n + b.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const p of parts) {
    out.set(p, pos);
    pos += p.length;
  }
  return out;
}

/** Export a drawing session to PNG bytes at the model's input resolution. */
export function exportCanvas(strokes: Stroke[], canvasSize: number,
                             exportSize: number): Uint8Array {
  if (!strokes.some((s) => s.points.length > 0)) {
    throw new Error("cannot export an empty canvas");
  }
  return encodePng(rasterize(strokes, canvasSize, exportSize), exportSize, exportSize);
}
