export interface ClassEntry {
  class_id: number;
  display_name: string;
  origin: "base" | "incremental";
  exemplar_count: number;
}

export interface Prediction {
  class_id: number;
  display_name: string;
  origin: "base" | "incremental";
  probability: number;
}

export interface Health {
  status: string;
  checkpoint: string;
  num_classes: number;
  image_size: number;
}

export interface RegisterResponse {
  registered: ClassEntry;
  classes: ClassEntry[];
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

/** Environment-free base64 (btoa chokes on large binary strings). */
export function toBase64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const a = bytes[i];
    const b = i + 1 < bytes.length ? bytes[i + 1] : 0;
    const c = i + 2 < bytes.length ? bytes[i + 2] : 0;
    out += B64[a >> 2] + B64[((a & 3) << 4) | (b >> 4)];
    out += i + 1 < bytes.length ? B64[((b & 15) << 2) | (c >> 6)] : "=";
    out += i + 2 < bytes.length ? B64[c & 63] : "=";
  }
  return out;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the teaching service. The model is never
 *  mutated except through registerClass. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const text = await resp.text();
    if (!resp.ok) {
      throw new Error(`${path} failed (${resp.status}): ${text}`);
    }
    return JSON.parse(text) as T;
  }

  health(): Promise<Health> {
    return this.request<Health>("/health");
  }

  listClasses(): Promise<ClassEntry[]> {
    return this.request<ClassEntry[]>("/classes");
  }

  registerClass(name: string, pngImages: Uint8Array[]): Promise<RegisterResponse> {
    return this.request<RegisterResponse>("/classes", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ name, images: pngImages.map(toBase64) }),
    });
  }

  async classifyPhoto(png: Uint8Array): Promise<Prediction[]> {
    const body = await this.request<{ predictions: Prediction[] }>("/classify", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image: toBase64(png) }),
    });
    return body.predictions;
  }
}
