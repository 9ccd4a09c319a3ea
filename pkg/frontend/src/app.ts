import { ApiClient, type ClassEntry, type Prediction } from "./api.js";
import { exportCanvas } from "./raster.js";
import { CanvasSession, type Point } from "./strokes.js";
import { predictionBars } from "./view.js";

const CANVAS_SIZE = 256;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class App {
  private readonly api = new ApiClient("");
  private readonly session = new CanvasSession(CANVAS_SIZE);
  private exportSize = 32;
  private pending: Uint8Array[] = [];
  private drawing = false;
  private busy = false;

  private canvas = el<HTMLCanvasElement>("pad");
  private ctx = this.canvas.getContext("2d")!;
  private status = el<HTMLElement>("status");

  async start(): Promise<void> {
    this.canvas.width = CANVAS_SIZE;
    this.canvas.height = CANVAS_SIZE;
    this.redraw();
    this.canvas.addEventListener("pointerdown", (e) => this.pointerDown(e));
    this.canvas.addEventListener("pointermove", (e) => this.pointerMove(e));
    window.addEventListener("pointerup", () => this.pointerUp());
    el<HTMLButtonElement>("clear").addEventListener("click", () => {
      this.session.clear();
      this.redraw();
    });
    el<HTMLButtonElement>("add-sketch").addEventListener("click", () => this.addSketch());
    el<HTMLButtonElement>("register").addEventListener("click", () => this.register());
    el<HTMLInputElement>("photo").addEventListener("change", (e) => this.classify(e));
    try {
      const health = await this.api.health();
      this.exportSize = health.image_size;
      this.say(`connected: ${health.num_classes} classes, model ${health.checkpoint}`);
      this.renderClasses(await this.api.listClasses());
    } catch (err) {
      this.say(`service unreachable: ${err}`);
    }
  }

  private point(e: PointerEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((e.clientX - rect.left) * CANVAS_SIZE) / rect.width,
      y: ((e.clientY - rect.top) * CANVAS_SIZE) / rect.height,
    };
  }

  private pointerDown(e: PointerEvent): void {
    this.drawing = true;
    this.session.beginStroke(this.point(e));
    this.redraw();
  }

  private pointerMove(e: PointerEvent): void {
    if (!this.drawing) return;
    this.session.extendStroke(this.point(e));
    this.redraw();
  }

  private pointerUp(): void {
    this.drawing = false;
    this.session.endStroke();
  }

  private redraw(): void {
    this.ctx.fillStyle = "#fff";
    this.ctx.fillRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
    this.ctx.strokeStyle = "#1a1a28";
    this.ctx.lineCap = "round";
    this.ctx.lineJoin = "round";
    for (const stroke of this.session.strokes) {
      this.ctx.lineWidth = stroke.width;
      this.ctx.beginPath();
      stroke.points.forEach((p, i) =>
        i === 0 ? this.ctx.moveTo(p.x, p.y) : this.ctx.lineTo(p.x, p.y));
      this.ctx.stroke();
    }
    el<HTMLButtonElement>("add-sketch").disabled = !this.session.hasContent();
  }

  private addSketch(): void {
    if (!this.session.hasContent()) return;
    // export through the pure rasterizer so bytes are deterministic
    this.pending.push(exportCanvas(this.session.strokes, CANVAS_SIZE, this.exportSize));
    this.session.clear();
    this.redraw();
    el<HTMLElement>("queue").textContent = `${this.pending.length} sketch(es) queued`;
    el<HTMLButtonElement>("register").disabled = this.pending.length === 0;
  }

  private async register(): Promise<void> {
    const name = el<HTMLInputElement>("class-name").value.trim();
    if (!name || this.pending.length === 0 || this.busy) return;
    this.busy = true;
    el<HTMLButtonElement>("register").disabled = true;
    try {
      const resp = await this.api.registerClass(name, this.pending);
      this.pending = [];
      el<HTMLElement>("queue").textContent = "";
      this.say(`registered '${resp.registered.display_name}'`);
      this.renderClasses(resp.classes);
    } catch (err) {
      this.say(`${err}`); // surfaced verbatim, incl. duplicate-name rejections
      el<HTMLButtonElement>("register").disabled = false;
    } finally {
      this.busy = false;
    }
  }

  private async classify(e: Event): Promise<void> {
    const input = e.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    try {
      this.renderBars(await this.api.classifyPhoto(bytes));
    } catch (err) {
      this.say(`${err}`);
    }
    input.value = "";
  }

  private renderClasses(entries: ClassEntry[]): void {
    const list = el<HTMLUListElement>("classes");
    list.innerHTML = "";
    for (const entry of entries) {
      const li = document.createElement("li");
      li.textContent = entry.display_name;
      if (entry.origin === "incremental") {
        const badge = document.createElement("span");
        badge.className = "badge";
        badge.textContent = "taught";
        li.appendChild(badge);
      }
      list.appendChild(li);
    }
  }

  private renderBars(preds: Prediction[]): void {
    const host = el<HTMLElement>("bars");
    host.innerHTML = "";
    for (const bar of predictionBars(preds)) {
      const row = document.createElement("div");
      row.className = "bar-row" + (bar.incremental ? " taught" : "");
      const fill = document.createElement("div");
      fill.className = "bar-fill";
      fill.style.width = `${bar.widthPct}%`;
      const label = document.createElement("span");
      label.textContent = `${bar.label} ${bar.percent}`;
      row.appendChild(fill);
      row.appendChild(label);
      host.appendChild(row);
    }
  }

  private say(msg: string): void {
    this.status.textContent = msg;
  }
}

window.addEventListener("DOMContentLoaded", () => {
  new App().start();
});
