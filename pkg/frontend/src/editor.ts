/** Canvas rendering and pointer gestures.
 *
 * The canvas is a pure projection of normalized state: geometry is stored
 * in [0, 1] and converted per frame, so resizing the window or canvas never
 * changes what gets saved. A drag becomes a single undoable action at
 * mouse-up; degenerate drags are discarded with a hint.
 */

import { hitHandle, hitTest, moveBox, rectFromDrag, resizeBox, type HandleName } from "./geometry.js";
import type { EditorStore } from "./state.js";
import type { NormalizedBox } from "./types.js";

const HANDLE_PX = 7;

type Gesture =
  | { kind: "draw"; startX: number; startY: number; box: NormalizedBox | null }
  | { kind: "move"; startX: number; startY: number; original: NormalizedBox; preview: NormalizedBox }
  | { kind: "resize"; handle: HandleName; original: NormalizedBox; preview: NormalizedBox };

export interface EditorEvents {
  onChange(): void;
  onHint(message: string): void;
}

export class CanvasEditor {
  private image: HTMLImageElement | null = null;
  private gesture: Gesture | null = null;

  constructor(
    readonly canvas: HTMLCanvasElement,
    readonly store: EditorStore,
    readonly events: EditorEvents,
  ) {
    canvas.addEventListener("mousedown", (e) => this.onMouseDown(e));
    canvas.addEventListener("mousemove", (e) => this.onMouseMove(e));
    window.addEventListener("mouseup", (e) => this.onMouseUp(e));
  }

  setImage(image: HTMLImageElement | null): void {
    this.image = image;
    this.render();
  }

  /** Rectangle (in canvas pixels) the image occupies, aspect preserved. */
  private imageRect(): { x: number; y: number; w: number; h: number } {
    const cw = this.canvas.width;
    const ch = this.canvas.height;
    if (!this.image || !this.image.naturalWidth) return { x: 0, y: 0, w: cw, h: ch };
    const scale = Math.min(cw / this.image.naturalWidth, ch / this.image.naturalHeight);
    const w = this.image.naturalWidth * scale;
    const h = this.image.naturalHeight * scale;
    return { x: (cw - w) / 2, y: (ch - h) / 2, w, h };
  }

  private toNorm(e: MouseEvent): { x: number; y: number } {
    const bounds = this.canvas.getBoundingClientRect();
    const px = ((e.clientX - bounds.left) / bounds.width) * this.canvas.width;
    const py = ((e.clientY - bounds.top) / bounds.height) * this.canvas.height;
    const rect = this.imageRect();
    return { x: (px - rect.x) / rect.w, y: (py - rect.y) / rect.h };
  }

  private onMouseDown(e: MouseEvent): void {
    if (!this.store.record) return;
    const { x, y } = this.toNorm(e);
    const rect = this.imageRect();
    const tolX = HANDLE_PX / rect.w;
    const tolY = HANDLE_PX / rect.h;

    const selected = this.store.selectedBox();
    if (selected) {
      const handle = hitHandle(selected, x, y, tolX, tolY);
      if (handle) {
        this.gesture = { kind: "resize", handle, original: selected, preview: selected };
        return;
      }
    }
    const hit = hitTest(this.store.record.regions.map((r) => r.box), x, y);
    if (hit !== null) {
      this.store.select(hit);
      const box = this.store.selectedBox()!;
      this.gesture = { kind: "move", startX: x, startY: y, original: box, preview: box };
      this.events.onChange();
      this.render();
      return;
    }
    this.store.select(null);
    this.gesture = { kind: "draw", startX: x, startY: y, box: null };
    this.events.onChange();
    this.render();
  }

  private onMouseMove(e: MouseEvent): void {
    if (!this.gesture) return;
    const { x, y } = this.toNorm(e);
    const g = this.gesture;
    if (g.kind === "draw") {
      g.box = rectFromDrag(g.startX, g.startY, x, y);
    } else if (g.kind === "move") {
      g.preview = moveBox(g.original, x - g.startX, y - g.startY);
    } else {
      g.preview = resizeBox(g.original, g.handle, x, y);
    }
    this.render();
  }

  private onMouseUp(_e: MouseEvent): void {
    const g = this.gesture;
    this.gesture = null;
    if (!g) return;
    if (g.kind === "draw") {
      if (g.box) {
        const result = this.store.createRegion(g.box);
        if (!result.ok) this.events.onHint(result.hint);
      }
    } else if (g.kind === "move" && g.preview !== g.original) {
      this.store.setSelectedBox(g.preview);
    } else if (g.kind === "resize" && g.preview !== g.original) {
      this.store.setSelectedBox(g.preview);
    }
    this.events.onChange();
    this.render();
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const rect = this.imageRect();
    if (this.image) {
      ctx.drawImage(this.image, rect.x, rect.y, rect.w, rect.h);
    } else {
      ctx.fillStyle = "#20242b";
      ctx.fillRect(rect.x, rect.y, rect.w, rect.h);
    }
    if (!this.store.record) return;

    const toPx = (box: NormalizedBox) => ({
      x: rect.x + box.x0 * rect.w,
      y: rect.y + box.y0 * rect.h,
      w: (box.x1 - box.x0) * rect.w,
      h: (box.y1 - box.y0) * rect.h,
    });

    this.store.record.regions.forEach((region, index) => {
      const g = this.gesture;
      let box = region.box;
      if (index === this.store.selection && g && g.kind !== "draw") box = g.preview;
      const p = toPx(box);
      const selected = index === this.store.selection;
      ctx.lineWidth = selected ? 2.5 : 1.5;
      ctx.strokeStyle = selected ? "#ffb347" : "#4ec9b0";
      ctx.strokeRect(p.x, p.y, p.w, p.h);
      ctx.font = "12px sans-serif";
      const label = region.phrase;
      const textWidth = ctx.measureText(label).width + 8;
      ctx.fillStyle = selected ? "rgba(255,179,71,0.9)" : "rgba(78,201,176,0.85)";
      ctx.fillRect(p.x, Math.max(0, p.y - 16), textWidth, 16);
      ctx.fillStyle = "#10131a";
      ctx.fillText(label, p.x + 4, Math.max(12, p.y - 4));
      if (selected) {
        ctx.fillStyle = "#ffb347";
        for (const hx of [p.x, p.x + p.w / 2, p.x + p.w]) {
          for (const hy of [p.y, p.y + p.h / 2, p.y + p.h]) {
            if (hx === p.x + p.w / 2 && hy === p.y + p.h / 2) continue;
            ctx.fillRect(hx - 3, hy - 3, 6, 6);
          }
        }
      }
    });

    const g = this.gesture;
    if (g && g.kind === "draw" && g.box) {
      const p = toPx(g.box);
      ctx.setLineDash([4, 3]);
      ctx.strokeStyle = "#ffb347";
      ctx.strokeRect(p.x, p.y, p.w, p.h);
      ctx.setLineDash([]);
    }
  }
}
