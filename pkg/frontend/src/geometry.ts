/** Box math in normalized [0, 1] coordinates. Stored geometry is always
 * normalized; pixel conversion happens only at the canvas boundary, so
 * window resizes can never mutate annotations. */

import type { NormalizedBox } from "./types.js";

/** Smallest box side we accept; anything below is a degenerate drag. */
export const MIN_BOX_SIZE = 0.004;

export const HANDLE_NAMES = ["nw", "ne", "sw", "se", "n", "s", "w", "e"] as const;
export type HandleName = (typeof HANDLE_NAMES)[number];

export function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v));
}

/** Order drag corners and clamp into the unit square. */
export function rectFromDrag(ax: number, ay: number, bx: number, by: number): NormalizedBox {
  return {
    x0: clamp01(Math.min(ax, bx)),
    y0: clamp01(Math.min(ay, by)),
    x1: clamp01(Math.max(ax, bx)),
    y1: clamp01(Math.max(ay, by)),
  };
}

export function isDegenerate(box: NormalizedBox): boolean {
  return box.x1 - box.x0 < MIN_BOX_SIZE || box.y1 - box.y0 < MIN_BOX_SIZE;
}

/** Translate a box, clamping so it stays inside the unit square unchanged in size. */
export function moveBox(box: NormalizedBox, dx: number, dy: number): NormalizedBox {
  const w = box.x1 - box.x0;
  const h = box.y1 - box.y0;
  const x0 = Math.min(Math.max(box.x0 + dx, 0), 1 - w);
  const y0 = Math.min(Math.max(box.y0 + dy, 0), 1 - h);
  return { x0, y0, x1: x0 + w, y1: y0 + h };
}

/** Drag one handle; opposite edges stay put, and the result stays valid. */
export function resizeBox(box: NormalizedBox, handle: HandleName, x: number, y: number): NormalizedBox {
  let { x0, y0, x1, y1 } = box;
  const cx = clamp01(x);
  const cy = clamp01(y);
  if (handle.includes("w")) x0 = cx;
  if (handle.includes("e")) x1 = cx;
  if (handle.includes("n")) y0 = cy;
  if (handle.includes("s")) y1 = cy;
  if (x1 < x0) [x0, x1] = [x1, x0];
  if (y1 < y0) [y0, y1] = [y1, y0];
  if (x1 - x0 < MIN_BOX_SIZE) x1 = Math.min(1, x0 + MIN_BOX_SIZE);
  if (y1 - y0 < MIN_BOX_SIZE) y1 = Math.min(1, y0 + MIN_BOX_SIZE);
  return { x0, y0, x1, y1 };
}

export function boxContains(box: NormalizedBox, x: number, y: number): boolean {
  return x >= box.x0 && x <= box.x1 && y >= box.y0 && y <= box.y1;
}

export function boxArea(box: NormalizedBox): number {
  return (box.x1 - box.x0) * (box.y1 - box.y0);
}

/** Topmost (smallest) region under the point, or null. */
export function hitTest(boxes: NormalizedBox[], x: number, y: number): number | null {
  let best: number | null = null;
  boxes.forEach((box, index) => {
    if (!boxContains(box, x, y)) return;
    if (best === null || boxArea(box) <= boxArea(boxes[best])) best = index;
  });
  return best;
}

export interface Handle {
  name: HandleName;
  x: number;
  y: number;
}

export function handlePositions(box: NormalizedBox): Handle[] {
  const mx = (box.x0 + box.x1) / 2;
  const my = (box.y0 + box.y1) / 2;
  return [
    { name: "nw", x: box.x0, y: box.y0 },
    { name: "ne", x: box.x1, y: box.y0 },
    { name: "sw", x: box.x0, y: box.y1 },
    { name: "se", x: box.x1, y: box.y1 },
    { name: "n", x: mx, y: box.y0 },
    { name: "s", x: mx, y: box.y1 },
    { name: "w", x: box.x0, y: my },
    { name: "e", x: box.x1, y: my },
  ];
}

/** Handle under a pointer position, given a pixel tolerance in normalized units. */
export function hitHandle(box: NormalizedBox, x: number, y: number, tolX: number, tolY: number): HandleName | null {
  for (const handle of handlePositions(box)) {
    if (Math.abs(handle.x - x) <= tolX && Math.abs(handle.y - y) <= tolY) return handle.name;
  }
  return null;
}
