/** Rectangle drawing geometry: display coordinates -> native image pixels.
 * The canvas may be scaled by CSS, so every pointer position is mapped
 * through the display-to-native scale before it becomes a Box. */

import type { RoiRect } from "./api.js";

export type Point = { x: number; y: number };

/** Map a pointer position on the scaled display to native image pixels. */
export function displayToImage(
  point: Point,
  scaleX: number,
  scaleY: number,
): Point {
  return { x: point.x * scaleX, y: point.y * scaleY };
}

/** Normalize a drag (any corner order) into a rectangle in native pixels.
 * Returns null for degenerate (zero-area) drags such as plain clicks. */
export function dragToBox(
  start: Point,
  end: Point,
  scaleX: number,
  scaleY: number,
): RoiRect | null {
  const a = displayToImage(start, scaleX, scaleY);
  const b = displayToImage(end, scaleX, scaleY);
  const x = Math.round(Math.min(a.x, b.x));
  const y = Math.round(Math.min(a.y, b.y));
  const w = Math.round(Math.abs(a.x - b.x));
  const h = Math.round(Math.abs(a.y - b.y));
  if (w <= 0 || h <= 0) return null;
  return { x, y, w, h };
}

/** Clamp a rectangle to image bounds; null when nothing remains. */
export function clampBox(
  box: RoiRect,
  imageWidth: number,
  imageHeight: number,
): RoiRect | null {
  const x0 = Math.max(0, Math.min(box.x, imageWidth));
  const y0 = Math.max(0, Math.min(box.y, imageHeight));
  const x1 = Math.max(0, Math.min(box.x + box.w, imageWidth));
  const y1 = Math.max(0, Math.min(box.y + box.h, imageHeight));
  const w = x1 - x0;
  const h = y1 - y0;
  if (w <= 0 || h <= 0) return null;
  return { x: x0, y: y0, w, h };
}

/** Pointer-drag state machine, kept free of DOM types for testability. */
export class RoiDrag {
  private start: Point | null = null;

  constructor(
    private imageWidth: number,
    private imageHeight: number,
  ) {}

  begin(point: Point): void {
    this.start = point;
  }

  /** Live preview rectangle (native pixels) during a drag; null before
   * begin() or for degenerate extents. */
  preview(point: Point, scaleX: number, scaleY: number): RoiRect | null {
    if (this.start === null) return null;
    const raw = dragToBox(this.start, point, scaleX, scaleY);
    return raw === null ? null : clampBox(raw, this.imageWidth, this.imageHeight);
  }

  /** Finish the drag; returns the clamped ROI or null for a plain click. */
  finish(point: Point, scaleX: number, scaleY: number): RoiRect | null {
    const box = this.preview(point, scaleX, scaleY);
    this.start = null;
    return box;
  }

  cancel(): void {
    this.start = null;
  }

  get active(): boolean {
    return this.start !== null;
  }
}
