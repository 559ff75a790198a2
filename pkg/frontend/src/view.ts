/**
 * Canvas drawing: either the vector view built from link positions or the
 * streamed grayscale frame, plus goal/tip markers, readouts, and the force
 * sparkline.  Pure view code: nothing here mutates simulation truth.
 */

import { StateMessage } from "./protocol.js";
import { sparklinePoints } from "./trace.js";

export interface Viewport {
  cx: number;      // world center, m
  cy: number;
  scale: number;   // px per m
  width: number;
  height: number;
}

/** Fit the world bounds into a canvas with padding. */
export function fitViewport(bounds: number[], width: number, height: number,
                            pad = 1.08): Viewport {
  const cx = (bounds[0] + bounds[3]) / 2;
  const cy = (bounds[1] + bounds[4]) / 2;
  const spanX = (bounds[3] - bounds[0]) * pad;
  const spanY = (bounds[4] - bounds[1]) * pad;
  const scale = Math.min(width / spanX, height / spanY);
  return { cx, cy, scale, width, height };
}

/** World x-y (top-down) to canvas pixels; +y points up on screen. */
export function worldToCanvas(vp: Viewport, x: number, y: number):
    [number, number] {
  return [vp.width / 2 + (x - vp.cx) * vp.scale,
          vp.height / 2 - (y - vp.cy) * vp.scale];
}

type Ctx = CanvasRenderingContext2D;

export function drawVectorView(ctx: Ctx, vp: Viewport, st: StateMessage): void {
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, vp.width, vp.height);
  // catheter: connected segments through the link points
  ctx.strokeStyle = "#6cf";
  ctx.lineWidth = 3;
  ctx.lineCap = "round";
  ctx.beginPath();
  st.links.forEach((p, i) => {
    const [x, y] = worldToCanvas(vp, p[0], p[1]);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  drawMarker(ctx, vp, st.goal, "#f55", 6);
  drawMarker(ctx, vp, st.tip, "#ff5", 4);
}

export function drawMarker(ctx: Ctx, vp: Viewport, p: number[],
                           color: string, r: number): void {
  const [x, y] = worldToCanvas(vp, p[0], p[1]);
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
  ctx.stroke();
}

/** Decode and paint the streamed grayscale frame (what the agent sees). */
export function drawFrame(ctx: Ctx, vp: Viewport,
                          frame: { w: number; h: number; b64: string }): void {
  const bytes = atob(frame.b64);
  const img = ctx.createImageData(frame.w, frame.h);
  for (let i = 0; i < bytes.length; i++) {
    const v = bytes.charCodeAt(i);
    img.data[4 * i] = v;
    img.data[4 * i + 1] = v;
    img.data[4 * i + 2] = v;
    img.data[4 * i + 3] = 255;
  }
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, vp.width, vp.height);
  ctx.putImageData(img, Math.floor((vp.width - frame.w) / 2),
                   Math.floor((vp.height - frame.h) / 2));
}

export function drawSparkline(ctx: Ctx, values: number[], x0: number,
                              y0: number, w: number, h: number): void {
  ctx.strokeStyle = "#345";
  ctx.strokeRect(x0, y0, w, h);
  const pts = sparklinePoints(values, w, h);
  if (!pts.length) return;
  ctx.strokeStyle = "#5f5";
  ctx.lineWidth = 1.2;
  ctx.beginPath();
  pts.forEach(([x, y], i) => {
    if (i === 0) ctx.moveTo(x0 + x, y0 + y);
    else ctx.lineTo(x0 + x, y0 + y);
  });
  ctx.stroke();
}

export function drawPausedOverlay(ctx: Ctx, vp: Viewport): void {
  ctx.fillStyle = "rgba(0,0,0,0.55)";
  ctx.fillRect(0, 0, vp.width, vp.height);
  ctx.fillStyle = "#fff";
  ctx.font = "28px sans-serif";
  ctx.textAlign = "center";
  ctx.fillText("paused - disconnected", vp.width / 2, vp.height / 2);
}

export function readoutText(st: StateMessage): string {
  return `step ${st.step}   d = ${(st.d * 1000).toFixed(1)} mm   ` +
    `reward = ${st.reward.toFixed(3)}   f_t = ${st.f_t.toFixed(4)} N` +
    (st.done ? "   [episode done - press R]" : "");
}
