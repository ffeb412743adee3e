/**
 * Top-down 2D scene rendering, ego-centered.
 *
 * The drawing code talks to a structural subset of the canvas 2D context
 * so it can be exercised against a recording fake; the browser passes the
 * real CanvasRenderingContext2D. World coordinates are meters with y to
 * the left of travel; the screen flips y and keeps the ego at a fixed
 * anchor with the lane scrolling past.
 */

import { Telemetry } from "./protocol.js";

export interface Canvas2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  rotate(rad: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fillText(text: string, x: number, y: number): void;
}

export const PX_PER_M = 6;
const EGO_ANCHOR_X = 0.35; // fraction of canvas width

const MODE_COLORS: Record<string, string> = {
  AdsInOdd: "#3fb95f",
  AdsOutOfOdd: "#d9a036",
  TeleopInOdd: "#3f8fd9",
  TeleopOutOfOdd: "#d9a036",
  MrmActive: "#d96e36",
  MinimalRiskCondition: "#8a8f98",
  Undefined: "#d93636",
};

export function modeColor(mode: string): string {
  return MODE_COLORS[mode] ?? "#d93636";
}

export function laneLength(points: [number, number][]): number {
  let total = 0;
  for (let i = 1; i < points.length; i++) {
    const [x1, y1] = points[i - 1]!;
    const [x2, y2] = points[i]!;
    total += Math.hypot(x2 - x1, y2 - y1);
  }
  return total;
}

/** Point and heading on the polyline at arclength s, clamped to the ends. */
export function lanePointAt(
  points: [number, number][],
  s: number,
): { x: number; y: number; heading: number } {
  let remaining = Math.max(0, s);
  for (let i = 1; i < points.length; i++) {
    const [x1, y1] = points[i - 1]!;
    const [x2, y2] = points[i]!;
    const len = Math.hypot(x2 - x1, y2 - y1);
    const heading = Math.atan2(y2 - y1, x2 - x1);
    if (remaining <= len || i === points.length - 1) {
      const t = len > 0 ? Math.min(remaining, len) / len : 0;
      return { x: x1 + t * (x2 - x1), y: y1 + t * (y2 - y1), heading };
    }
    remaining -= len;
  }
  const [x, y] = points[0]!;
  return { x, y, heading: 0 };
}

function rect(ctx: Canvas2D, cx: number, cy: number, length: number, width: number, heading: number): void {
  ctx.save();
  ctx.translate(cx, cy);
  ctx.rotate(heading);
  ctx.fillRect(-length / 2, -width / 2, length, width);
  ctx.restore();
}

export function drawScene(
  ctx: Canvas2D,
  width: number,
  height: number,
  t: Telemetry,
): void {
  const scene = t.scene;
  ctx.globalAlpha = 1;
  ctx.fillStyle = "#14171c";
  ctx.fillRect(0, 0, width, height);

  ctx.save();
  // Screen frame: ego pinned at the anchor, world y up -> screen y down.
  ctx.translate(width * EGO_ANCHOR_X, height / 2);
  ctx.translate(-t.pose.x * PX_PER_M, 0);

  const toX = (x: number) => x * PX_PER_M;
  const toY = (y: number) => -y * PX_PER_M;

  // Lane band.
  ctx.strokeStyle = "#2c3440";
  ctx.lineWidth = scene.lane_width * PX_PER_M;
  ctx.beginPath();
  scene.lane.forEach(([x, y], i) => {
    if (i === 0) {
      ctx.moveTo(toX(x), toY(y));
    } else {
      ctx.lineTo(toX(x), toY(y));
    }
  });
  ctx.stroke();

  // Centerline.
  ctx.strokeStyle = "#4a5568";
  ctx.lineWidth = 1;
  ctx.beginPath();
  scene.lane.forEach(([x, y], i) => {
    if (i === 0) {
      ctx.moveTo(toX(x), toY(y));
    } else {
      ctx.lineTo(toX(x), toY(y));
    }
  });
  ctx.stroke();

  // Work-zone interval along the lane.
  if (scene.zone) {
    const [s0, s1] = scene.zone;
    const steps = Math.max(2, Math.ceil((s1 - s0) / 10));
    ctx.globalAlpha = 0.25;
    ctx.fillStyle = "#d9a036";
    for (let i = 0; i < steps; i++) {
      const s = s0 + ((s1 - s0) * i) / steps;
      const p = lanePointAt(scene.lane, s);
      rect(
        ctx,
        toX(p.x),
        toY(p.y),
        ((s1 - s0) / steps) * PX_PER_M,
        scene.lane_width * PX_PER_M,
        -p.heading,
      );
    }
    ctx.globalAlpha = 1;
  }

  // Obstacles.
  ctx.fillStyle = "#b8552f";
  for (const o of scene.obstacles) {
    rect(ctx, toX(o.cx), toY(o.cy), o.length * PX_PER_M, o.width * PX_PER_M, -o.heading);
  }

  // Follower, riding the centerline.
  if (scene.follower) {
    const [s] = scene.follower;
    const p = lanePointAt(scene.lane, s);
    ctx.fillStyle = "#7a5fd9";
    rect(ctx, toX(p.x), toY(p.y), scene.ego.length * PX_PER_M, scene.ego.width * PX_PER_M, -p.heading);
  }

  // Ego.
  ctx.fillStyle = modeColor(t.mode);
  rect(
    ctx,
    toX(t.pose.x),
    toY(t.pose.y),
    scene.ego.length * PX_PER_M,
    scene.ego.width * PX_PER_M,
    -t.pose.heading,
  );

  ctx.restore();
}
