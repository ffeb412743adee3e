import { describe, expect, it } from "vitest";

import { buildView, classifyQuality } from "../src/dashboard.js";
import { Canvas2D, drawScene, laneLength, lanePointAt, modeColor } from "../src/render.js";
import { Hello, Telemetry } from "../src/protocol.js";
import { Session } from "../src/session.js";

const HELLO: Hello = {
  type: "hello",
  version: "1",
  scenario: "construction_zone",
  policy: "odd_t2",
  dt_ms: 10,
  ticks: 4500,
  speedup: 1,
  heartbeat_period_ms: 50,
  disconnect_timeout_ms: 300,
  handover_timeout_ms: 5000,
  quality: {
    degraded_latency_ms: 100,
    unusable_latency_ms: 250,
    degraded_loss: 0.05,
    unusable_loss: 0.2,
  },
};

function telemetry(): Telemetry {
  return {
    type: "telemetry",
    tick: 100,
    pose: { x: 50, y: 0.2, heading: 0.01 },
    speed_mps: 13.9,
    mode: "TeleopInOdd",
    risk_class: "fail_degraded",
    odd: {
      ads: { inside: false, margins: { "env.rain_mm_h": -0.2 } },
      teleop: { inside: true, margins: { "env.rain_mm_h": 0.6, "conn.latency_ms": 0.1 } },
    },
    link: { latency_ms: 120, loss_frac: 0.01, connected: true },
    mrm: { capable: true, margin_m: 31.5 },
    scene: {
      lane: [[0, 0], [300, 0], [300, 80]],
      lane_width: 3.5,
      obstacles: [
        { id: "cone1", cx: 120, cy: 1.5, length: 0.6, width: 0.6, heading: 0 },
        { id: "truck", cx: 200, cy: 0, length: 6, width: 2.4, heading: 0.1 },
      ],
      zone: [100, 220],
      ego: { length: 4.5, width: 2 },
      follower: [30, 13.9],
    },
  };
}

describe("lane geometry", () => {
  it("measures polyline length", () => {
    expect(laneLength([[0, 0], [300, 0], [300, 80]])).toBeCloseTo(380);
  });

  it("walks arclength across segments and clamps at the ends", () => {
    const lane: [number, number][] = [[0, 0], [300, 0], [300, 80]];
    expect(lanePointAt(lane, 150)).toEqual({ x: 150, y: 0, heading: 0 });
    const corner = lanePointAt(lane, 340);
    expect(corner.x).toBeCloseTo(300);
    expect(corner.y).toBeCloseTo(40);
    expect(corner.heading).toBeCloseTo(Math.PI / 2);
    expect(lanePointAt(lane, 9999).y).toBeCloseTo(80);
    expect(lanePointAt(lane, -5)).toEqual({ x: 0, y: 0, heading: 0 });
  });
});

class FakeCanvas implements Canvas2D {
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 0;
  font = "";
  globalAlpha = 1;
  ops: string[] = [];
  rects: { x: number; y: number; w: number; h: number; fill: string }[] = [];
  private depth = 0;

  save() {
    this.depth++;
    this.ops.push("save");
  }
  restore() {
    this.depth--;
    this.ops.push("restore");
  }
  get balance() {
    return this.depth;
  }
  translate() {}
  rotate() {}
  beginPath() {
    this.ops.push("beginPath");
  }
  moveTo() {
    this.ops.push("moveTo");
  }
  lineTo() {
    this.ops.push("lineTo");
  }
  closePath() {}
  stroke() {
    this.ops.push("stroke");
  }
  fill() {}
  fillRect(x: number, y: number, w: number, h: number) {
    this.rects.push({ x, y, w, h, fill: String(this.fillStyle) });
  }
  strokeRect() {}
  arc() {}
  fillText() {}
}

describe("drawScene", () => {
  it("paints background, lane, zone, obstacles, follower and ego", () => {
    const ctx = new FakeCanvas();
    const t = telemetry();
    drawScene(ctx, 900, 600, t);
    expect(ctx.balance).toBe(0);
    // background + 12 zone slabs + 2 obstacles + follower + ego
    expect(ctx.rects.length).toBe(1 + 12 + 2 + 1 + 1);
    expect(ctx.rects[0]).toMatchObject({ x: 0, y: 0, w: 900, h: 600 });
    expect(ctx.rects[ctx.rects.length - 1]?.fill).toBe(modeColor("TeleopInOdd"));
    // the two lane passes: band then centerline
    expect(ctx.ops.filter((op) => op === "stroke").length).toBe(2);
    expect(ctx.ops.filter((op) => op === "lineTo").length).toBe(4);
  });

  it("skips zone and follower when absent", () => {
    const ctx = new FakeCanvas();
    const t = telemetry();
    t.scene.zone = null;
    t.scene.follower = null;
    t.scene.obstacles = [];
    drawScene(ctx, 900, 600, t);
    expect(ctx.rects.length).toBe(2); // background + ego
  });
});

describe("dashboard view", () => {
  it("classifies link quality against the hello thresholds", () => {
    expect(classifyQuality(40, 0.0, HELLO.quality)).toBe("operational");
    expect(classifyQuality(120, 0.0, HELLO.quality)).toBe("degraded");
    expect(classifyQuality(40, 0.06, HELLO.quality)).toBe("degraded");
    expect(classifyQuality(260, 0.0, HELLO.quality)).toBe("unusable");
    expect(classifyQuality(40, 0.25, HELLO.quality)).toBe("unusable");
  });

  it("renders the whole panel from one telemetry frame", () => {
    const session = new Session(HELLO);
    session.onFrame(telemetry(), 1000);
    session.onFrame({ type: "event", kind: "mrm_started", at_tick: 90 }, 1001);
    session.onFrame({ type: "handover_offer", target: "ads" }, 1002);
    const view = buildView(session, 1010);
    expect(view.feed).toBe("live");
    expect(view.mode).toBe("TeleopInOdd");
    expect(view.speedText).toBe("50.0 km/h");
    expect(view.linkQuality).toBe("degraded");
    expect(view.linkText).toContain("120 ms");
    expect(view.mrmText).toBe("capable, margin 31.5 m");
    expect(view.oddRows).toContainEqual({
      side: "ads",
      key: "env.rain_mm_h",
      margin: -0.2,
      violated: true,
    });
    expect(view.offerText).toContain("take over as ads");
    expect(view.offerText).toContain("5.0s");
    expect(view.noticeLines).toEqual(["t+0.9s mrm_started"]);
  });

  it("reports a severed link once the feed drops", () => {
    const session = new Session(HELLO);
    session.onFrame(telemetry(), 1000);
    const view = buildView(session, 1000 + session.dropAfterMs + 1);
    expect(view.feed).toBe("dropped");
    expect(view.linkText).toBe("SEVERED");
    expect(view.linkQuality).toBe("unusable");
  });

  it("shows placeholders before the first frame", () => {
    const view = buildView(new Session(HELLO), 0);
    expect(view.feed).toBe("connecting");
    expect(view.mode).toBe("-");
    expect(view.oddRows).toEqual([]);
  });
});
