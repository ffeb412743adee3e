import { describe, expect, it } from "vitest";

import {
  ProtocolError,
  controlFrame,
  handoverAckFrame,
  helloFrame,
  parseServerFrame,
} from "../src/protocol.js";

// Captured verbatim from a live session.
const HELLO_FRAME = JSON.stringify({
  type: "hello",
  version: "1",
  scenario: "construction_zone",
  policy: "odd_t2",
  dt_ms: 10,
  ticks: 4500,
  speedup: 1.0,
  heartbeat_period_ms: 50,
  disconnect_timeout_ms: 300,
  handover_timeout_ms: 5000,
  quality: {
    degraded_latency_ms: 100.0,
    unusable_latency_ms: 250.0,
    degraded_loss: 0.05,
    unusable_loss: 0.2,
  },
});

const TELEMETRY_FRAME =
  '{"type": "telemetry", "tick": 59, "pose": {"x": 8.34, "y": 0.0, "heading": 0.0}, ' +
  '"speed_mps": 13.9, "mode": "AdsInOdd", "risk_class": "operational", ' +
  '"odd": {"ads": {"inside": true, "margins": {"dyn.speed_limit_kmh": 0.0, "env.rain_mm_h": 0.0, ' +
  '"env.snow_mm_h": 0.0, "scenery.construction": 1.0}}, "teleop": {"inside": true, ' +
  '"margins": {"conn.heartbeat_age_ms": 0.166667, "conn.latency_ms": 0.167273, "conn.loss_frac": 0.0, ' +
  '"dyn.speed_limit_kmh": 0.0, "env.rain_mm_h": 0.0, "env.snow_mm_h": 0.0}}}, ' +
  '"link": {"latency_ms": 41.818, "loss_frac": 0.0, "connected": true}, ' +
  '"mrm": {"capable": true, "margin_m": 30.84875}, ' +
  '"scene": {"lane": [[0.0, 0.0], [600.0, 0.0]], "lane_width": 3.5, ' +
  '"obstacles": [{"id": "cone1", "cx": 280.0, "cy": 2.0, "length": 0.6, "width": 0.6, "heading": 0.0}], ' +
  '"zone": [250.0, 400.0], "ego": {"length": 4.5, "width": 2.0}, "follower": [-8.91, 13.9]}}';

describe("parseServerFrame", () => {
  it("decodes the server hello", () => {
    const frame = parseServerFrame(HELLO_FRAME);
    expect(frame.type).toBe("hello");
    if (frame.type !== "hello") return;
    expect(frame.version).toBe("1");
    expect(frame.scenario).toBe("construction_zone");
    expect(frame.dt_ms).toBe(10);
    expect(frame.heartbeat_period_ms).toBe(50);
    expect(frame.disconnect_timeout_ms).toBe(300);
    expect(frame.quality.unusable_latency_ms).toBe(250);
  });

  it("decodes a captured telemetry frame", () => {
    const frame = parseServerFrame(TELEMETRY_FRAME);
    expect(frame.type).toBe("telemetry");
    if (frame.type !== "telemetry") return;
    expect(frame.tick).toBe(59);
    expect(frame.pose.x).toBeCloseTo(8.34);
    expect(frame.mode).toBe("AdsInOdd");
    expect(frame.risk_class).toBe("operational");
    expect(frame.odd.teleop.margins["conn.latency_ms"]).toBeCloseTo(0.167273);
    expect(frame.link.connected).toBe(true);
    expect(frame.mrm.margin_m).toBeCloseTo(30.84875);
    expect(frame.scene.lane).toEqual([[0, 0], [600, 0]]);
    expect(frame.scene.obstacles[0]?.id).toBe("cone1");
    expect(frame.scene.zone).toEqual([250, 400]);
    expect(frame.scene.follower).toEqual([-8.91, 13.9]);
  });

  it("decodes offers and events", () => {
    expect(parseServerFrame('{"type": "handover_offer", "target": "teleop"}')).toEqual({
      type: "handover_offer",
      target: "teleop",
    });
    expect(parseServerFrame('{"type": "event", "kind": "mrm_started", "at_tick": 120}')).toEqual({
      type: "event",
      kind: "mrm_started",
      at_tick: 120,
    });
  });

  it("rejects garbage, unknown types, and malformed frames", () => {
    expect(() => parseServerFrame("not json")).toThrow(ProtocolError);
    expect(() => parseServerFrame("[1,2]")).toThrow(ProtocolError);
    expect(() => parseServerFrame('{"type": "mystery"}')).toThrow(ProtocolError);
    expect(() => parseServerFrame('{"type": "handover_offer", "target": "pilot"}')).toThrow(
      ProtocolError,
    );
    expect(() => parseServerFrame('{"type": "event", "kind": "x"}')).toThrow(ProtocolError);
    expect(() => parseServerFrame('{"type": "telemetry", "tick": "soon"}')).toThrow(ProtocolError);
  });
});

describe("client frames", () => {
  it("encodes exactly the fields the server accepts", () => {
    expect(JSON.parse(helloFrame())).toEqual({ type: "hello", version: "1" });
    expect(JSON.parse(controlFrame(42, -0.1, 1.5))).toEqual({
      type: "control",
      client_tick: 42,
      steering_rad: -0.1,
      accel_mps2: 1.5,
    });
    expect(JSON.parse(handoverAckFrame(true))).toEqual({ type: "handover_ack", accept: true });
    expect(JSON.parse(handoverAckFrame(false))).toEqual({ type: "handover_ack", accept: false });
  });
});
