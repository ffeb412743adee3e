/**
 * Wire protocol types and codecs for one operator session.
 *
 * The server opens with `hello`; the client must answer with a `hello`
 * carrying the same version string before anything else. After that the
 * server streams `telemetry`, `handover_offer` and `event` frames, and the
 * client may send only `control` and `handover_ack`. All frames are JSON
 * text.
 */

export const PROTOCOL_VERSION = "1";

export const CLOSE_RUN_COMPLETE = 1000;
export const CLOSE_VERSION_MISMATCH = 4001;
export const CLOSE_PROTOCOL_VIOLATION = 4002;
export const CLOSE_SESSION_TAKEN = 4003;

export interface QualityThresholds {
  degraded_latency_ms: number;
  unusable_latency_ms: number;
  degraded_loss: number;
  unusable_loss: number;
}

export interface Hello {
  type: "hello";
  version: string;
  scenario: string;
  policy: string;
  dt_ms: number;
  ticks: number;
  speedup: number;
  heartbeat_period_ms: number;
  disconnect_timeout_ms: number;
  handover_timeout_ms: number;
  quality: QualityThresholds;
}

export interface OddSide {
  inside: boolean;
  margins: Record<string, number>;
}

export interface SceneObstacle {
  id: string;
  cx: number;
  cy: number;
  length: number;
  width: number;
  heading: number;
}

export interface Scene {
  lane: [number, number][];
  lane_width: number;
  obstacles: SceneObstacle[];
  zone: [number, number] | null;
  ego: { length: number; width: number };
  follower: [number, number] | null;
}

export interface Telemetry {
  type: "telemetry";
  tick: number;
  pose: { x: number; y: number; heading: number };
  speed_mps: number;
  mode: string;
  risk_class: string;
  odd: { ads: OddSide; teleop: OddSide };
  link: { latency_ms: number; loss_frac: number; connected: boolean };
  mrm: { capable: boolean; margin_m: number };
  scene: Scene;
}

export type HandoverTarget = "ads" | "teleop";

export interface HandoverOffer {
  type: "handover_offer";
  target: HandoverTarget;
}

export interface EventFrame {
  type: "event";
  kind: string;
  at_tick: number;
}

export type ServerFrame = Hello | Telemetry | HandoverOffer | EventFrame;

export class ProtocolError extends Error {}

function expectNumber(obj: Record<string, unknown>, key: string): number {
  const value = obj[key];
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new ProtocolError(`field ${key} is not a finite number`);
  }
  return value;
}

function expectString(obj: Record<string, unknown>, key: string): string {
  const value = obj[key];
  if (typeof value !== "string") {
    throw new ProtocolError(`field ${key} is not a string`);
  }
  return value;
}

function asRecord(value: unknown, what: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new ProtocolError(`${what} is not an object`);
  }
  return value as Record<string, unknown>;
}

function parseHello(msg: Record<string, unknown>): Hello {
  const quality = asRecord(msg.quality, "quality");
  return {
    type: "hello",
    version: expectString(msg, "version"),
    scenario: expectString(msg, "scenario"),
    policy: expectString(msg, "policy"),
    dt_ms: expectNumber(msg, "dt_ms"),
    ticks: expectNumber(msg, "ticks"),
    speedup: expectNumber(msg, "speedup"),
    heartbeat_period_ms: expectNumber(msg, "heartbeat_period_ms"),
    disconnect_timeout_ms: expectNumber(msg, "disconnect_timeout_ms"),
    handover_timeout_ms: expectNumber(msg, "handover_timeout_ms"),
    quality: {
      degraded_latency_ms: expectNumber(quality, "degraded_latency_ms"),
      unusable_latency_ms: expectNumber(quality, "unusable_latency_ms"),
      degraded_loss: expectNumber(quality, "degraded_loss"),
      unusable_loss: expectNumber(quality, "unusable_loss"),
    },
  };
}

function parseTelemetry(msg: Record<string, unknown>): Telemetry {
  const pose = asRecord(msg.pose, "pose");
  const odd = asRecord(msg.odd, "odd");
  const link = asRecord(msg.link, "link");
  const mrm = asRecord(msg.mrm, "mrm");
  const scene = asRecord(msg.scene, "scene");
  const side = (value: unknown, what: string): OddSide => {
    const rec = asRecord(value, what);
    return {
      inside: Boolean(rec.inside),
      margins: asRecord(rec.margins ?? {}, `${what}.margins`) as Record<string, number>,
    };
  };
  return {
    type: "telemetry",
    tick: expectNumber(msg, "tick"),
    pose: {
      x: expectNumber(pose, "x"),
      y: expectNumber(pose, "y"),
      heading: expectNumber(pose, "heading"),
    },
    speed_mps: expectNumber(msg, "speed_mps"),
    mode: expectString(msg, "mode"),
    risk_class: expectString(msg, "risk_class"),
    odd: { ads: side(odd.ads, "odd.ads"), teleop: side(odd.teleop, "odd.teleop") },
    link: {
      latency_ms: expectNumber(link, "latency_ms"),
      loss_frac: expectNumber(link, "loss_frac"),
      connected: Boolean(link.connected),
    },
    mrm: {
      capable: Boolean(mrm.capable),
      margin_m: expectNumber(mrm, "margin_m"),
    },
    scene: scene as unknown as Scene,
  };
}

export function parseServerFrame(raw: string): ServerFrame {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    throw new ProtocolError("frame is not JSON");
  }
  const rec = asRecord(msg, "frame");
  switch (rec.type) {
    case "hello":
      return parseHello(rec);
    case "telemetry":
      return parseTelemetry(rec);
    case "handover_offer": {
      const target = expectString(rec, "target");
      if (target !== "ads" && target !== "teleop") {
        throw new ProtocolError(`unknown handover target ${target}`);
      }
      return { type: "handover_offer", target };
    }
    case "event":
      return {
        type: "event",
        kind: expectString(rec, "kind"),
        at_tick: expectNumber(rec, "at_tick"),
      };
    default:
      throw new ProtocolError(`unknown frame type ${String(rec.type)}`);
  }
}

export function helloFrame(): string {
  return JSON.stringify({ type: "hello", version: PROTOCOL_VERSION });
}

export function controlFrame(
  clientTick: number,
  steeringRad: number,
  accelMps2: number,
): string {
  return JSON.stringify({
    type: "control",
    client_tick: clientTick,
    steering_rad: steeringRad,
    accel_mps2: accelMps2,
  });
}

export function handoverAckFrame(accept: boolean): string {
  return JSON.stringify({ type: "handover_ack", accept });
}
