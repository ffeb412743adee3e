/**
 * Client-side run state: the latest telemetry, pending handover offer,
 * event log, and the freshness verdict on the telemetry feed.
 *
 * Freshness is judged on the console's own wall clock against the
 * thresholds announced in the server hello, scaled by the announced
 * pacing: telemetry rides the simulated downlink, so a severed link simply
 * starves the stream and the console must infer the outage itself. The
 * feed counts as stale after two heartbeat periods of silence (one missed
 * delivery beyond nominal spacing) and as dropped after the disconnect
 * timeout, mirroring the vehicle's own verdict.
 */

import {
  EventFrame,
  HandoverTarget,
  Hello,
  ProtocolError,
  ServerFrame,
  Telemetry,
} from "./protocol.js";

export type FeedState = "connecting" | "live" | "stale" | "dropped" | "closed";

export interface PendingOffer {
  target: HandoverTarget;
  deadlineWall: number;
}

const NOTICE_LIMIT = 50;

export class Session {
  readonly hello: Hello;
  latest: Telemetry | null = null;
  notices: EventFrame[] = [];
  offer: PendingOffer | null = null;
  runComplete = false;
  private closed = false;
  private lastTelemetryWall: number | null = null;

  constructor(hello: Hello) {
    this.hello = hello;
  }

  /** Simulated milliseconds to wall milliseconds under the announced
   * pacing. Pacing 0 means the server free-runs; wall thresholds are
   * meaningless then and are left unscaled. */
  wallMs(simMs: number): number {
    return this.hello.speedup > 0 ? simMs / this.hello.speedup : simMs;
  }

  get staleAfterMs(): number {
    return this.wallMs(2 * this.hello.heartbeat_period_ms);
  }

  get dropAfterMs(): number {
    return this.wallMs(this.hello.disconnect_timeout_ms);
  }

  onFrame(frame: ServerFrame, wallNow: number): void {
    switch (frame.type) {
      case "telemetry":
        this.latest = frame;
        this.lastTelemetryWall = wallNow;
        return;
      case "handover_offer":
        this.offer = {
          target: frame.target,
          deadlineWall: wallNow + this.wallMs(this.hello.handover_timeout_ms),
        };
        return;
      case "event":
        this.notices.push(frame);
        if (this.notices.length > NOTICE_LIMIT) {
          this.notices.shift();
        }
        if (frame.kind === "run_complete") {
          this.runComplete = true;
        }
        return;
      default:
        throw new ProtocolError("unexpected mid-run hello");
    }
  }

  /** Forget the pending offer (after sending the ack, or once expired). */
  clearOffer(): void {
    this.offer = null;
  }

  feedState(wallNow: number): FeedState {
    if (this.closed) {
      return "closed";
    }
    if (this.lastTelemetryWall === null) {
      return "connecting";
    }
    const age = wallNow - this.lastTelemetryWall;
    if (age > this.dropAfterMs) {
      return "dropped";
    }
    if (age > this.staleAfterMs) {
      return "stale";
    }
    return "live";
  }

  sawEvent(kind: string): boolean {
    return this.notices.some((n) => n.kind === kind);
  }

  markClosed(): void {
    this.closed = true;
  }
}
