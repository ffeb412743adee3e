/**
 * Keyboard capture and rate-limited control streaming.
 *
 * Held arrow keys slew a virtual wheel and pedal toward their targets so a
 * tapped key nudges and a held key ramps; Space zeroes both instantly. The
 * sender throttles the uplink: a frame goes out at most once per interval,
 * and an unchanged command is repeated only at the keepalive interval so
 * the vehicle's heartbeat monitoring sees a live operator without the
 * console spamming identical frames.
 */

export interface ControlState {
  steeringRad: number;
  accelMps2: number;
}

export const STEER_MAX_RAD = 0.35;
export const ACCEL_MAX_MPS2 = 2.0;
export const BRAKE_MAX_MPS2 = 4.0;

const STEER_RATE_RAD_S = 0.7;
const STEER_RETURN_RAD_S = 1.4;
const ACCEL_RATE_MPS3 = 4.0;

function approach(value: number, target: number, maxStep: number): number {
  if (value < target) {
    return Math.min(target, value + maxStep);
  }
  return Math.max(target, value - maxStep);
}

export class InputRig {
  private held = new Set<string>();
  private steering = 0;
  private accel = 0;

  keyDown(code: string): void {
    this.held.add(code);
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  /** Drop all held keys (window blur, handover away). */
  clear(): void {
    this.held.clear();
  }

  sample(dtMs: number): ControlState {
    const dt = dtMs / 1000;
    if (this.held.has("Space")) {
      this.steering = 0;
      this.accel = 0;
      return { steeringRad: 0, accelMps2: 0 };
    }
    let steerTarget = 0;
    if (this.held.has("ArrowLeft")) {
      steerTarget += STEER_MAX_RAD;
    }
    if (this.held.has("ArrowRight")) {
      steerTarget -= STEER_MAX_RAD;
    }
    const steerRate = steerTarget === 0 ? STEER_RETURN_RAD_S : STEER_RATE_RAD_S;
    this.steering = approach(this.steering, steerTarget, steerRate * dt);

    let accelTarget = 0;
    if (this.held.has("ArrowUp")) {
      accelTarget += ACCEL_MAX_MPS2;
    }
    if (this.held.has("ArrowDown")) {
      accelTarget -= BRAKE_MAX_MPS2;
    }
    this.accel = approach(this.accel, accelTarget, ACCEL_RATE_MPS3 * dt);

    return {
      steeringRad: Number(this.steering.toFixed(6)),
      accelMps2: Number(this.accel.toFixed(6)),
    };
  }
}

export class ControlSender {
  private lastSentWall = -Infinity;
  private lastSent: ControlState | null = null;

  constructor(
    private readonly minIntervalMs: number,
    private readonly keepaliveMs: number = 250,
  ) {
    if (minIntervalMs <= 0 || keepaliveMs < minIntervalMs) {
      throw new Error("sender intervals must satisfy 0 < min <= keepalive");
    }
  }

  /** Returns the state to put on the wire now, or null to stay quiet. */
  maybeSend(state: ControlState, wallNow: number): ControlState | null {
    const sinceLast = wallNow - this.lastSentWall;
    if (sinceLast < this.minIntervalMs) {
      return null;
    }
    const changed =
      this.lastSent === null ||
      Math.abs(state.steeringRad - this.lastSent.steeringRad) > 1e-4 ||
      Math.abs(state.accelMps2 - this.lastSent.accelMps2) > 1e-4;
    if (!changed && sinceLast < this.keepaliveMs) {
      return null;
    }
    this.lastSentWall = wallNow;
    this.lastSent = state;
    return state;
  }
}
