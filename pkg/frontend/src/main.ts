/**
 * Browser entry point: connects to the vehicle gateway, pumps frames into
 * the session, streams rate-limited controls back, and paints the canvas
 * and side panel.
 *
 * Server address comes from `?server=ws://host:port/ws`, defaulting to the
 * page host.
 */

import {
  CLOSE_RUN_COMPLETE,
  PROTOCOL_VERSION,
  ProtocolError,
  controlFrame,
  handoverAckFrame,
  helloFrame,
  parseServerFrame,
} from "./protocol.js";
import { Session } from "./session.js";
import { ControlSender, InputRig } from "./input.js";
import { drawScene } from "./render.js";
import { buildView } from "./dashboard.js";

const SEND_INTERVAL_MS = 50;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

function serverUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("server");
  if (fromQuery) {
    return fromQuery;
  }
  return `ws://${location.host}/ws`;
}

function main(): void {
  const canvas = byId<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    throw new Error("canvas 2d context unavailable");
  }
  const statusEl = byId<HTMLElement>("status");
  const fields = {
    scenario: byId<HTMLElement>("f-scenario"),
    mode: byId<HTMLElement>("f-mode"),
    risk: byId<HTMLElement>("f-risk"),
    speed: byId<HTMLElement>("f-speed"),
    link: byId<HTMLElement>("f-link"),
    mrm: byId<HTMLElement>("f-mrm"),
    odd: byId<HTMLElement>("f-odd"),
    notices: byId<HTMLElement>("f-notices"),
    offer: byId<HTMLElement>("offer"),
  };

  const ws = new WebSocket(serverUrl());
  const rig = new InputRig();
  const sender = new ControlSender(SEND_INTERVAL_MS);
  let session: Session | null = null;

  statusEl.textContent = "connecting";

  ws.onmessage = (msg: MessageEvent) => {
    let frame;
    try {
      frame = parseServerFrame(String(msg.data));
    } catch (err) {
      if (err instanceof ProtocolError) {
        statusEl.textContent = `protocol error: ${err.message}`;
        ws.close();
        return;
      }
      throw err;
    }
    const now = performance.now();
    if (!session) {
      if (frame.type !== "hello") {
        statusEl.textContent = "protocol error: expected hello";
        ws.close();
        return;
      }
      if (frame.version !== PROTOCOL_VERSION) {
        statusEl.textContent = `version mismatch: server speaks ${frame.version}`;
        ws.close();
        return;
      }
      session = new Session(frame);
      ws.send(helloFrame());
      return;
    }
    session.onFrame(frame, now);
  };

  ws.onclose = (ev: CloseEvent) => {
    session?.markClosed();
    statusEl.textContent =
      ev.code === CLOSE_RUN_COMPLETE ? "run complete" : `closed (${ev.code})`;
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.code === "KeyY" || ev.code === "KeyN") {
      if (session?.offer && ws.readyState === WebSocket.OPEN) {
        ws.send(handoverAckFrame(ev.code === "KeyY"));
        session.clearOffer();
      }
      return;
    }
    rig.keyDown(ev.code);
    if (ev.code.startsWith("Arrow") || ev.code === "Space") {
      ev.preventDefault();
    }
  });
  window.addEventListener("keyup", (ev) => rig.keyUp(ev.code));
  window.addEventListener("blur", () => rig.clear());

  setInterval(() => {
    if (!session || ws.readyState !== WebSocket.OPEN) {
      return;
    }
    const state = rig.sample(SEND_INTERVAL_MS);
    const due = sender.maybeSend(state, performance.now());
    if (due) {
      ws.send(controlFrame(session.latest?.tick ?? 0, due.steeringRad, due.accelMps2));
    }
  }, SEND_INTERVAL_MS);

  const paint = () => {
    if (session) {
      const now = performance.now();
      const view = buildView(session, now);
      if (session.offer && now > session.offer.deadlineWall) {
        session.clearOffer();
      }
      statusEl.textContent = view.feed;
      statusEl.dataset.state = view.feed;
      fields.scenario.textContent = `${view.scenario} (${view.policy})`;
      fields.mode.textContent = view.mode;
      fields.risk.textContent = view.riskClass;
      fields.speed.textContent = view.speedText;
      fields.link.textContent = view.linkText;
      fields.mrm.textContent = view.mrmText;
      fields.odd.textContent = view.oddRows
        .map((r) => `${r.side}.${r.key} ${r.violated ? "✗" : "✓"} ${r.margin.toFixed(2)}`)
        .join("\n");
      fields.notices.textContent = view.noticeLines.join("\n");
      fields.offer.textContent = view.offerText ?? "";
      fields.offer.hidden = view.offerText === null;
      if (session.latest) {
        drawScene(ctx, canvas.width, canvas.height, session.latest);
      }
    }
    requestAnimationFrame(paint);
  };
  requestAnimationFrame(paint);
}

main();
