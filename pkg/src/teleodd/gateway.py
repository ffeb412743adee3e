"""Live operator session: the simulation loop behind a WebSocket.

The loop stays single-threaded and deterministic; the gateway exchanges
messages with it only through two bounded queues. A reader task feeds
inbound control and handover acks into the queue the loop drains at tick
start; the loop flushes telemetry and event notifications after each tick.
Messages the client cannot keep up with are dropped oldest first.

Wire protocol (text frames, JSON): the server opens with ``hello`` and the
client must answer with a matching ``hello`` before the run starts. After
that the client may send only ``control`` and ``handover_ack``; everything
else closes the session with a coded reason. The server sends ``telemetry``
(20 Hz simulated time), ``handover_offer`` and ``event`` notifications.
"""

from __future__ import annotations

import asyncio
import json
from collections import deque
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .harness import Harness, OperatorSource, RunResult
from .link import QualityThresholds
from .scenario import Scenario
from .world import ControlInput

PROTOCOL_VERSION = "1"
HELLO_TIMEOUT_S = 10.0
INBOUND_LIMIT = 64
OUTBOUND_LIMIT = 256

CLOSE_VERSION_MISMATCH = 4001
CLOSE_PROTOCOL_VIOLATION = 4002
CLOSE_SESSION_TAKEN = 4003
CLOSE_RUN_COMPLETE = 1000


class QueueSource(OperatorSource):
    """Bounded-queue bridge between the socket and the loop."""

    def __init__(self):
        self.inbound: deque = deque(maxlen=INBOUND_LIMIT)
        self.outbound: deque = deque(maxlen=OUTBOUND_LIMIT)

    def poll(self, tick: int) -> list[tuple[str, object]]:
        drained = list(self.inbound)
        self.inbound.clear()
        return drained

    def publish(self, telemetry: dict):
        self.outbound.append(telemetry)

    def notify(self, kind: str, tick: int):
        if kind.startswith("handover_offer:"):
            self.outbound.append({"type": "handover_offer",
                                  "target": kind.split(":", 1)[1]})
        else:
            self.outbound.append({"type": "event", "kind": kind,
                                  "at_tick": tick})


def _hello(scenario: Scenario, speedup: float) -> dict:
    thresholds = QualityThresholds()
    return {
        "type": "hello",
        "version": PROTOCOL_VERSION,
        "scenario": scenario.name,
        "policy": scenario.policy_kind.value,
        "dt_ms": scenario.dt_ms,
        "ticks": scenario.ticks,
        "speedup": speedup,
        "heartbeat_period_ms": scenario.link.heartbeat_period_ms,
        "disconnect_timeout_ms": scenario.link.disconnect_timeout_ms,
        "handover_timeout_ms": scenario.handover_timeout_ms,
        "quality": {
            "degraded_latency_ms": thresholds.degraded_latency_ms,
            "unusable_latency_ms": thresholds.unusable_latency_ms,
            "degraded_loss": thresholds.degraded_loss,
            "unusable_loss": thresholds.unusable_loss,
        },
    }


def _parse_client_message(raw: str) -> tuple[str, object]:
    """Decode one inbound frame; raises ValueError on anything off-protocol."""
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError:
        raise ValueError("not JSON")
    if not isinstance(msg, dict):
        raise ValueError("not an object")
    kind = msg.get("type")
    if kind == "control":
        return "control", ControlInput(float(msg["steering_rad"]),
                                       float(msg["accel_mps2"]))
    if kind == "handover_ack":
        accept = msg["accept"]
        if not isinstance(accept, bool):
            raise ValueError("accept must be a boolean")
        return "handover_ack", accept
    raise ValueError(f"unexpected message type {kind!r}")


def build_app(scenario: Scenario, *, policy=None, seed=None,
              mrm_strategy: str = "corridor", speedup: float = 1.0,
              offers: list[tuple[int, str]] | None = None,
              on_finish=None) -> FastAPI:
    """One scenario, one session: the run starts on the first valid client
    hello and the app refuses later connections."""
    if speedup < 0:
        raise ValueError("speedup must be non-negative")
    app = FastAPI()
    state = {"taken": False}
    offer_rows = sorted(offers or [])

    @app.websocket("/ws")
    async def session(ws: WebSocket):
        await ws.accept()
        if state["taken"]:
            await ws.close(code=CLOSE_SESSION_TAKEN,
                           reason="session already used")
            return
        state["taken"] = True

        resolved = scenario.resolved(seed_override=seed,
                                     policy_override=policy)
        source = QueueSource()
        harness = Harness(resolved, operator_source=source,
                          mrm_strategy=mrm_strategy)

        await ws.send_text(json.dumps(_hello(resolved, speedup)))
        try:
            raw = await asyncio.wait_for(ws.receive_text(), HELLO_TIMEOUT_S)
            greeting = json.loads(raw)
            if not isinstance(greeting, dict) or greeting.get("type") != "hello":
                raise ValueError("expected hello")
        except (WebSocketDisconnect, asyncio.TimeoutError):
            return
        except (json.JSONDecodeError, ValueError):
            await ws.close(code=CLOSE_PROTOCOL_VIOLATION,
                           reason="expected hello")
            return
        if greeting.get("version") != PROTOCOL_VERSION:
            await ws.close(code=CLOSE_VERSION_MISMATCH,
                           reason=f"server speaks version {PROTOCOL_VERSION}")
            return

        flags = {"violation": False, "gone": False}

        async def reader():
            while True:
                try:
                    raw = await ws.receive_text()
                except (WebSocketDisconnect, RuntimeError):
                    flags["gone"] = True
                    return
                try:
                    source.inbound.append(_parse_client_message(raw))
                except (KeyError, TypeError, ValueError):
                    flags["violation"] = True
                    return

        reader_task = asyncio.create_task(reader())
        loop = asyncio.get_running_loop()
        start = loop.time()
        pending = list(offer_rows)
        try:
            for now in range(resolved.ticks):
                if speedup > 0:
                    delay = start + (now * resolved.dt_ms / 1000.0) / speedup \
                        - loop.time()
                    await asyncio.sleep(max(delay, 0.0))
                else:
                    await asyncio.sleep(0)
                if flags["violation"]:
                    await ws.close(code=CLOSE_PROTOCOL_VIOLATION,
                                   reason="protocol violation")
                    break
                while pending and pending[0][0] <= now * resolved.dt_ms:
                    harness.offer_handover(pending.pop(0)[1], now)
                harness._tick(now)
                while source.outbound:
                    msg = source.outbound.popleft()
                    if flags["gone"]:
                        continue
                    try:
                        await ws.send_text(json.dumps(msg))
                    except (WebSocketDisconnect, RuntimeError):
                        flags["gone"] = True
            else:
                if not flags["gone"]:
                    final = {"type": "event", "kind": "run_complete",
                             "at_tick": max(resolved.ticks - 1, 0)}
                    try:
                        await ws.send_text(json.dumps(final))
                        await ws.close(code=CLOSE_RUN_COMPLETE,
                                       reason="run complete")
                    except (WebSocketDisconnect, RuntimeError):
                        pass
        finally:
            reader_task.cancel()
            if on_finish is not None:
                on_finish(harness.finish())

    return app


def serve(scenario: Scenario, host: str, port: int, *, policy=None,
          seed=None, mrm_strategy: str = "corridor", speedup: float = 1.0,
          offers: list[tuple[int, str]] | None = None,
          log_path: Path | str | None = None) -> int:
    """Block serving one session; returns a process exit code."""
    import uvicorn

    holder: dict = {}

    def on_finish(result: RunResult):
        holder["result"] = result
        if log_path:
            result.write_log(log_path)
        server = holder.get("server")
        if server is not None:
            server.should_exit = True

    app = build_app(scenario, policy=policy, seed=seed,
                    mrm_strategy=mrm_strategy, speedup=speedup,
                    offers=offers, on_finish=on_finish)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    holder["server"] = server
    server.run()
    result = holder.get("result")
    if result is None:
        return 1
    from .report import render
    row = dict(result.metrics.to_dict(), name=result.scenario_name)
    print(render([row], "text"), end="")
    return 1 if result.metrics.failed else 0
