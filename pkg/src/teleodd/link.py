"""Lossy control-link emulator between operator station and vehicle.

Both directions of the remote-driving channel (control/heartbeat up,
telemetry/heartbeat down) pass through the same seeded model: constant base
latency plus uniform jitter, i.i.d. packet loss, and scripted events that
change parameters or sever the link outright. Time is integer simulator
ticks; the emulator never consults the wall clock, so identical seeds give
identical delivery traces.

All rx-side statistics are kept per direction over a rolling window and
exported as the ``conn.*`` snapshot keys the ODD monitors consume.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

UP = "up"      # operator -> vehicle
DOWN = "down"  # vehicle -> operator

DROPPED = -1

STATS_WINDOW_MS = 1000


class QualityClass(Enum):
    OPERATIONAL = "operational"
    DEGRADED = "degraded"
    UNUSABLE = "unusable"

    def at_least(self, other: "QualityClass") -> bool:
        order = [QualityClass.UNUSABLE, QualityClass.DEGRADED,
                 QualityClass.OPERATIONAL]
        return order.index(self) >= order.index(other)


@dataclass(frozen=True)
class QualityThresholds:
    degraded_latency_ms: float = 100.0
    unusable_latency_ms: float = 250.0
    degraded_loss: float = 0.05
    unusable_loss: float = 0.2


@dataclass(frozen=True)
class ChannelConfig:
    base_latency_ms: float = 40.0
    jitter_ms: float = 10.0
    loss_prob: float = 0.0
    heartbeat_period_ms: int = 50
    disconnect_timeout_ms: int = 300
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob {self.loss_prob} outside [0, 1]")
        if self.base_latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be non-negative")
        if self.disconnect_timeout_ms < 2 * self.heartbeat_period_ms:
            raise ValueError(
                "disconnect timeout must be at least two heartbeat periods")


@dataclass
class Packet:
    kind: str                   # control | telemetry | heartbeat
    payload: object
    sent_tick: int
    deliver_tick: int = DROPPED

    @property
    def dropped(self) -> bool:
        return self.deliver_tick == DROPPED


@dataclass(frozen=True)
class LinkEvent:
    """Scripted channel change. kind is one of hard_disconnect (arg =
    duration ms), set_loss (arg = probability), set_latency (arg = ms)."""

    at_ms: int
    kind: str
    arg: float

    def __post_init__(self):
        if self.kind not in ("hard_disconnect", "set_loss", "set_latency"):
            raise ValueError(f"unknown link event kind {self.kind!r}")


@dataclass
class LinkStats:
    """What the rx endpoint of one direction observes over the window."""

    mean_latency_ms: float
    loss_frac: float
    heartbeat_age_ms: float


@dataclass
class _Direction:
    in_flight: list = field(default_factory=list)   # kept sorted by (deliver, seq)
    last_rx_tick: int = 0
    window: deque = field(default_factory=deque)    # (resolved_tick, delivered, latency_ticks)
    last_mean_latency_ms: float = 0.0
    seq: int = 0


class Channel:
    """Bidirectional seeded channel. One RNG stream drives both directions
    in send order, so a run is reproducible from (config, event script)."""

    def __init__(self, cfg: ChannelConfig, dt_ms: int = 10,
                 events: list[LinkEvent] | None = None):
        self.cfg = cfg
        self.dt_ms = dt_ms
        self.rng = random.Random(cfg.seed)
        self.base_latency_ms = cfg.base_latency_ms
        self.loss_prob = cfg.loss_prob
        self.dirs = {UP: _Direction(), DOWN: _Direction()}
        self.dirs[UP].last_mean_latency_ms = cfg.base_latency_ms
        self.dirs[DOWN].last_mean_latency_ms = cfg.base_latency_ms
        self._down_windows: list[tuple[int, int]] = []  # [start, end) ticks
        self._pending: list[LinkEvent] = []
        for ev in sorted(events or [], key=lambda e: e.at_ms):
            self.inject_event(ev, now=-1)

    # -- scripting ---------------------------------------------------------

    def inject_event(self, ev: LinkEvent, now: int = -1):
        if ev.at_ms // self.dt_ms <= now:
            raise ValueError(f"link event at {ev.at_ms} ms is not in the future")
        self._pending.append(ev)
        self._pending.sort(key=lambda e: e.at_ms)

    def _apply_due_events(self, now: int):
        while self._pending and self._pending[0].at_ms // self.dt_ms <= now:
            ev = self._pending.pop(0)
            if ev.kind == "set_loss":
                self.loss_prob = float(ev.arg)
            elif ev.kind == "set_latency":
                self.base_latency_ms = float(ev.arg)
            else:
                start = ev.at_ms // self.dt_ms
                end = start + max(0, round(ev.arg / self.dt_ms))
                self._down_windows.append((start, end))
                self._down_windows = _merge_windows(self._down_windows)

    def severed(self, now: int) -> bool:
        return any(start <= now < end for start, end in self._down_windows)

    # -- data path ---------------------------------------------------------

    def send(self, pkt: Packet, now: int, direction: str):
        """Queue a packet. Loss and the latency draw are decided at send
        time; a packet inside a disconnect window is dropped outright."""
        self._apply_due_events(now)
        d = self.dirs[direction]
        pkt.sent_tick = now
        if self.severed(now) or (self.loss_prob > 0.0 and
                                 self.rng.random() < self.loss_prob):
            pkt.deliver_tick = DROPPED
            d.window.append((now, False, 0))
            return
        jitter = self.rng.uniform(-self.cfg.jitter_ms, self.cfg.jitter_ms) \
            if self.cfg.jitter_ms > 0 else 0.0
        delay_ticks = max(0, round((self.base_latency_ms + jitter) / self.dt_ms))
        pkt.deliver_tick = now + delay_ticks
        d.in_flight.append((pkt.deliver_tick, d.seq, pkt))
        d.seq += 1
        d.in_flight.sort(key=lambda item: (item[0], item[1]))

    def step(self, now: int, direction: str) -> list[Packet]:
        """Pop every packet whose delivery tick has arrived, in
        (deliver_tick, send order). A packet due while the link is severed
        is lost even if it was sent before the outage began."""
        self._apply_due_events(now)
        d = self.dirs[direction]
        out = []
        while d.in_flight and d.in_flight[0][0] <= now:
            deliver_tick, _, pkt = d.in_flight.pop(0)
            if self.severed(deliver_tick):
                pkt.deliver_tick = DROPPED
                d.window.append((deliver_tick, False, 0))
                continue
            out.append(pkt)
            d.last_rx_tick = now
            d.window.append((now, True, now - pkt.sent_tick))
        return out

    # -- monitoring --------------------------------------------------------

    def detect_disconnect(self, now: int, direction: str = UP) -> bool:
        """True iff nothing has arrived within the timeout. Deliberately
        hysteresis-free: a single delivery clears it."""
        d = self.dirs[direction]
        return now - d.last_rx_tick > self.cfg.disconnect_timeout_ms // self.dt_ms

    def stats(self, now: int, direction: str = UP) -> LinkStats:
        d = self.dirs[direction]
        horizon = now - STATS_WINDOW_MS // self.dt_ms
        while d.window and d.window[0][0] < horizon:
            d.window.popleft()
        delivered = [lat for _, ok, lat in d.window if ok]
        total = len(d.window)
        if delivered:
            d.last_mean_latency_ms = (sum(delivered) / len(delivered)) * self.dt_ms
        loss = 1.0 - len(delivered) / total if total else 0.0
        return LinkStats(
            mean_latency_ms=d.last_mean_latency_ms,
            loss_frac=loss,
            heartbeat_age_ms=float((now - d.last_rx_tick) * self.dt_ms),
        )


def _merge_windows(windows: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for start, end in sorted(windows):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def classify_quality(stats: LinkStats,
                     thresholds: QualityThresholds = QualityThresholds()
                     ) -> QualityClass:
    """Worst-of classification over latency and loss; monotone in both."""
    if stats.mean_latency_ms > thresholds.unusable_latency_ms or \
            stats.loss_frac > thresholds.unusable_loss:
        return QualityClass.UNUSABLE
    if stats.mean_latency_ms > thresholds.degraded_latency_ms or \
            stats.loss_frac > thresholds.degraded_loss:
        return QualityClass.DEGRADED
    return QualityClass.OPERATIONAL
