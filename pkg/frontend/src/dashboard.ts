/**
 * Pure view-model for the side panel: everything the DOM layer shows is
 * derived here from the session so it can be unit-tested without a
 * browser.
 */

import { Session, FeedState } from "./session.js";
import { Telemetry } from "./protocol.js";

export type LinkQuality = "operational" | "degraded" | "unusable";

export interface OddRow {
  side: "ads" | "teleop";
  key: string;
  margin: number;
  violated: boolean;
}

export interface DashboardView {
  scenario: string;
  policy: string;
  feed: FeedState;
  mode: string;
  riskClass: string;
  speedText: string;
  linkText: string;
  linkQuality: LinkQuality | null;
  mrmText: string;
  mrmCapable: boolean | null;
  oddRows: OddRow[];
  offerText: string | null;
  noticeLines: string[];
}

export function classifyQuality(
  latencyMs: number,
  lossFrac: number,
  q: Session["hello"]["quality"],
): LinkQuality {
  if (latencyMs > q.unusable_latency_ms || lossFrac > q.unusable_loss) {
    return "unusable";
  }
  if (latencyMs > q.degraded_latency_ms || lossFrac > q.degraded_loss) {
    return "degraded";
  }
  return "operational";
}

function oddRows(t: Telemetry): OddRow[] {
  const rows: OddRow[] = [];
  for (const side of ["ads", "teleop"] as const) {
    const margins = t.odd[side].margins;
    for (const key of Object.keys(margins).sort()) {
      const margin = margins[key]!;
      rows.push({ side, key, margin, violated: margin < 0 });
    }
  }
  return rows;
}

export function buildView(session: Session, wallNow: number): DashboardView {
  const t = session.latest;
  const feed = session.feedState(wallNow);
  const view: DashboardView = {
    scenario: session.hello.scenario,
    policy: session.hello.policy,
    feed,
    mode: t ? t.mode : "-",
    riskClass: t ? t.risk_class : "-",
    speedText: t ? `${(t.speed_mps * 3.6).toFixed(1)} km/h` : "-",
    linkText: "-",
    linkQuality: null,
    mrmText: "-",
    mrmCapable: null,
    oddRows: t ? oddRows(t) : [],
    offerText: null,
    noticeLines: session.notices
      .slice(-8)
      .map((n) => `t+${((n.at_tick * session.hello.dt_ms) / 1000).toFixed(1)}s ${n.kind}`),
  };
  if (t) {
    if (feed === "dropped" || !t.link.connected) {
      view.linkText = "SEVERED";
      view.linkQuality = "unusable";
    } else {
      view.linkQuality = classifyQuality(
        t.link.latency_ms,
        t.link.loss_frac,
        session.hello.quality,
      );
      view.linkText = `${t.link.latency_ms.toFixed(0)} ms / ${(t.link.loss_frac * 100).toFixed(1)} % loss (${view.linkQuality})`;
    }
    view.mrmCapable = t.mrm.capable;
    view.mrmText = t.mrm.capable
      ? `capable, margin ${t.mrm.margin_m.toFixed(1)} m`
      : "NOT CAPABLE";
  }
  if (session.offer) {
    const remaining = Math.max(0, session.offer.deadlineWall - wallNow) / 1000;
    view.offerText = `take over as ${session.offer.target}? ${remaining.toFixed(1)}s (Y/N)`;
  }
  return view;
}
