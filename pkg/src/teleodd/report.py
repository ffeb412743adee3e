"""Render run metrics as a text table or CSV.

Input rows are run summaries: the dict stored on the last line of a run
log, or a Metrics.to_dict() with a name attached. Rendering tolerates
missing fields so partial or hand-edited summaries still print.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

CSV_COLUMNS = [
    "name", "final_mode", "final_speed_mps", "ticks",
    "undefined_entries", "mrm_started", "mrm_completed",
    "collisions", "stop_point_in_zone", "worst_margin_key",
    "worst_margin", "failed", "cause",
]


class ReportError(ValueError):
    pass


def summary_from_log(path: Path | str) -> dict:
    """Pull the summary line off a run log: name, zone and metrics."""
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"log {str(path)!r} not found")
    lines = path.read_text().splitlines()
    if not lines:
        raise ReportError(f"log {str(path)!r} is empty")
    try:
        summary = json.loads(lines[-1])["summary"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raise ReportError(f"log {str(path)!r} has no summary line")
    row = dict(summary.get("metrics", {}))
    row["name"] = summary.get("name", path.stem)
    return row


def _collisions_cell(value) -> str:
    if not value:
        return "none"
    return "|".join(f"{kind}:{count}" for kind, count in sorted(value.items()))


def _worst_margin(row: dict) -> tuple[str, float | None]:
    margins = row.get("min_margin") or {}
    if not margins:
        return "", None
    key = min(margins, key=lambda k: margins[k])
    return key, margins[key]


def _zone_cell(value) -> str:
    if value is None:
        return "-"
    return "yes" if value else "no"


def render_text(rows: list[dict]) -> str:
    if not rows:
        return "no runs\n"
    blocks = []
    for row in rows:
        key, margin = _worst_margin(row)
        started = row.get("mrm_started", 0)
        completed = row.get("mrm_completed", 0)
        lines = [
            f"run            {row.get('name', '-')}",
            f"final mode     {row.get('final_mode', '-')}",
            f"final speed    {row.get('final_speed_mps', '-')} m/s",
            f"ticks          {row.get('ticks', '-')}",
            f"undefined      {row.get('undefined_entries', '-')}",
            f"mrm            {started} started / {completed} completed",
            f"collisions     {_collisions_cell(row.get('collisions'))}",
            f"stop in zone   {_zone_cell(row.get('stop_point_in_zone'))}",
        ]
        if key:
            lines.append(f"worst margin   {key} = {margin}")
        if row.get("failed"):
            lines.append(f"FAILED         {row.get('cause', '')}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def render_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        key, margin = _worst_margin(row)
        zone = row.get("stop_point_in_zone")
        writer.writerow({
            "name": row.get("name", ""),
            "final_mode": row.get("final_mode", ""),
            "final_speed_mps": row.get("final_speed_mps", ""),
            "ticks": row.get("ticks", ""),
            "undefined_entries": row.get("undefined_entries", ""),
            "mrm_started": row.get("mrm_started", ""),
            "mrm_completed": row.get("mrm_completed", ""),
            "collisions": _collisions_cell(row.get("collisions")),
            "stop_point_in_zone": "" if zone is None else int(bool(zone)),
            "worst_margin_key": key,
            "worst_margin": "" if margin is None else margin,
            "failed": int(bool(row.get("failed"))),
            "cause": row.get("cause", ""),
        })
    return out.getvalue()


def render(rows: list[dict], fmt: str) -> str:
    if fmt == "text":
        return render_text(rows)
    if fmt == "csv":
        return render_csv(rows)
    raise ReportError(f"unknown report format {fmt!r}")
