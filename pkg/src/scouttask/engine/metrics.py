"""Per-tick metrics records and their on-disk formats."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

SUMMARY_FORMAT = "scouttask-summary/1"


@dataclass
class MetricsRecord:
    tick: int
    poses: dict[str, tuple[float, float, float]]
    pose_errors: dict[str, float]
    confirmed: int
    entropy: dict[str, float]
    mi_ucb: dict[str, float]
    sent: int
    delivered: int
    dropped: int
    positions: dict[str, tuple[int, int]] = field(default_factory=dict)


def _num(v: float) -> str:
    # repr is the shortest round-tripping form, so files are stable across runs
    return repr(float(v))


def csv_header(robot_ids: list[str]) -> list[str]:
    cols = ["tick", "confirmed", "sent", "delivered", "dropped"]
    for rid in robot_ids:
        cols += [f"{rid}_x", f"{rid}_y", f"{rid}_theta", f"{rid}_cell_x", f"{rid}_cell_y",
                 f"{rid}_pose_error", f"{rid}_entropy", f"{rid}_mi_ucb"]
    return cols


def csv_row(rec: MetricsRecord, robot_ids: list[str]) -> list[str]:
    row = [str(rec.tick), str(rec.confirmed), str(rec.sent), str(rec.delivered), str(rec.dropped)]
    for rid in robot_ids:
        x, y, th = rec.poses[rid]
        cx, cy = rec.positions.get(rid, (-1, -1))
        row += [_num(x), _num(y), _num(th), str(cx), str(cy), _num(rec.pose_errors[rid]),
                _num(rec.entropy[rid]), _num(rec.mi_ucb[rid])]
    return row


def metrics_csv(records: list[MetricsRecord], robot_ids: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(robot_ids))
    for rec in records:
        w.writerow(csv_row(rec, robot_ids))
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> tuple[list[str], list[dict[str, float]]]:
    """Robot ids and numeric rows of a metrics file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = [{k: float(v) for k, v in r.items()} for r in reader]
    ids = [c[: -len("_entropy")] for c in header if c.endswith("_entropy")]
    return ids, rows


def events_jsonl(events: list[dict]) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in events)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
