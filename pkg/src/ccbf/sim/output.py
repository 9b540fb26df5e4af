"""Log writers: wide CSV (one row per step) and JSONL (one record per step).

CSV column order is fixed: ``t``; then for every agent ``i`` in id order
``agent{i}_x, agent{i}_y, agent{i}_psi, agent{i}_beta, agent{i}_v,
agent{i}_a, agent{i}_omega``; then for every controlled agent ``i`` in id
order ``h{s}_{i}`` for each constituent ``s``, ``H_{i}``, ``k{s}_{i}`` for
each constituent, ``hp_{i}``. Floats are written with ``repr`` so values
round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

STATE_COLS = ("x", "y", "psi", "beta", "v")
INPUT_COLS = ("a", "omega")


def csv_header(logs, n_agents: int, controlled) -> list[str]:
    cols = ["t"]
    for i in range(n_agents):
        cols += [f"agent{i}_{c}" for c in STATE_COLS + INPUT_COLS]
    first = logs[0].agents
    for i in controlled:
        c = len(first[i]["h"])
        cols += [f"h{s}_{i}" for s in range(c)] + [f"H_{i}"] + [f"k{s}_{i}" for s in range(c)] + [f"hp_{i}"]
    return cols


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path, logs, n_agents: int, controlled) -> None:
    controlled = list(controlled)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(logs, n_agents, controlled))
        for rec in logs:
            row = [_fmt(rec.t)]
            for z, u in zip(rec.states, rec.inputs):
                row += [_fmt(v) for v in z] + [_fmt(v) for v in u]
            for i in controlled:
                a = rec.agents.get(i)
                if a is None:
                    row += [""] * (2 * len(logs[0].agents[i]["h"]) + 2)
                    continue
                row += [_fmt(v) for v in a["h"]] + [_fmt(a["H"])] + [_fmt(v) for v in a["k"]] + [_fmt(a["h_p"])]
            w.writerow(row)


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_jsonl(path, logs) -> None:
    with open(path, "w") as fh:
        for rec in logs:
            fh.write(json.dumps(_clean(rec.to_dict()), sort_keys=True) + "\n")


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
