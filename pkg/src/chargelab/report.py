"""Trajectory CSV files and comparison tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .harness import RunResult

CSV_COLUMNS = ("t_s", "V_b", "V_s", "T_core_K", "T_surf_K", "I_A", "P_act_W", "V_V", "SoC",
               "solver_status", "solve_ms")


def _fmt(v: float) -> str:
    # shortest round-trip representation; locale independent
    return repr(float(v))


def trajectory_rows(result: RunResult, record_timing: bool = False):
    log = result.log
    for k in range(log.t.size):
        x, u = log.states[k], log.inputs[k]
        ms = log.solve_ms[k]
        yield ([_fmt(log.t[k])] + [_fmt(v) for v in x[:4]] + [_fmt(u[0]), _fmt(u[1]),
               _fmt(log.V[k]), _fmt(log.soc[k]), log.status[k],
               _fmt(ms) if record_timing and ms is not None else ""])


def write_trajectory(path, result: RunResult, record_timing: bool = False) -> Path:
    """Write the per-step trajectory of one run.

    ``solve_ms`` stays empty unless ``record_timing`` is set, which keeps the
    file a deterministic function of the scenario and seed.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(trajectory_rows(result, record_timing))
    return path


def read_trajectory(path) -> dict[str, np.ndarray]:
    """Numeric columns of a trajectory file (status column as strings)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header")
    body = rows[1:]
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(CSV_COLUMNS):
        col = [r[j] for r in body]
        if name == "solver_status":
            out[name] = np.array(col, dtype=object)
        else:
            out[name] = np.array([float(c) if c else np.nan for c in col])
    return out


def summary_record(result: RunResult, trial: int = 0) -> dict:
    """JSON-ready summary of one run."""
    times = np.asarray(result.solve_times, dtype=float)
    rec = {
        "label": result.label,
        "strategy": result.strategy,
        "trial": trial,
        "completed": result.completed,
        "timed_out": result.timed_out,
        "error": result.error,
        "T_chg_s": result.T_chg,
        "energy_kJ": result.energy_kJ,
        "efficiency": result.efficiency,
        "T_comp_ms": float(times.mean() * 1e3) if times.size else None,
        "solves": result.solves,
        "infeasible_solves": result.infeasible_solves,
        "infeasible_windows_s": [list(w) for w in result.infeasible_windows],
        "violation_duration_s": result.violations.duration,
        "violation_worst_relative": result.violations.worst_relative,
        "violation_worst_name": result.violations.worst_name,
    }
    if result.estimation is not None and result.estimation.soc_error.size:
        rec["soc_error_mean_abs"] = float(np.mean(np.abs(result.estimation.soc_error)))
    return rec


def write_summary(path, records: Sequence[dict]) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"runs": list(records)}, indent=2) + "\n", encoding="utf-8")
    return path


def read_summary(path) -> list[dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not isinstance(data.get("runs"), list):
        raise ValueError(f"{path}: not a run summary")
    return data["runs"]


def _span(windows) -> str:
    return ", ".join(f"{a:g}-{b:g} s" for a, b in windows)


def _row(group: list[dict], notes: list[str]) -> list[str]:
    """Table cells for one label, averaging over trials."""
    first = group[0]
    marks = []

    def note(text):
        if text not in notes:
            notes.append(text)
        marks.append(chr(ord("a") + notes.index(text)))

    all_infeasible = all(r["solves"] > 0 and r["infeasible_solves"] == r["solves"] for r in group)
    if all_infeasible:
        note(f"{first['label']}: infeasible at every solve")
        name = first["label"] + "".join(f"^{m}" for m in marks)
        return [name, "N/A", "N/A", "N/A", "N/A"]
    windows = sorted({tuple(w) for r in group for w in r["infeasible_windows_s"]})
    if windows:
        note(f"{first['label']}: infeasible in {_span(windows)}")
    worst = max(r["violation_worst_relative"] for r in group)
    if any(r["violation_duration_s"] > 0 for r in group):
        dur = max(r["violation_duration_s"] for r in group)
        note(f"{first['label']}: bound violation ({first['violation_worst_name']}) for up to "
             f"{dur:g} s, worst {100 * worst:.3g}% of bound")
    errors = [r for r in group if r["error"]]
    if errors:
        note(f"{first['label']}: {errors[0]['error']}")
    done = [r for r in group if r["completed"]]
    if len(done) < len(group):
        note(f"{first['label']}: {len(group) - len(done)} of {len(group)} runs did not reach the target")
    name = first["label"] + "".join(f"^{m}" for m in marks)
    if not done:
        return [name, "N/A", "N/A", "N/A", _ms(group)]
    t = np.mean([r["T_chg_s"] for r in done])
    e = np.mean([r["energy_kJ"] for r in done])
    eff = np.mean([r["efficiency"] for r in done])
    return [name, f"{t:.2f}" if len(done) > 1 else f"{t:g}", f"{e:.2f}", f"{100 * eff:.2f}%",
            _ms(group)]


def _ms(group) -> str:
    ms = [r["T_comp_ms"] for r in group if r["T_comp_ms"] is not None]
    return f"{np.mean(ms):.1f}" if ms else "N/A"


def export_table(records: Sequence, title: Optional[str] = None) -> tuple[str, list[dict]]:
    """Render run summaries as a text table; returns ``(text, rows)``.

    ``records`` may hold :class:`RunResult` objects or summary dicts.  Runs
    sharing a label (Monte-Carlo trials) are averaged into one row.
    """
    recs = [summary_record(r) if isinstance(r, RunResult) else r for r in records]
    groups: dict[str, list[dict]] = {}
    for r in recs:
        groups.setdefault(r["label"], []).append(r)
    notes: list[str] = []
    header = ["Strategy", "T_chg [s]", "Energy [kJ]", "Efficiency [%]", "T_comp [ms]"]
    body = [_row(g, notes) for g in groups.values()]
    widths = [max(len(row[j]) for row in [header] + body) for j in range(len(header))]

    def line(cells):
        return "  ".join(c.ljust(w) if j == 0 else c.rjust(w)
                         for j, (c, w) in enumerate(zip(cells, widths))).rstrip()

    out = [title] if title else []
    out += [line(header), line(["-" * w for w in widths])] + [line(r) for r in body]
    if notes:
        out.append("")
        out += [f"^{chr(ord('a') + k)} {text}" for k, text in enumerate(notes)]
    rows = [dict(zip(header, r)) for r in body]
    return "\n".join(out) + "\n", rows
