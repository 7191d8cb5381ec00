"""Markdown summaries and CSV plot series for a sweep directory."""

from __future__ import annotations

import csv
from pathlib import Path

from .io import atomic_write_text, read_json, write_csv
from .trainer import Schedule, ratio_nodes, schedule_at


def _fmt(v, spec: str = ".3f") -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return format(v, spec)
    return str(v)


def sweep_table(sweep: dict) -> str:
    rows = ["| Seed | Basis | Coefficient | p | Onset | Sparse | Frozen | Span | gamma | sigma_H | C_gate |",
            "|---|---|---|---|---|---|---|---|---|---|---|"]
    for o in sweep["seeds"]:
        m = o.get("milestones") or {}
        rows.append("| " + " | ".join([
            str(o["seed"]), o.get("label") or "-", _fmt(o.get("calibrated_coefficient")),
            _fmt(o.get("kepler_exponent")), _fmt(m.get("onset")), _fmt(m.get("sparse")),
            _fmt(m.get("frozen")), _fmt(m.get("span")), _fmt(m.get("growth_rate")),
            _fmt(o.get("sigma_H"), ".4f"), _fmt(o.get("C_gate"))]) + " |")
    return "\n".join(rows)


def seed_spread(sweep: dict) -> str:
    """Mean and sample spread across seeds of the calibrated coefficient and exponent."""
    lines = []
    for key, name in (("calibrated_coefficient", "coefficient"), ("kepler_exponent", "p")):
        vals = [o[key] for o in sweep["seeds"] if o.get(key) is not None]
        if len(vals) >= 2:
            mean = sum(vals) / len(vals)
            sd = (sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)) ** 0.5
            lines.append(f"{name}: {mean:.4f} +/- {sd:.4f} over {len(vals)} seeds")
    return "\n".join(lines)


def verdict_table(sweep: dict) -> str:
    v = sweep.get("verdict")
    if not v:
        return "No seed produced a conservation score."
    labels = sweep.get("labels") or []
    rows = ["| Selected basis | Seeds | Mean sigma_H |", "|---|---|---|"]
    for k, mean in sorted(v["group_means"].items(), key=lambda kv: kv[1]):
        name = labels[int(k)] if labels else k
        rows.append(f"| {name} | {v['group_sizes'][k]} | {mean:.4f} |")
    margin = "undefined (single group)" if v["margin"] is None else f"{v['margin']:.2f}"
    tie = " (tie broken by index)" if v.get("tie") else ""
    return "\n".join(rows) + f"\n\nVerdict: **{v['label']}**{tie}, margin {margin}."


def sindy_table(doc: dict) -> str:
    rows = ["| Mode | Stride | Bootstraps | Rate | Coefficient range | Wall time (s) |",
            "|---|---|---|---|---|---|"]
    for run in doc["runs"]:
        lo, hi = run["coefficient_range"]
        rows.append(f"| {run['mode']} | {run['stride']} | {run['n_boot']} | "
                    f"{run['identified']}/{run['n_seeds']} | {lo:.2f} to {hi:.2f} | "
                    f"{run['max_wall_time']:.3f} |")
    return "\n".join(rows)


def _read_rows(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def schedule_series(schedule: Schedule):
    nodes = {}
    for epoch, label in ratio_nodes(schedule):
        nodes.setdefault(epoch, []).append(label)
    for epoch in range(1, schedule.total_epochs + 1):
        _, alpha_E, tau = schedule_at(schedule, epoch)
        yield [epoch, alpha_E, tau, alpha_E / tau, " ".join(nodes.get(epoch, []))]


def build_report(sweep_dir, out_dir=None) -> Path:
    """Write ``report.md`` plus loss, gate and schedule CSV sidecars."""
    sweep_dir = Path(sweep_dir)
    out_dir = Path(out_dir) if out_dir else sweep_dir
    sweep_path = sweep_dir / "sweep.json"
    if not sweep_path.exists():
        raise FileNotFoundError(f"no sweep.json in {sweep_dir}")
    doc = read_json(sweep_path)
    sweep = doc["result"]
    parts = ["# Sweep report", "", sweep_table(sweep), ""]
    spread = seed_spread(sweep)
    if spread:
        parts += [spread, ""]
    parts += ["## Conservation selection", "", verdict_table(sweep)]

    loss_rows, gate_rows = [], []
    gate_header = None
    for o in sweep["seeds"]:
        log_path = sweep_dir / f"seed_{o['seed']}" / "trainlog.csv"
        if not log_path.exists():
            continue
        for row in _read_rows(log_path):
            loss_rows.append([o["seed"]] + [row[k] for k in
                                             ("epoch", "traj", "accel", "sym", "comp", "arch",
                                              "total", "alpha_E", "tau")])
            gates = [k for k in row if k.startswith("gate_")]
            gate_header = gate_header or gates
            gate_rows.append([o["seed"], row["epoch"], row["selectivity"], row["c_gate"]]
                             + [row[k] for k in gates])
    if loss_rows:
        write_csv(out_dir / "loss_curves.csv", ["seed", "epoch", "traj", "accel", "sym", "comp",
                                                "arch", "total", "alpha_E", "tau"], loss_rows)
        write_csv(out_dir / "gate_evolution.csv",
                  ["seed", "epoch", "selectivity", "c_gate"] + gate_header, gate_rows)
    schedule = Schedule(**doc["run_config"]["train"]["schedule"])
    write_csv(out_dir / "schedule_phase.csv", ["epoch", "alpha_E", "tau", "ratio", "nodes"],
              schedule_series(schedule))

    sindy_path = sweep_dir / "sindy.json"
    if sindy_path.exists():
        parts += ["", "## Sparse regression baseline", "", sindy_table(read_json(sindy_path)["result"])]
    parts += ["", "Sidecars: loss_curves.csv, gate_evolution.csv, schedule_phase.csv.", ""]
    return atomic_write_text(out_dir / "report.md", "\n".join(parts))
