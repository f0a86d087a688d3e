"""Aggregate fold records into accuracy/gain tables."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

from .classifiers import FoldReport

REPORT_FIELDS = (
    "target",
    "classifier",
    "kind",
    "delta",
    "mix_percent",
    "n_folds",
    "mean",
    "ci95",
    "baseline_mean",
    "gain",
)
NO_RUNS = "no runs"


def _condition(kind: str, delta, mix: int) -> tuple:
    return (kind, -1.0 if delta is None else float(delta), int(mix))


def aggregate(records: list[dict], metric: str = "balanced_accuracy") -> list[dict]:
    """One row per (target, classifier, condition); gains are recomputed here."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        key = (r["target"], r["classifier"], r["kind"], r["delta"], r["mix_percent"])
        groups[key].append(float(r[metric]))
    baselines = {
        (t, c): FoldReport(v).mean for (t, c, kind, _, _), v in groups.items() if kind == "real"
    }
    rows = []
    for (target, clf, kind, delta, mix), values in groups.items():
        base = baselines.get((target, clf))
        report = FoldReport(values, baseline_mean=base)
        rows.append(
            {
                "target": target,
                "classifier": clf,
                "kind": kind,
                "delta": delta,
                "mix_percent": mix,
                "n_folds": len(values),
                "mean": report.mean,
                "ci95": report.ci95,
                "baseline_mean": base,
                "gain": report.gain,
            }
        )
    rows.sort(key=lambda r: (r["target"], r["classifier"], _condition(r["kind"], r["delta"], r["mix_percent"])))
    return rows


def summarize(records: list[dict], metric: str = "balanced_accuracy") -> dict:
    """Nested ``{target: {classifier: {condition: stats}}}`` shaped like the published tables."""
    out: dict = {}
    for r in aggregate(records, metric):
        label = condition_label(r["kind"], r["delta"], r["mix_percent"])
        out.setdefault(r["target"], {}).setdefault(r["classifier"], {})[label] = {
            "mean": r["mean"],
            "ci95": r["ci95"],
            "gain": r["gain"],
            "n_folds": r["n_folds"],
        }
    return out


def condition_label(kind: str, delta, mix: int) -> str:
    if kind == "real":
        return "real"
    if kind == "noise-control":
        return f"noise mix={mix}%"
    if kind == "synthetic" and delta is not None:
        return f"delta={delta:g} mix={mix}%"
    return f"{kind} mix={mix}%"


def _fmt(x, nd=2) -> str:
    return "n/a" if x is None else f"{x:.{nd}f}"


def render_tables(rows: list[dict]) -> str:
    """Markdown tables, one per target; the best gain in each row is bold."""
    if not rows:
        return NO_RUNS
    by_target: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        by_target[r["target"]].append(r)
    chunks = []
    for target, trows in by_target.items():
        conds = sorted(
            {_condition(r["kind"], r["delta"], r["mix_percent"]) for r in trows if r["kind"] != "real"}
        )
        header = ["classifier", "real"]
        for kind, delta, mix in conds:
            label = condition_label(kind, None if delta < 0 else delta, mix)
            header += [label, "gain"]
        lines = [f"### {target}", "", "| " + " | ".join(header) + " |",
                 "|" + "---|" * len(header)]
        for clf in sorted({r["classifier"] for r in trows}):
            cells = {_condition(r["kind"], r["delta"], r["mix_percent"]): r
                     for r in trows if r["classifier"] == clf}
            real = next((r for r in trows if r["classifier"] == clf and r["kind"] == "real"), None)
            gains = [cells[c]["gain"] for c in conds if c in cells and cells[c]["gain"] is not None]
            best = max(gains) if gains else None
            line = [clf, "n/a" if real is None else f"{real['mean']:.2f} ± {real['ci95']:.2f}"]
            for c in conds:
                r = cells.get(c)
                if r is None:
                    line += ["", ""]
                    continue
                g = _fmt(r["gain"])
                if best is not None and r["gain"] is not None and round(r["gain"], 2) == round(best, 2):
                    g = f"**{g}**"
                line += [f"{r['mean']:.2f} ± {r['ci95']:.2f}", g]
            lines.append("| " + " | ".join(line) + " |")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks)


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(
                {
                    **r,
                    "delta": "" if r["delta"] is None else r["delta"],
                    "mean": f"{r['mean']:.2f}",
                    "ci95": f"{r['ci95']:.2f}",
                    "baseline_mean": "" if r["baseline_mean"] is None else f"{r['baseline_mean']:.2f}",
                    "gain": "n/a" if r["gain"] is None else f"{r['gain']:.2f}",
                }
            )


def cmd_report(results_dir, metric: str = "balanced_accuracy", echo=print) -> list[dict]:
    """Write ``report.md``, ``report.csv`` and ``summary.json`` for a results directory."""
    from .experiment import read_records

    results_dir = Path(results_dir)
    path = results_dir / "records.csv"
    records = read_records(path) if path.exists() else []
    if not records:
        echo(NO_RUNS)
        return []
    rows = aggregate(records, metric)
    text = render_tables(rows)
    (results_dir / "report.md").write_text(text + "\n")
    write_report_csv(rows, results_dir / "report.csv")
    (results_dir / "summary.json").write_text(json.dumps(summarize(records, metric), indent=2))
    echo(text)
    return rows
