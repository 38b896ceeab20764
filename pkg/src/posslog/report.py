"""Result emission: delimited evaluation tables, JSON summaries, and the
corresponding figures rendered to files next to them.
"""

from __future__ import annotations

import csv
import io
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_CSV_FIELDS = (
    "evidence_size",
    "theory_error",
    "baseline_error",
    "diff",
    "cumulative_diff",
    "cutoff_sat_calls",
    "total_sat_calls",
    "wall_ms",
)


def eval_csv_text(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for row in report.rows:
        writer.writerow([
            row.evidence_size,
            f"{row.theory_error:.6f}",
            f"{row.baseline_error:.6f}",
            f"{row.diff:.6f}",
            f"{row.cumulative_diff:.6f}",
            f"{row.cutoff_sat_calls:.4f}",
            f"{row.total_sat_calls:.4f}",
            f"{row.wall_ms:.3f}",
        ])
    return buf.getvalue()


def eval_json_text(report) -> str:
    return json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"


def write_eval_outputs(report, out_dir, stem="eval"):
    """CSV + JSON summary + rendered figures; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w") as fh:
        fh.write(eval_csv_text(report))
    paths["csv"] = csv_path
    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(json_path, "w") as fh:
        fh.write(eval_json_text(report))
    paths["json"] = json_path
    paths.update(render_eval_figures(report, out_dir, stem))
    return paths


def render_eval_figures(report, out_dir, stem="eval"):
    sizes = [r.evidence_size for r in report.rows]
    paths = {}

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [r.cumulative_diff for r in report.rows],
            marker="+", color="black")
    ax.axhline(0.0, linewidth=0.6, color="gray")
    ax.set_xlabel("Evidence size")
    ax.set_ylabel("Cumulative Hamming-error difference (baseline - theory)")
    ax.set_title(f"Cumulative error difference over {report.trials} trials")
    fig.tight_layout()
    ched_path = os.path.join(out_dir, f"{stem}_ched.png")
    fig.savefig(ched_path, dpi=150)
    plt.close(fig)
    paths["ched_png"] = ched_path

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [r.theory_error for r in report.rows],
            marker="o", markersize=3, label="learned theory")
    ax.plot(sizes, [r.baseline_error for r in report.rows],
            marker="s", markersize=3, label="all-false baseline")
    ax.set_xlabel("Evidence size")
    ax.set_ylabel("Mean Hamming error")
    ax.legend()
    fig.tight_layout()
    err_path = os.path.join(out_dir, f"{stem}_errors.png")
    fig.savefig(err_path, dpi=150)
    plt.close(fig)
    paths["errors_png"] = err_path

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [r.cutoff_sat_calls for r in report.rows],
            marker="x", markersize=3, label="cutoff search")
    ax.plot(sizes, [r.total_sat_calls for r in report.rows],
            marker=".", markersize=3, label="total per inference")
    ax.axhline(report.sat_call_bound, linewidth=0.6, color="gray",
               linestyle="--", label="cutoff bound")
    ax.set_xlabel("Evidence size")
    ax.set_ylabel("SAT calls")
    ax.legend()
    fig.tight_layout()
    sat_path = os.path.join(out_dir, f"{stem}_satcalls.png")
    fig.savefig(sat_path, dpi=150)
    plt.close(fig)
    paths["satcalls_png"] = sat_path
    return paths
