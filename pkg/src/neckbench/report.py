"""Report rendering: delimited outputs plus matplotlib figures.

Every report path writes machine-readable CSV/JSON next to a rendered PNG so
runs can be diffed and eyeballed without re-running anything.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = [
    "write_loss_curve",
    "plot_loss_curve",
    "write_compare_report",
    "plot_compare_bars",
    "write_eval_report",
    "plot_visibility_trace",
    "compare_table",
]


def _ensure_dir(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_loss_curve(curve, csv_path) -> None:
    _ensure_dir(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(curve):
            writer.writerow([i, repr(float(loss))])


def plot_loss_curve(curve, png_path, title="training loss") -> None:
    _ensure_dir(png_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(range(len(curve)), curve, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def compare_table(result) -> str:
    """Human-readable success table in the shape of the paper's comparison."""
    lines = [
        f"{'Task':10s} {'Actuated':>9s} {'Static':>9s}",
        "-" * 30,
    ]
    for row in result.rows():
        lines.append(
            f"{row['task']:10s} {row['actuated']*100:8.1f}% {row['static']*100:8.1f}%")
    d = result.disambiguation
    if d.get("successes"):
        frac = d["matched_only"] / d["successes"]
        lines.append("")
        lines.append(f"task disambiguation: {d['matched_only']}/{d['successes']} "
                     f"successes fired only the matching goal ({frac*100:.0f}%)")
    return "\n".join(lines)


def write_compare_report(result, out_dir) -> dict:
    """CSV + JSON + bar figure; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "compare.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "actuated_success", "static_success", "trials"])
        for row in result.rows():
            writer.writerow([row["task"], repr(row["actuated"]), repr(row["static"]),
                             result.trials])
    json_path = os.path.join(out_dir, "compare.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({
            "trials": result.trials,
            "rows": result.rows(),
            "disambiguation": result.disambiguation,
        }, fh, indent=2)
        fh.write("\n")
    png_path = os.path.join(out_dir, "compare.png")
    plot_compare_bars(result, png_path)
    return {"csv": csv_path, "json": json_path, "png": png_path}


def plot_compare_bars(result, png_path) -> None:
    _ensure_dir(png_path)
    tasks = [row["task"] for row in result.rows()]
    act = [row["actuated"] * 100 for row in result.rows()]
    stat = [row["static"] * 100 for row in result.rows()]
    x = range(len(tasks))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - width / 2 for i in x], act, width, label="Actuated", color="#2c7fb8")
    ax.bar([i + width / 2 for i in x], stat, width, label="Static", color="#bdbdbd")
    ax.set_xticks(list(x))
    ax.set_xticklabels(tasks)
    ax.set_ylabel("success rate [%]")
    ax.set_ylim(0, 105)
    ax.set_title(f"actuated neck vs static wide-angle ({result.trials} trials/task)")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def write_eval_report(rows, out_dir, summary: dict | None = None) -> dict:
    """Per-trial rows to CSV/JSON plus a success/visibility figure."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "eval.csv")
    fieldnames = ["task", "seed", "success", "ticks", "pregrasp_visibility"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fieldnames})
    json_path = os.path.join(out_dir, "eval.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"rows": rows, "summary": summary or {}}, fh, indent=2)
        fh.write("\n")
    png_path = os.path.join(out_dir, "eval.png")
    plot_visibility_trace(rows, png_path)
    return {"csv": csv_path, "json": json_path, "png": png_path}


def plot_visibility_trace(rows, png_path) -> None:
    _ensure_dir(png_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(rows))
    vis = [row["pregrasp_visibility"] for row in rows]
    wins = [1.0 if row["success"] else 0.0 for row in rows]
    ax.bar(xs, vis, 0.8, label="pre-grasp target visibility", color="#41b6c4")
    ax.plot(xs, wins, "k.", markersize=10, label="success")
    ax.set_xlabel("trial")
    ax.set_ylabel("fraction / outcome")
    ax.set_ylim(-0.05, 1.1)
    ax.legend(loc="lower right")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
