"""Rendering of run artifacts into tidy CSV tables and figures.

A run directory (one manifest plus the files it lists) is turned into
plot-ready delimited output, and unless figures are disabled, PNGs of
the same series rendered with the non-interactive backend.  Renderers
are keyed by artifact: the baseline accuracy curve, the layerwise loss
trace, and lemma-suite verdicts.  Unknown artifacts are skipped and
reported, not errors: a run directory may hold anything.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import InvalidRange


def _write_rows(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def render_baseline_curve(
    curve_csv: Path, out_dir: Path, figures: bool = True, tag: str = ""
) -> list[Path]:
    """iteration,accuracy series -> tidy CSV (+ PNG)."""
    rows = []
    with open(curve_csv) as fh:
        for rec in csv.DictReader(fh):
            rows.append([tag, int(rec["iteration"]), float(rec["accuracy"])])
    written = [
        _write_rows(
            out_dir / "baseline_tidy.csv", ["run", "iteration", "accuracy"], rows
        )
    ]
    if figures:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot([r[1] for r in rows], [r[2] for r in rows], marker="o")
        ax.set_xlabel("iteration")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0.4, 1.05)
        ax.grid(True, alpha=0.3)
        ax.set_title(tag or curve_csv.stem)
        fig.tight_layout()
        out = out_dir / "baseline_curve.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


def render_losses(
    losses_csv: Path, out_dir: Path, figures: bool = True
) -> list[Path]:
    """layer,step,loss series -> tidy CSV (+ PNG, one line per layer)."""
    rows = []
    curves: dict[int, list[float]] = {}
    with open(losses_csv) as fh:
        for rec in csv.DictReader(fh):
            li, t, v = int(rec["layer"]), int(rec["step"]), float(rec["loss"])
            rows.append([li, t, v])
            curves.setdefault(li, []).append(v)
    written = [
        _write_rows(out_dir / "losses_tidy.csv", ["layer", "step", "loss"], rows)
    ]
    if figures and curves:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for li in sorted(curves, reverse=True):
            ax.plot(curves[li], label=f"layer {li}")
        ax.set_xlabel("step")
        ax.set_ylabel("pooled loss")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        out = out_dir / "losses.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


def render_verdicts(
    verdicts_json: Path, out_dir: Path, figures: bool = True
) -> list[Path]:
    """Lemma margins -> tidy CSV (+ PNG strip chart by lemma)."""
    verdicts = json.loads(Path(verdicts_json).read_text())
    rows = [
        [v["lemma"], json.dumps(v["params"], sort_keys=True), v["margin"], v["pass"]]
        for v in verdicts
    ]
    written = [
        _write_rows(
            out_dir / "verdicts_tidy.csv", ["lemma", "params", "margin", "pass"], rows
        )
    ]
    if figures and verdicts:
        lemmas = sorted({v["lemma"] for v in verdicts})
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for x, lemma in enumerate(lemmas):
            ms = [v["margin"] for v in verdicts if v["lemma"] == lemma]
            ok = all(v["pass"] for v in verdicts if v["lemma"] == lemma)
            ax.scatter([x] * len(ms), ms, s=14, color="tab:green" if ok else "tab:red")
        ax.set_xticks(range(len(lemmas)))
        ax.set_xticklabels(lemmas, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("margin")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        out = out_dir / "verdict_margins.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


RENDERERS = {
    "baseline_curve.csv": render_baseline_curve,
    "losses.csv": render_losses,
    "verdicts.json": render_verdicts,
}


def render_run_dir(
    run_dir: str | Path, out_dir: str | Path | None = None, figures: bool = True
) -> dict:
    """Render every recognized artifact in a run directory.

    Returns {"written": [...], "skipped": [...]}; raises only when the
    directory itself is missing.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise InvalidRange(f"{run_dir} is not a directory")
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    skipped: list[str] = []
    for item in sorted(run_dir.iterdir()):
        renderer = RENDERERS.get(item.name)
        if renderer is None:
            if item.name not in ("manifest.json",) and item.is_file():
                skipped.append(item.name)
            continue
        if renderer is render_baseline_curve:
            files = renderer(item, out, figures, tag=run_dir.name)
        else:
            files = renderer(item, out, figures)
        written.extend(str(f) for f in files)
    return {"written": written, "skipped": skipped}
