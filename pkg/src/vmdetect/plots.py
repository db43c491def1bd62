"""SVG rendering of ROC curves and sweep summaries."""

from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import RocCurve, SweepResult  # noqa: E402

log = logging.getLogger(__name__)

# fixed ids and no timestamp, so identical inputs give identical bytes
_RC = {"svg.hashsalt": "vmdetect", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": None}


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "curve"


def plot_roc(curve: RocCurve, path, title: str = "") -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(curve.fpr, curve.tpr, lw=1.5, label=f"AUC = {curve.auc:.3f}")
        ax.plot([0, 1], [0, 1], ls=":", c="grey", lw=1)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_META)
        plt.close(fig)
    return Path(path)


def plot_sweep(result: SweepResult, path) -> Path:
    best = result.best_cells()
    labels = [f"{c.method}\n{c.attack}\nB={c.block}, {c.param:g}" for c in best]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(best)), 4))
        ax.bar(range(len(best)), [c.auc for c in best], color="tab:blue")
        ax.axhline(0.5, ls=":", c="grey", lw=1)
        ax.set_xticks(range(len(best)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_ylim(0, 1)
        ax.set_ylabel("best AUC")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_META)
        plt.close(fig)
    return Path(path)


def emit_plots(curves: Mapping[str, RocCurve], sweep: SweepResult | None, out_dir) -> list[Path]:
    """Write ``roc_<name>.svg`` and ``roc_<name>.csv`` per curve, plus sweep files.

    Returns the written paths; an empty input writes nothing.
    """
    out = Path(out_dir)
    written: list[Path] = []
    if not curves and (sweep is None or not sweep.cells):
        log.info("nothing to plot")
        return written
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, curve in curves.items():
            stem = out / f"roc_{_slug(name)}"
            written.append(plot_roc(curve, stem.with_suffix(".svg"), title=name))
            curve.to_csv(stem.with_suffix(".csv"))
            written.append(stem.with_suffix(".csv"))
        if sweep is not None and sweep.cells:
            written.append(plot_sweep(sweep, out / "sweep.svg"))
            sweep.to_csv(out / "sweep.csv")
            written.append(out / "sweep.csv")
    except OSError as exc:
        raise OSError(f"cannot write plots under {out}: {exc}") from exc
    return written
