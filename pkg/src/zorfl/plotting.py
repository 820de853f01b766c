"""Optional PNG figures written next to the CSV outputs."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    # same write-then-rename discipline as the CSV writers
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_traces(series, path, title="", field="f_gap"):
    """``series`` maps a label to a list of trace records."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, records in series.items():
        xs = [r.round for r in records]
        ys = [max(getattr(r, field), 1e-300) for r in records]
        ax.semilogy(xs, ys, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel(field)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if series:
        ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_loglog(series, path, xlabel, ylabel, title=""):
    """``series`` maps a label to ``(xs, ys)``."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (xs, ys) in series.items():
        ax.loglog(xs, [max(y, 1e-300) for y in ys], "o-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if series:
        ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)
