"""Figures for the benchmark and chunk-size sweep, written straight to image files."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def runtime_figure(result: dict, path: str | Path) -> Path:
    """Log-log median seconds per sentence against length, one line per system."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    lengths = result["lengths"]
    for name, table in result["seconds"].items():
        ys = [table[L] * 1000 for L in lengths]
        slope = result["exponents"][name]
        ax.plot(lengths, ys, marker="o", label=f"{name} (slope {slope:.2f})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sentence length (tokens)")
    ax.set_ylabel("median time per sentence (ms)")
    ax.set_xticks(lengths)
    ax.set_xticklabels([str(L) for L in lengths])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def chunk_sweep_figure(rows: Sequence[dict], path: str | Path) -> Path:
    """F1 and average latency against chunk size."""
    path = Path(path)
    sizes = [r["chunk"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(sizes, [r["f1"] for r in rows], marker="o", color="tab:blue", label="F1")
    ax.set_xlabel("chunk size")
    ax.set_ylabel("F1", color="tab:blue")
    ax.set_xticks(sizes)
    ax2 = ax.twinx()
    ax2.plot(sizes, [r["latency"] for r in rows], marker="s", color="tab:orange", label="latency")
    ax2.set_ylabel("average latency (tokens)", color="tab:orange")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
