"""Figures: t-SNE of real vs synthetic epochs, paired overlays and mix sweeps."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from sklearn.manifold import TSNE  # noqa: E402

from .data import DataError, LabeledDataset, load_dataset  # noqa: E402
from .report import aggregate  # noqa: E402

PLOT_KINDS = ("tsne", "overlay", "sweep")


def tsne_embedding(real, synthetic, n: int | None = None, seed: int = 0, perplexity: float = 30.0):
    """Joint 2-D embedding of ``n`` real and ``n`` synthetic epochs.

    Returns ``(embedding, is_synthetic)``; rows are real epochs first.
    """
    real = np.asarray(real, dtype=np.float64).reshape(len(real), -1)
    synthetic = np.asarray(synthetic, dtype=np.float64).reshape(len(synthetic), -1)
    if real.shape[1] != synthetic.shape[1]:
        raise ValueError("real and synthetic epochs differ in shape")
    n = min(len(real), len(synthetic)) if n is None else int(n)
    if n < 2 or n > min(len(real), len(synthetic)):
        raise ValueError(f"cannot draw {n} epochs from each set")
    rng = np.random.default_rng(seed)
    a = real[rng.choice(len(real), n, replace=False)]
    b = synthetic[rng.choice(len(synthetic), n, replace=False)]
    data = np.concatenate([a, b])
    perplexity = min(perplexity, (len(data) - 1) / 3.0)
    emb = TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed).fit_transform(data)
    return emb, np.r_[np.zeros(n, bool), np.ones(n, bool)]


def plot_tsne(real, synthetic, path, n=None, seed: int = 0, title: str = "t-SNE") -> np.ndarray:
    emb, is_syn = tsne_embedding(real, synthetic, n=n, seed=seed)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(*emb[~is_syn].T, s=6, c="tab:blue", label="real", alpha=0.7)
    ax.scatter(*emb[is_syn].T, s=6, c="tab:red", label="synthetic", alpha=0.7)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return emb


def plot_overlay(real: LabeledDataset, synthetic: dict, path, index: int = 0, channel: int = 0) -> None:
    """Real epoch (blue) against its synthetic counterpart (red), one panel per delta.

    ``synthetic`` maps delta to a synthetic dataset whose ``source_index``
    points into ``real``.
    """
    if not synthetic:
        raise DataError("no synthetic datasets to overlay")
    fig, axes = plt.subplots(len(synthetic), 1, figsize=(8, 2.2 * len(synthetic)), squeeze=False)
    t = np.arange(real.epoch_shape[1]) / real.sample_rate
    for ax, (delta, syn) in zip(axes[:, 0], sorted(synthetic.items())):
        if syn.source_index is None:
            raise DataError("synthetic dataset lacks source indices")
        i = min(index, len(syn) - 1)
        ax.plot(t, real.epochs[syn.source_index[i], channel], color="tab:blue", label="real")
        ax.plot(t, syn.epochs[i, channel], color="tab:red", label="synthetic", alpha=0.8)
        ax.set_ylabel(f"delta={delta:g}")
    axes[0, 0].legend(loc="upper right")
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def sweep_series(records: list[dict], metric: str = "balanced_accuracy", delta: float = 0.01,
                 classifier: str | None = None) -> dict:
    """``{(target, classifier): {"mix": [...], "mean": [...], "baseline": b}}`` for one delta."""
    series: dict = defaultdict(lambda: {"mix": [], "mean": [], "baseline": None})
    for row in aggregate(records, metric):
        if classifier is not None and row["classifier"] != classifier:
            continue
        key = (row["target"], row["classifier"])
        if row["kind"] == "real":
            series[key]["baseline"] = row["mean"]
        elif row["kind"] == "synthetic" and row["delta"] is not None and abs(row["delta"] - delta) < 1e-12:
            series[key]["mix"].append(row["mix_percent"])
            series[key]["mean"].append(row["mean"])
    return {k: v for k, v in series.items() if v["mix"]}


def plot_sweep(records: list[dict], path, metric: str = "balanced_accuracy", delta: float = 0.01,
               classifier: str | None = None) -> dict:
    series = sweep_series(records, metric, delta, classifier)
    if not series:
        raise DataError(f"no synthetic records for delta={delta}")
    fig, ax = plt.subplots(figsize=(7, 4))
    for (target, clf), s in sorted(series.items()):
        order = np.argsort(s["mix"])
        (line,) = ax.plot(np.asarray(s["mix"])[order], np.asarray(s["mean"])[order],
                          marker="o", label=f"{target} / {clf}")
        if s["baseline"] is not None:
            ax.axhline(s["baseline"], linestyle=":", color=line.get_color())
    ax.set_xlabel("synthetic data (% of real)")
    ax.set_ylabel(f"{metric.replace('_', ' ')} (%)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return series


def cmd_plot(results_dir, kind: str, dataset=None, synthetic=(), out=None, seed: int = 0,
             metric: str = "balanced_accuracy", delta: float = 0.01, n: int | None = 500) -> Path:
    """Write one figure into ``results_dir`` (or ``out``) and return its path."""
    from .experiment import read_records

    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    results_dir = Path(results_dir)
    path = Path(out) if out else results_dir / f"{kind}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    if kind == "sweep":
        rec = results_dir / "records.csv"
        if not rec.exists():
            raise DataError(f"no records in {results_dir}")
        plot_sweep(read_records(rec), path, metric=metric, delta=delta)
        return path
    if dataset is None or not synthetic:
        raise DataError(f"{kind} needs a real dataset and at least one synthetic dataset")
    real = load_dataset(dataset)
    syns = [load_dataset(p) for p in synthetic]
    if kind == "tsne":
        train = real.part("train") if real.split is not None else real
        m = None if n is None else min(n, len(train), len(syns[0]))
        plot_tsne(train.epochs, syns[0].epochs, path, n=m, seed=seed)
    else:
        plot_overlay(real, {float(s.meta.get("delta", i)): s for i, s in enumerate(syns)}, path)
    return path
