"""Figures written next to the CSV outputs of ``fit`` and ``batch-fit``."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .models import unit_affine  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fit(result, path, data=None):
    """Potential fit, hidden channels, and parameter evolution for one fit."""
    rec = result.reconstruction
    state = result.params.STATE
    trainable = sorted(result.params.trainable) or list(result.params.FIELDS)
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))

    ax = axes[0]
    ax.plot(rec["t"], rec[state[0]], color="C0", label="network")
    if data is not None and state[0] in data.values:
        ax.plot(data.t, data.values[state[0]], ".", color="0.4", ms=3, label="data")
    ax.set_xlabel("t")
    ax.set_ylabel(state[0])
    ax.set_title("A  membrane potential")
    ax.legend(frameon=False)

    ax = axes[1]
    for k, name in enumerate(state[1:], start=1):
        ax.plot(rec["t"], rec[name], color=f"C{k}", label=name)
    ax.set_xlabel("t")
    ax.set_title("B  hidden components")
    ax.legend(frameon=False)

    ax = axes[2]
    epochs = [row["epoch"] for row in result.lambda_trajectory]
    for k, name in enumerate(trainable):
        ax.plot(epochs, [row[name] for row in result.lambda_trajectory], color=f"C{k}", label=name)
    ax.set_xlabel("epoch")
    ax.set_title("C  parameters")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_parameter_spread(fitted, labels, path):
    """One strip per parameter: value of each fit, with the mean marked."""
    n = len(labels)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 3.2), squeeze=False)
    for ax, (label, field) in zip(axes[0], labels.items()):
        values = np.array([f[field] for f in fitted])
        ax.plot(np.zeros_like(values), values, "o", alpha=0.7)
        ax.axhline(values.mean(), color="k", lw=0.8)
        ax.set_xticks([])
        ax.set_title(label)
    _save(fig, path)


def plot_segment_fits(pairs, path):
    """Data and network for consecutive spikes, each rescaled to [-1, 1]."""
    fig, ax = plt.subplots(figsize=(9, 3))
    offset = 0.0
    for t_data, v_data, t_fit, v_fit in pairs:
        shift, scale = unit_affine(v_data)
        ax.plot(t_data + offset, (v_data - shift) / scale, ".", color="0.5", ms=2)
        ax.plot(t_fit + offset, (v_fit - shift) / scale, color="C0", lw=1)
        offset += t_data[-1] - t_data[0]
    ax.set_xlabel("t (concatenated)")
    ax.set_ylabel("rescaled potential")
    _save(fig, path)
