"""Optional PNG figures for the CLI (``--plot``).  CSV output stays the contract."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_nullifiers(rows, path, threshold_db: float | None = None):
    """``rows``: dicts with k, kind, var_db, stderr_db."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for kind in sorted({r["kind"] for r in rows}):
        sel = [r for r in rows if r["kind"] == kind]
        ax.errorbar([r["k"] for r in sel], [r["var_db"] for r in sel],
                    yerr=[r["stderr_db"] for r in sel], fmt="o", ms=3, label=kind)
    if threshold_db is not None:
        ax.axhline(threshold_db, color="k", ls="--", lw=1)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("macronode index k")
    ax.set_ylabel("nullifier variance [dB rel. shot noise]")
    ax.legend()
    return _save(fig, path)


def plot_verdicts(verdicts, path):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ks = [v.k for v in verdicts]
    margins = [v.margin_db for v in verdicts]
    colors = ["tab:green" if v.verified else "tab:red" for v in verdicts]
    ax.bar(ks, margins, color=colors)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("macronode index k")
    ax.set_ylabel("worst-case margin [dB]")
    return _save(fig, path)


def plot_spectra(freq_hz, curves: dict, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    f = np.asarray(freq_hz) / 1e6
    for name, y in curves.items():
        ax.plot(f, 10 * np.log10(np.asarray(y) / 0.5), lw=0.8, label=name)
    ax.set_xlabel("frequency [MHz]")
    ax.set_ylabel("noise power [dB rel. shot noise]")
    ax.legend(ncol=2, fontsize=7)
    return _save(fig, path)


def plot_gate_scaling(r_values, excess, predicted, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(r_values, excess, "o", label="simulated")
    ax.semilogy(r_values, predicted, "-", label="predicted")
    ax.set_xlabel("resource squeezing r")
    ax.set_ylabel("max |cov - T V T^T|")
    ax.legend()
    return _save(fig, path)


def plot_trace(trace, path, frame: int = 0, max_samples: int = 2000):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    data = trace.data[frame][:, :max_samples]
    t = np.arange(data.shape[1]) / trace.sample_rate * 1e9
    for c, row in enumerate(data):
        ax.plot(t, row, lw=0.6, label=f"ch{c}")
    ax.set_xlabel("time [ns]")
    ax.set_ylabel("amplitude")
    ax.legend(fontsize=7)
    return _save(fig, path)
