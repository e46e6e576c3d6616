"""Static figures for the CLI report paths."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def qn_figure(z, first, second, oracle=None, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(z, first, label="first order", color="0.5", ls="--")
    ax.plot(z, second, label="second order", color="C0")
    if oracle is not None:
        ax.plot(z, oracle, label="oracle", color="C3", ls=":")
    ax.set_xlabel("z")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def surface_figure(z, x, values, title=""):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    cs = ax.contourf(z, x, values, levels=20, cmap="viridis")
    fig.colorbar(cs, ax=ax)
    ax.set_xlabel("z")
    ax.set_ylabel("x")
    ax.set_title(title)
    fig.tight_layout()
    return fig


def error_figure(rows, title=""):
    """Log-log error curves, one line per (f, order)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r["f"], r["order"]) for r in rows})
    for i, (f, order) in enumerate(keys):
        sel = [r for r in rows if r["f"] == f and r["order"] == order]
        n = np.array([r["n"] for r in sel], dtype=float)
        e = np.array([max(r["error"], 1e-16) for r in sel])
        ax.loglog(n, e, marker="o", ls="-" if order == 2 else "--", color="C%d" % (i // 2),
                  label="%s, order %d" % (f, order))
    ax.set_xlabel("n")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return fig


def residual_figure(rows, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, R in enumerate(sorted({r["R"] for r in rows})):
        sel = [r for r in rows if r["R"] == R]
        n = [r["n"] for r in sel]
        ax.errorbar(n, [r["rms"] for r in sel], yerr=[2 * r["se"] for r in sel], marker="o",
                    capsize=3, color="C%d" % i, label="R = %d" % R)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("n")
    ax.set_ylabel("scaled RMS residual")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def close(fig):
    plt.close(fig)
