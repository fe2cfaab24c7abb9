"""Static SVG figures with byte-stable output.

Matplotlib writes a date and random element ids into SVG files by default;
both are pinned here so that the same input always gives the same bytes.
Every file starts with a comment naming the input digest and the package
version.
"""
from __future__ import annotations

import io as _io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .exceptions import InvalidArgument  # noqa: E402

__all__ = ["KINDS", "loadings_heatmap", "scree_box", "path_plot", "density_plot", "save_svg"]

KINDS = ("loadings-heatmap", "scree-box", "path", "density")

_RC = {
    "svg.hashsalt": "mspca",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "figure.dpi": 72,
}


def save_svg(fig, path: str, provenance: dict) -> None:
    buf = _io.BytesIO()
    with plt.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    text = buf.getvalue().decode("utf-8")
    note = " ".join(f"{k}={v}" for k, v in provenance.items())
    head, sep, rest = text.partition("?>\n")
    if not sep:
        head, rest = "", text
    else:
        head += sep
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{head}<!-- provenance {note} -->\n{rest}")


def _figure(*args, **kw):
    with plt.rc_context(_RC):
        return plt.subplots(*args, **kw)


def loadings_heatmap(components, variable_names=None, source_names=None):
    """One panel per component, variables down and sources across."""
    comps = [np.asarray(V, dtype=float) for V in components]
    if not comps:
        raise InvalidArgument("no components to plot")
    p, N = comps[0].shape
    fig, axes = _figure(1, len(comps), figsize=(2.2 + 0.35 * N * len(comps), 0.35 * p + 1.5),
                        squeeze=False)
    vmax = max(np.abs(V).max() for V in comps) or 1.0
    for l, (ax, V) in enumerate(zip(axes[0], comps)):
        im = ax.imshow(V, cmap="RdBu_r", vmin=-vmax, vmax=vmax, aspect="auto",
                       interpolation="nearest")
        ax.set_title(f"PC{l + 1}")
        ax.set_xticks(range(N))
        ax.set_xticklabels(source_names or [str(i) for i in range(N)], rotation=90, fontsize=7)
        ax.set_yticks(range(p))
        ax.set_yticklabels(variable_names or [str(j) for j in range(p)] if l == 0 else [], fontsize=7)
    fig.colorbar(im, ax=list(axes[0]), shrink=0.8)
    return fig


def scree_box(per_source):
    """Boxplots of per-source explained variance shares, one box per component."""
    A = np.asarray(per_source, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise InvalidArgument("per-source explained variances must be a non-empty N x k table")
    fig, ax = _figure(figsize=(1.0 + 0.6 * A.shape[1], 3.5))
    ax.boxplot([A[:, l] for l in range(A.shape[1])])
    ax.set_xticks(range(1, A.shape[1] + 1))
    ax.set_xticklabels([f"PC{l + 1}" for l in range(A.shape[1])])
    ax.set_ylabel("explained variance share")
    return fig


def path_plot(rows):
    """Trade-off product against eta, one line per gamma."""
    if not rows:
        raise InvalidArgument("path table is empty")
    fig, ax = _figure(figsize=(5, 3.5))
    gammas = sorted({float(r["gamma"]) for r in rows})
    for g in gammas:
        sel = sorted((float(r["eta"]), float(r["tpo"])) for r in rows if float(r["gamma"]) == g)
        ax.plot([e for e, _ in sel], [t for _, t in sel], marker="o", ms=3, label=f"gamma={g:g}")
    ax.set_xlabel("eta")
    ax.set_ylabel("TPO")
    ax.legend(fontsize=7)
    return fig


def density_plot(columns: dict, bins: int = 30):
    """Normalized histograms of each named column."""
    if not columns:
        raise InvalidArgument("nothing to plot")
    fig, ax = _figure(figsize=(5, 3.5))
    for name, vals in columns.items():
        vals = np.asarray(vals, dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            ax.hist(vals, bins=bins, density=True, histtype="step", label=name)
    ax.set_ylabel("density")
    ax.legend(fontsize=7)
    return fig
