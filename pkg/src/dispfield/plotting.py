"""Report figures: mesh overlays, displacement heat maps and metric charts.

Everything renders off-screen (Agg) straight to files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

from .mesh import RECT4  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def _figure(width=8.0, aspect=0.35):
    return plt.figure(figsize=(width, max(width * aspect, 2.0)))


def plot_mesh(mesh, image, path, title="Mesh"):
    """Element outlines (rectangles blue, boundary triangles orange) on the image."""
    with plt.rc_context(STYLE):
        fig = _figure(aspect=image.shape[0] / image.shape[1] + 0.05)
        ax = fig.add_subplot(111)
        ax.imshow(np.clip(image, 0.0, 1.0), cmap="gray" if image.ndim == 2 else None, interpolation="nearest")
        rects = [mesh.nodes[list(e.ids)] for e in mesh.elements if e.kind == RECT4]
        tris = [mesh.nodes[list(e.ids)] for e in mesh.elements if e.kind != RECT4]
        ax.add_collection(PolyCollection(rects, facecolors="none", edgecolors="tab:blue", linewidths=0.5))
        ax.add_collection(PolyCollection(tris, facecolors="none", edgecolors="tab:orange", linewidths=0.5))
        ax.plot(mesh.nodes[:, 0], mesh.nodes[:, 1], ".", ms=1.5, color="k")
        ax.set_title(f"{title}: {len(mesh.elements)} elements, {len(mesh.nodes)} nodes")
        ax.set_axis_off()
        fig.savefig(path)
        plt.close(fig)


def plot_field(field, path, component="v", title=None):
    """Heat map of one displacement component over the valid samples."""
    values = np.where(field.valid, field.component(component), np.nan)
    with plt.rc_context(STYLE):
        h = field.ys[-1] - field.ys[0] if len(field.ys) > 1 else 1
        w = field.xs[-1] - field.xs[0] if len(field.xs) > 1 else 1
        fig = _figure(aspect=h / w + 0.1)
        ax = fig.add_subplot(111)
        sp = field.spacing or 1.0
        extent = (field.xs[0] - sp / 2, field.xs[-1] + sp / 2, field.ys[-1] + sp / 2, field.ys[0] - sp / 2)
        im = ax.imshow(values, extent=extent, cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.03, pad=0.01, label=f"{component} ({field.units})")
        ax.set_title(title or f"{component} displacement")
        ax.set_xlabel("x (px)")
        ax.set_ylabel("y (px)")
        fig.savefig(path)
        plt.close(fig)


def plot_profile(xs, measured, truth, path, units="px", title="Deflection along the beam"):
    with plt.rc_context(STYLE):
        fig = _figure(width=6.0, aspect=0.5)
        ax = fig.add_subplot(111)
        ax.plot(xs, truth, "-", color="k", lw=1.0, label="analytic")
        ax.plot(xs, measured, ".", color="tab:red", ms=3, label="measured")
        ax.set_xlabel("x (px)")
        ax.set_ylabel(f"v ({units})")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_case_metrics(names, r_values, d_values, path, d_units="px"):
    """Bar charts of R and D per load case."""
    with plt.rc_context(STYLE):
        fig = _figure(width=7.0, aspect=0.4)
        ax1 = fig.add_subplot(121)
        ax2 = fig.add_subplot(122)
        pos = np.arange(len(names))
        ax1.bar(pos, r_values, color="tab:blue")
        ax1.set_ylim(min(min(r_values) - 1e-4, 0.999), 1.0)
        ax1.set_title("R (v)")
        ax2.bar(pos, d_values, color="tab:orange")
        ax2.set_title(f"D (v, {d_units})")
        for ax in (ax1, ax2):
            ax.set_xticks(pos)
            ax.set_xticklabels(names)
        fig.savefig(path)
        plt.close(fig)


def plot_sweep(cells, series, path, metric="R"):
    """One line per load case over mesh cell size. ``series`` maps case -> values."""
    with plt.rc_context(STYLE):
        fig = _figure(width=5.5, aspect=0.6)
        ax = fig.add_subplot(111)
        for name, values in series.items():
            ax.plot(cells, values, "o-", ms=3, label=name)
        ax.set_xlabel("cell size (px)")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} against mesh size")
        ax.legend(frameon=False, fontsize=8)
        fig.savefig(path)
        plt.close(fig)
