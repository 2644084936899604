"""Figure rendering for the CLI: rasters and box plots as PNG files.

Figures are a convenience companion to the delimited outputs, never a
replacement: every number in a figure is also in a CSV next to it.
Rendering goes through the Agg backend so the CLI works headless, and
files are written atomically like every other output.
"""

from __future__ import annotations

import io as _io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fileio import atomic_write_bytes
from .grid import GridSpec

# no creation date in the PNG metadata: outputs must be byte-identical
# across repeated runs
_META = {"Software": "geoelastic"}


def _save(fig: "plt.Figure", path: str | Path) -> None:
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=130, metadata=_META)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def save_raster_png(
    spec: GridSpec,
    values: np.ndarray,
    path: str | Path,
    title: str,
    units: str | None = None,
    mask: np.ndarray | None = None,
) -> None:
    """Render one value per cell as a heatmap image.

    Args:
        spec: Grid geometry; axes are labeled in meters from the
            southwest corner.
        values: Flat array, one value per cell, row-major from the
            southwest.
        path: Output PNG path.
        title: Figure title.
        units: Colorbar label.
        mask: Optional boolean array; cells where it is False render as
            blanks instead of values.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (spec.n_cells,):
        raise ValueError(f"expected {spec.n_cells} values, got {values.shape}")
    img = values.copy()
    if mask is not None:
        img = np.where(np.asarray(mask, dtype=bool), img, np.nan)
    img = img.reshape(spec.ny, spec.nx)
    fig, ax = plt.subplots(figsize=(7.0, 5.6))
    cmap = matplotlib.colormaps["inferno"].copy()
    cmap.set_bad("#c8c8c8")
    extent = (0.0, spec.nx * spec.cell_size_m, 0.0, spec.ny * spec.cell_size_m)
    image = ax.imshow(
        img, origin="lower", cmap=cmap, extent=extent, interpolation="nearest"
    )
    ax.set_xlabel("east (m)")
    ax.set_ylabel("north (m)")
    ax.set_title(title)
    bar = fig.colorbar(image, ax=ax)
    if units:
        bar.set_label(units)
    fig.tight_layout()
    _save(fig, path)


def save_boxplot_png(
    groups: dict[str, Sequence[float]],
    path: str | Path,
    title: str,
    ylabel: str,
) -> None:
    """Render one box per named group of values."""
    if not groups:
        raise ValueError("nothing to plot")
    labels = list(groups)
    data = [np.asarray(groups[name], dtype=np.float64) for name in labels]
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(labels), 4.8))
    ax.boxplot(data, tick_labels=labels, showmeans=True)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
