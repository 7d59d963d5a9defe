"""Per-node coloured mesh export for inspecting predictions."""

from __future__ import annotations

import numpy as np

from .dataset import CLASS_EDGES_MM, Sample
from .errors import ShapeMismatch
from .meshio import write_mesh

# red -> blue over classes A..E, C in the middle
CLASS_PALETTE = np.array(
    [
        [215, 25, 28],
        [253, 174, 97],
        [255, 255, 191],
        [171, 217, 233],
        [44, 123, 182],
    ],
    dtype=np.uint8,
)
WRONG_COLOR = np.array([0, 0, 0], dtype=np.uint8)


def class_colors(pred, truth=None) -> np.ndarray:
    """Palette colours per predicted class; nodes whose prediction disagrees with ``truth`` are black."""
    pred = np.asarray(pred, dtype=np.int64)
    if pred.ndim != 1 or (len(pred) and (pred.min() < 0 or pred.max() >= len(CLASS_PALETTE))):
        raise ValueError("class predictions must be a 1-D array of indices in [0, 5)")
    colors = CLASS_PALETTE[pred].copy()
    if truth is not None:
        truth = np.asarray(truth, dtype=np.int64)
        if truth.shape != pred.shape:
            raise ShapeMismatch(f"ground truth has {truth.shape[0]} entries, predictions {pred.shape[0]}")
        colors[truth != pred] = WRONG_COLOR
    return colors


def diverging_colors(sd_mm, vmax: float | None = None) -> np.ndarray:
    """Map signed distances onto the red (negative) -> pale (0) -> blue (positive) palette."""
    sd = np.asarray(sd_mm, dtype=np.float64)
    if vmax is None:
        vmax = 2 * CLASS_EDGES_MM[-1]
    t = np.clip((sd / vmax + 1.0) * 0.5, 0.0, 1.0) * (len(CLASS_PALETTE) - 1)
    lo = np.floor(t).astype(np.int64).clip(0, len(CLASS_PALETTE) - 2)
    frac = (t - lo)[:, None]
    pal = CLASS_PALETTE.astype(np.float64)
    return np.rint(pal[lo] * (1 - frac) + pal[lo + 1] * frac).astype(np.uint8)


def export_colored_mesh(sample: Sample, predictions, path, truth=None, mode: str | None = None,
                        vmax: float | None = None) -> np.ndarray:
    """Write the sample's mesh as PLY with one colour per node; returns the colours.

    Integer predictions (or ``mode="classification"``) use the class palette,
    with misclassified nodes black when ``truth`` is given (``truth=True``
    takes the sample's own labels). Float predictions are SD values in mm and
    use the diverging palette, with the value stored as a vertex scalar.
    """
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1)
        mode = mode or "classification"
    if len(pred) != sample.node_count:
        raise ShapeMismatch(f"{len(pred)} predictions for {sample.node_count} nodes")
    if mode is None:
        mode = "classification" if np.issubdtype(pred.dtype, np.integer) else "regression"
    if mode == "classification":
        if truth is True:
            truth = sample.class_labels
        colors = class_colors(pred, truth)
        scalars = pred.astype(np.float32)
        name = "predicted_class"
    else:
        colors = diverging_colors(pred, vmax)
        scalars = pred.astype(np.float32)
        name = "sd_mm"
    write_mesh(sample.mesh, path, node_scalars=scalars, node_colors=colors, scalar_name=name)
    return colors
