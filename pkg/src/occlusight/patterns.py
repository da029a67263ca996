"""Builtin hidden-wall reflectivity patterns.

Patterns are sampled at pixel centers of an ``n x n`` grid spanning
``extent`` meters; row index ``k`` runs along the wall's first axis.
"""

from __future__ import annotations

import numpy as np

FIGURE = 0.9
GROUND = 0.0
BAR_WIDTH = 0.04
BAR_LENGTH = 0.24


def _coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    s = (np.arange(n) + 0.5) / n
    return np.meshgrid(s, s, indexing="ij")


def uniform(n: int, value: float = 0.5) -> np.ndarray:
    return np.full((n, n), float(value))


def man(n: int, figure: float = FIGURE, ground: float = GROUND, inset=None) -> np.ndarray:
    """Stick-figure stand-in: head, torso, outstretched arms, two legs.

    ``inset = (k0, l0, size)`` draws the figure inside that square, in wall
    fractions, instead of over the whole grid.
    """
    k, l = _coords(n)
    if inset is not None:
        k0, l0, size = (float(v) for v in inset)
        if not size > 0:
            raise ValueError("inset size must be positive")
        k, l = (k - k0) / size, (l - l0) / size
    mask = (k - 0.2) ** 2 + (l - 0.5) ** 2 < 0.1 ** 2
    mask |= (k > 0.3) & (k < 0.62) & (np.abs(l - 0.5) < 0.09)
    mask |= (k > 0.33) & (k < 0.42) & (np.abs(l - 0.5) < 0.32)
    mask |= (k > 0.6) & (k < 0.9) & (np.abs(l - 0.38) < 0.05)
    mask |= (k > 0.6) & (k < 0.9) & (np.abs(l - 0.62) < 0.05)
    return np.where(mask, figure, ground)


def two_bar(n: int, extent: float, separation: float, bar_width: float = BAR_WIDTH,
            bar_length: float = BAR_LENGTH, figure: float = FIGURE,
            ground: float = GROUND) -> np.ndarray:
    """Two parallel bars along ``k``, centered, with an edge-to-edge gap ``separation`` (m)."""
    k, l = _coords(n)
    k, l = (k - 0.5) * extent, (l - 0.5) * extent
    along = np.abs(k) < bar_length / 2
    inner, outer = separation / 2, separation / 2 + bar_width
    across = (np.abs(l) >= inner) & (np.abs(l) < outer)
    return np.where(along & across, figure, ground)


def bar_profile(image: np.ndarray, extent: float, bar_length: float = BAR_LENGTH) -> np.ndarray:
    """Mean across-bar profile over the rows the bars occupy."""
    n = image.shape[0]
    k = ((np.arange(n) + 0.5) / n - 0.5) * extent
    rows = np.abs(k) < bar_length / 2
    return np.asarray(image)[rows].mean(axis=0)


BUILTINS = {"man": man, "uniform": uniform, "two_bar": two_bar}
