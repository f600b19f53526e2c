"""Image-domain operators: valid 3x3 convolution with ReLU, 2x2 max pooling,
and statistical aggregation over fractional windows.

Images are plain 2D float64 arrays. Raw inputs live in [0, 1]; intermediate
images after convolution may exceed 1 but are never negative thanks to the
ReLU. All operations here are pure functions on immutable inputs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import EmptyWindowError, ImageTooSmallError
from .util import round_half_up


class WindowShape(enum.Enum):
    RECTANGLE = "rect"
    ROW = "row"
    COLUMN = "col"
    ELLIPSE = "ellipse"


class Stat(enum.Enum):
    MIN = "min"
    MAX = "max"
    MEAN = "mean"
    STD = "std"


@dataclass(frozen=True)
class WindowSpec:
    """An aggregation region given as fractions of the image dimensions.

    ``pos_x``/``pos_y`` locate the top-left corner, ``size_w``/``size_h`` the
    extent, all relative to image width/height. Fractions keep windows
    meaningful across variable-sized images.
    """

    shape: WindowShape
    pos_x: float
    pos_y: float
    size_w: float
    size_h: float

    def __post_init__(self):
        if not (0.0 <= self.pos_x <= 1.0 and 0.0 <= self.pos_y <= 1.0):
            raise ValueError(f"window position must lie in [0, 1], got {self}")
        if not (0.0 < self.size_w <= 1.0 and 0.0 < self.size_h <= 1.0):
            raise ValueError(f"window size must lie in (0, 1], got {self}")


@lru_cache(maxsize=8192)
def realize_window(w: WindowSpec, height: int, width: int) -> tuple[int, int, np.ndarray]:
    """Map a fractional window onto concrete pixels of an height x width image.

    Returns ``(row0, col0, mask)`` where ``mask`` is a boolean array over the
    clamped bounding rectangle; the window's pixel set is the True cells of
    ``mask`` offset by ``(row0, col0)``.

    Rule: the top-left corner is floored, the extent is rounded half-up with
    a minimum of one pixel, and the rectangle is clamped to the image.
    ROW/COLUMN force the corresponding extent to 1. ELLIPSE keeps the pixels
    whose centers lie inside the ellipse inscribed in the clamped rectangle.
    The result is deterministic and never empty. Callers must not mutate the
    returned mask (results are cached).
    """
    r0 = min(math.floor(w.pos_y * height), height - 1)
    c0 = min(math.floor(w.pos_x * width), width - 1)
    eh = 1 if w.shape is WindowShape.ROW else max(1, round_half_up(w.size_h * height))
    ew = 1 if w.shape is WindowShape.COLUMN else max(1, round_half_up(w.size_w * width))
    r1 = min(r0 + eh, height)
    c1 = min(c0 + ew, width)
    if w.shape is WindowShape.ELLIPSE:
        cy = (r0 + r1) / 2.0
        cx = (c0 + c1) / 2.0
        ay = (r1 - r0) / 2.0
        ax = (c1 - c0) / 2.0
        rr = np.arange(r0, r1, dtype=np.float64)[:, None] + 0.5
        cc = np.arange(c0, c1, dtype=np.float64)[None, :] + 0.5
        mask = ((rr - cy) / ay) ** 2 + ((cc - cx) / ax) ** 2 <= 1.0
    else:
        mask = np.ones((r1 - r0, c1 - c0), dtype=bool)
    mask.setflags(write=False)
    return r0, c0, mask


def convolve(img: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Valid 3x3 correlation of ``img`` with ``filt``, then ReLU.

    Output shape is (h - 2, w - 2); no padding, stride 1.
    Raises ImageTooSmallError when either dimension is below 3.
    """
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ImageTooSmallError(f"convolve needs at least a 3x3 image, got {img.shape}")
    return np.maximum(kernels.conv2d_valid(img, filt), 0.0)


def pool(img: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2.

    Output dims are floor(h/2) x floor(w/2); a trailing odd row/column is
    dropped. Raises ImageTooSmallError when either dimension is below 2.
    """
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ImageTooSmallError(f"pool needs at least a 2x2 image, got {img.shape}")
    return kernels.maxpool2x2(img)


def aggregate(img: np.ndarray, w: WindowSpec, stat: Stat) -> float:
    """Statistic over the pixels of the realized window.

    Std is the population standard deviation (divisor = pixel count), which
    is well defined even for single-pixel windows.
    """
    r0, c0, mask = realize_window(w, img.shape[0], img.shape[1])
    sub = img[r0 : r0 + mask.shape[0], c0 : c0 + mask.shape[1]]
    vals = sub if mask.all() else sub[mask]
    if vals.size == 0:
        raise EmptyWindowError(f"window {w} is empty on a {img.shape} image")
    if stat is Stat.MIN:
        return float(vals.min())
    if stat is Stat.MAX:
        return float(vals.max())
    if stat is Stat.MEAN:
        return float(vals.mean())
    return float(vals.std())
