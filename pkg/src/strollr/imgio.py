"""8-bit image file I/O.

Grayscale images travel as PGM or PNG, color as PPM or PNG (RGB order).
Pixels are converted to float64 on load; writing quantizes (round + clip)
to 8 bits.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage


class ImageIOError(IOError):
    """Unreadable, unwritable, or unsupported image file."""


def load_image(path: str, force_gray: bool = False) -> np.ndarray:
    """Read an image file into a float64 array, (H, W) gray or (H, W, 3) RGB."""
    try:
        with PILImage.open(path) as im:
            if force_gray or im.mode in ("L", "I", "I;16", "1"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    except FileNotFoundError:
        raise ImageIOError(f"no such image file: {path}")
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}")
    return arr


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level, clipping to [0, 255]."""
    return np.clip(np.rint(np.real(img)), 0, 255).astype(np.uint8)


def save_image(path: str, img: np.ndarray) -> None:
    """Write a float image as an 8-bit file; format chosen from the extension."""
    data = quantize(img)
    if data.ndim == 2:
        pil = PILImage.fromarray(data, mode="L")
    elif data.ndim == 3 and data.shape[2] == 3:
        pil = PILImage.fromarray(data, mode="RGB")
    else:
        raise ImageIOError(f"unsupported image shape {img.shape}")
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".pgm", ".ppm", ".png", ".pnm"):
        raise ImageIOError(f"unsupported image extension {ext!r} (use pgm/ppm/png)")
    try:
        pil.save(path)
    except OSError as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}")


def load_mask(path: str) -> np.ndarray:
    """Read a mask image; nonzero pixels mark available/sampled positions."""
    return load_image(path, force_gray=True) != 0


def save_mask(path: str, mask: np.ndarray) -> None:
    save_image(path, np.where(mask, 255.0, 0.0))
