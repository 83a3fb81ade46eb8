"""Grayscale raster primitives.

Images are held as immutable float64 arrays with intensities in [0, 1];
file I/O quantizes on write. Coordinates follow the usual raster convention:
``x`` indexes columns, ``y`` indexes rows, boxes are (x, y, w, h) with the
origin at the top-left pixel.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DecodeError

__all__ = [
    "GrayImage",
    "BBox",
    "GradientMap",
    "load_image",
    "save_image",
    "encode_png",
    "downscale",
    "equalize_hist",
    "sobel_horizontal",
    "extract_patch",
    "flip_horizontal",
    "split_halves",
]


@dataclass(frozen=True)
class GrayImage:
    """A width x height grayscale raster with intensities in [0, 1]."""

    pixels: np.ndarray  # (height, width) float64, read-only

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be 2-D and non-empty, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image intensities must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned integer pixel box; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive area, got w={self.w} h={self.h}")

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.right <= width and self.bottom <= height

    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class GradientMap:
    """Signed gradient responses, same dimensions as the source image."""

    values: np.ndarray  # (height, width) float64, read-only

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"gradient map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("gradient values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _parse_pgm(raw: bytes, path: str) -> np.ndarray:
    """Parse a binary PGM (P5) payload into a float64 array in [0, 1]."""
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"truncated PGM header in {path}")
        return raw[start:pos]

    if next_token() != b"P5":
        raise DecodeError(f"not a binary PGM (P5) file: {path}")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise DecodeError(f"bad PGM header in {path}: {exc}") from exc
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise DecodeError(f"bad PGM dimensions/maxval in {path}")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    body = raw[pos : pos + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise DecodeError(f"truncated PGM pixel data in {path}")
    data = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape(height, width)
    return data / float(maxval)


def load_image(path) -> GrayImage:
    """Load an 8/16-bit grayscale PNG or binary PGM (P5) as a GrayImage.

    Color inputs are converted to luma (ITU-R 601). Intensities are mapped
    linearly onto [0, 1] by the format's maximum value.
    """
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read image file {p}: {exc}") from exc
    if raw[:2] == b"P5":
        return GrayImage(_parse_pgm(raw, str(p)))
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise DecodeError(f"cannot decode image file {p}: {exc}") from exc
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("I", "I;16"):
        arr = np.asarray(img, dtype=np.float64)
        if arr.min() < 0 or arr.max() > 65535:
            raise DecodeError(f"unsupported integer range in {p}")
        arr = arr / 65535.0
    elif img.mode in ("RGB", "RGBA", "P", "LA"):
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    else:
        raise DecodeError(f"unsupported image mode {img.mode!r} in {p}")
    return GrayImage(arr)


def encode_png(img: GrayImage, bits: int = 16) -> bytes:
    """Encode as an 8- or 16-bit grayscale PNG and return the raw bytes."""
    if bits == 16:
        pil = Image.fromarray(np.round(img.pixels * 65535.0).astype(np.uint16))
    elif bits == 8:
        pil = Image.fromarray(np.round(img.pixels * 255.0).astype(np.uint8))
    else:
        raise ValueError(f"PNG bit depth must be 8 or 16, got {bits}")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def save_image(img: GrayImage, path, bits: int = 16) -> None:
    """Write a grayscale PNG (intensities quantized from [0, 1] on write)."""
    Path(path).write_bytes(encode_png(img, bits))


# ---------------------------------------------------------------------------
# resampling and intensity normalization
# ---------------------------------------------------------------------------

def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Exact area-overlap weights mapping n_in source pixels to n_out bins.

    Column o holds the overlap of each unit source interval [i, i+1) with the
    destination interval [o*s, (o+1)*s), s = n_in/n_out, normalized to sum 1.
    """
    s = n_in / n_out
    w = np.zeros((n_in, n_out))
    for o in range(n_out):
        lo = o * s
        hi = (o + 1) * s
        for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            w[i, o] = min(hi, i + 1.0) - max(lo, float(i))
        w[:, o] /= w[:, o].sum()
    return w


def downscale(img: GrayImage, factor: float) -> GrayImage:
    """Area-averaged resample; output dims are floor(dim * factor).

    factor must lie in (0, 1]; factor 1 returns an identical copy.
    """
    if not (0.0 < factor <= 1.0):
        raise ValueError(f"downscale factor must be in (0, 1], got {factor}")
    if factor == 1.0:
        return GrayImage(img.pixels)
    out_w = int(np.floor(img.width * factor))
    out_h = int(np.floor(img.height * factor))
    if out_w < 1 or out_h < 1:
        raise ValueError(
            f"factor {factor} collapses {img.width}x{img.height} below one pixel"
        )
    wr = _box_weights(img.height, out_h)  # (in_h, out_h)
    wc = _box_weights(img.width, out_w)  # (in_w, out_w)
    out = wr.T @ img.pixels @ wc
    return GrayImage(np.clip(out, 0.0, 1.0))


def quantize_levels(img: GrayImage) -> np.ndarray:
    """Quantize intensities to integer levels 0..255 (nearest on the v/255 grid)."""
    return np.round(img.pixels * 255.0).astype(np.int64)


def equalize_hist(img: GrayImage) -> GrayImage:
    """256-bin histogram equalization.

    Level v maps to (CDF(v) - CDF_min) / (1 - CDF_min), where CDF_min is the
    CDF value of the lowest occupied bin; a single-bin (constant) image is
    returned unchanged. The mapping is monotone non-decreasing, so pixel rank
    order is preserved.
    """
    levels = quantize_levels(img)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist) / levels.size
    cdf_min = cdf[np.nonzero(hist)[0][0]]
    if cdf_min >= 1.0:
        return GrayImage(img.pixels)
    mapping = (cdf - cdf_min) / (1.0 - cdf_min)
    return GrayImage(np.clip(mapping[levels], 0.0, 1.0))


# ---------------------------------------------------------------------------
# gradients and patch geometry
# ---------------------------------------------------------------------------

def sobel_horizontal(img: GrayImage) -> GradientMap:
    """Sobel response to horizontal edges (vertical intensity derivative).

    Correlates with the kernel rows (-1,-2,-1)/(0,0,0)/(+1,+2,+1) under
    replicate border padding, so the output matches the image dimensions and
    an intensity ramp increasing downward gives positive responses.
    """
    if img.width < 3 or img.height < 3:
        raise ValueError(
            f"sobel needs at least a 3x3 image, got {img.width}x{img.height}"
        )
    pad = np.pad(img.pixels, 1, mode="edge")
    d = pad[2:, :] - pad[:-2, :]  # bottom row minus top row
    out = d[:, :-2] + 2.0 * d[:, 1:-1] + d[:, 2:]
    return GradientMap(out)


def extract_patch(img: GrayImage, box: BBox) -> GrayImage:
    """Copy the w x h sub-raster under box; box must lie fully inside img."""
    if not box.inside(img.width, img.height):
        raise ValueError(
            f"box {box} not inside {img.width}x{img.height} image"
        )
    return GrayImage(img.pixels[box.y : box.bottom, box.x : box.right])


def flip_horizontal(img: GrayImage) -> GrayImage:
    """Reverse column order (right-left mirror)."""
    return GrayImage(np.fliplr(img.pixels))


def split_halves(img: GrayImage):
    """Split into left/right halves at floor(w/2).

    Returns ((left, 0), (right, floor(w/2))): each half paired with its
    column offset relative to the parent image.
    """
    if img.width < 2:
        raise ValueError("cannot split an image narrower than 2 columns")
    mid = img.width // 2
    left = GrayImage(img.pixels[:, :mid])
    right = GrayImage(img.pixels[:, mid:])
    return (left, 0), (right, mid)
