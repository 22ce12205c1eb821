"""Image ingestion and resampling.

Gallery images arrive as binary PGM (P5) or PNG files and leave as
20x20 float maps in [0, 1]. Color inputs collapse to luminance with the
usual 0.299 / 0.587 / 0.114 weights. Oversized inputs are center-cropped
square, then box-averaged when the side is an integer multiple of the
target and bilinearly resampled otherwise.
"""

from __future__ import annotations

import numpy as np

from coffar.errors import CoffarError, ShapeError

FACE_SIZE = 20

LUMA_R = 0.299
LUMA_G = 0.587
LUMA_B = 0.114


class ImageFormatError(CoffarError):
    """Raised when an image file cannot be decoded."""


def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integer header tokens, skipping
    '#' comments. Returns the tokens and the offset one past the last
    whitespace byte that terminated the final token."""
    tokens: list[int] = []
    pos = 0
    current = b""
    while len(tokens) < count:
        if pos >= len(data):
            raise ImageFormatError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            if current:
                try:
                    tokens.append(int(current))
                except ValueError:
                    raise ImageFormatError(f"bad PGM header token {current!r}")
                current = b""
                if len(tokens) == count:
                    return tokens, pos + 1
        else:
            current += ch
        pos += 1
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Decode a binary (P5) PGM file to a float array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_pgm_tokens(data[2:], 3)
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"{path}: unsupported PGM maxval {maxval}")
    raster = data[2 + offset :]
    if len(raster) < width * height:
        raise ImageFormatError(f"{path}: truncated PGM raster")
    arr = np.frombuffer(raster[: width * height], dtype=np.uint8)
    return arr.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] as binary PGM with maxval 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ShapeError(f"image must be a non-empty 2-d array, got shape {img.shape}")
    quantized = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(quantized.tobytes())


def read_png(path) -> np.ndarray:
    """Decode a PNG to a float grayscale array in [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float64)
                return arr / 255.0
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"{path}: {exc}")
    luma = LUMA_R * rgb[:, :, 0] + LUMA_G * rgb[:, :, 1] + LUMA_B * rgb[:, :, 2]
    return luma / 255.0


def read_image(path) -> np.ndarray:
    """Dispatch on file extension; raises ImageFormatError when unsupported."""
    name = str(path).lower()
    if name.endswith(".pgm"):
        return read_pgm(path)
    if name.endswith(".png"):
        return read_png(path)
    raise ImageFormatError(f"{path}: unsupported image format")


def box_downscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping factor x factor blocks."""
    h, w = image.shape
    if h % factor or w % factor:
        raise ShapeError(f"shape {image.shape} not divisible by {factor}")
    return image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-centered coordinates."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1.0 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1.0 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bot * wy


def center_crop_square(image: np.ndarray) -> np.ndarray:
    h, w = image.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return image[top : top + side, left : left + side]


def standardize_face(image: np.ndarray, size: int = FACE_SIZE) -> np.ndarray:
    """Center-crop square, then resample to size x size."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ShapeError(f"image must be a non-empty 2-d array, got shape {img.shape}")
    img = center_crop_square(img)
    side = img.shape[0]
    if side == size:
        return img
    if side % size == 0:
        return box_downscale(img, side // size)
    return bilinear_resize(img, size, size)


def translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift by (dy, dx) pixels, replicating edge rows and columns."""
    h, w = image.shape
    pad_y = abs(dy)
    pad_x = abs(dx)
    padded = np.pad(image, ((pad_y, pad_y), (pad_x, pad_x)), mode="edge")
    return padded[pad_y - dy : pad_y - dy + h, pad_x - dx : pad_x - dx + w]
