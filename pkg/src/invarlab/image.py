"""Image core: float RGB rasters, bilinear resampling, affine warps and PPM IO.

An image is a ``numpy`` array of shape ``(height, width, 3)`` holding float64
intensities in [0, 1]. Public functions never modify their input.

Warp convention
---------------
Matrices act on normalized coordinates in [-1, 1] per axis with the
align-corners-false convention: pixel ``u`` of an axis of length ``n`` has
its center at ``(2u + 1)/n - 1``. A forward matrix ``m`` maps input
coordinates to output coordinates, so output pixel ``(u, v)`` samples the
input at ``m^-1 (u, v, 1)``. With ``inverse_map=True`` the matrix is taken
to already map output to input.

Source coordinates within ``1e-9`` of an integer are snapped to it, so the
identity and integer shifts reproduce pixels bit-exactly.
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from invarlab.errors import BoundsError, NumericError, ParseError, ShapeError, SingularTransform

logger = logging.getLogger("invarlab.image")

PADDING_MODES = ("fill", "border", "wrap")

_SNAP_EPS = 1e-9
_DET_EPS = 1e-12
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check shape, finiteness and range; return the image as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"Expected an (H, W, 3) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("Image contains non-finite intensities")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise NumericError(f"Image intensities outside [0, 1]: [{arr.min()}, {arr.max()}]")
    return arr


def new_image(width: int, height: int, value: float = 0.0) -> np.ndarray:
    if width < 1 or height < 1:
        raise ShapeError(f"Image dimensions must be positive, got {width}x{height}")
    return np.full((height, width, 3), float(value))


def dims(img: np.ndarray) -> tuple[int, int]:
    """Return (width, height)."""
    return img.shape[1], img.shape[0]


def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.rint(coords)
    return np.where(np.abs(coords - nearest) <= _SNAP_EPS, nearest, coords)


def _bilinear_parts(img, xs, ys, fill, padding):
    """Corner values, fractional offsets and clamp masks for bilinear sampling."""
    if padding not in PADDING_MODES:
        raise ValueError(f"Unknown padding mode {padding!r}; expected one of {PADDING_MODES}")
    h, w = img.shape[:2]
    xs = _snap(np.asarray(xs, dtype=np.float64))
    ys = _snap(np.asarray(ys, dtype=np.float64))
    free_x = np.ones(xs.shape, dtype=bool)
    free_y = np.ones(ys.shape, dtype=bool)
    if padding == "border":
        free_x = (xs > 0.0) & (xs < w - 1)
        free_y = (ys > 0.0) & (ys < h - 1)
        xs = np.clip(xs, 0.0, w - 1)
        ys = np.clip(ys, 0.0, h - 1)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x1 = x0 + 1
    y1 = y0 + 1

    def corner(yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if padding == "wrap":
            return img[yi % h, xi % w]
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        values = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        if padding == "border":
            return values
        return np.where(inside[..., None], values, fill)

    corners = (corner(y0, x0), corner(y0, x1), corner(y1, x0), corner(y1, x1))
    return corners, fx, fy, free_x, free_y


def bilinear_sample(
    img: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    fill: float = 0.0,
    padding: str = "fill",
) -> np.ndarray:
    """Sample ``img`` at pixel coordinates ``(xs, ys)`` with bilinear weights.

    ``padding`` decides what out-of-range corners read: ``fill`` returns the
    fill value, ``border`` clamps coordinates to the edge and ``wrap`` reads
    the image periodically.
    """
    (c00, c01, c10, c11), fx, fy, _, _ = _bilinear_parts(img, xs, ys, fill, padding)
    top = (1.0 - fx) * c00 + fx * c01
    bottom = (1.0 - fx) * c10 + fx * c11
    return (1.0 - fy) * top + fy * bottom


def bilinear_sample_grad(
    img: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    fill: float = 0.0,
    padding: str = "fill",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sampled values plus their derivatives with respect to ``xs`` and ``ys``.

    Derivatives are one-sided (right) at integer coordinates and zero where
    ``border`` padding clamps.
    """
    (c00, c01, c10, c11), fx, fy, free_x, free_y = _bilinear_parts(img, xs, ys, fill, padding)
    top = (1.0 - fx) * c00 + fx * c01
    bottom = (1.0 - fx) * c10 + fx * c11
    values = (1.0 - fy) * top + fy * bottom
    d_dx = ((1.0 - fy) * (c01 - c00) + fy * (c11 - c10)) * free_x[..., None]
    d_dy = (bottom - top) * free_y[..., None]
    return values, d_dx, d_dy


def normalize_matrix(width: int, height: int) -> np.ndarray:
    """Pixel coordinates to normalized [-1, 1] coordinates."""
    return np.array([
        [2.0 / width, 0.0, 1.0 / width - 1.0],
        [0.0, 2.0 / height, 1.0 / height - 1.0],
        [0.0, 0.0, 1.0],
    ])


def denormalize_matrix(width: int, height: int) -> np.ndarray:
    """Normalized [-1, 1] coordinates to pixel coordinates."""
    return np.array([
        [width / 2.0, 0.0, (width - 1) / 2.0],
        [0.0, height / 2.0, (height - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])


def check_affine(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (2, 3):
        m = np.vstack([m, [0.0, 0.0, 1.0]])
    if m.shape != (3, 3):
        raise ShapeError(f"Affine matrix must be 3x3 or 2x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("Affine matrix has non-finite entries")
    if abs(np.linalg.det(m[:2, :2])) <= _DET_EPS:
        raise SingularTransform(f"Affine matrix is singular: {m.tolist()}")
    return m


def sampling_grid(
    m: np.ndarray,
    in_w: int,
    in_h: int,
    out_w: int,
    out_h: int,
    inverse_map: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Input pixel coordinates read by every output pixel, each of shape (out_h, out_w)."""
    m = check_affine(m)
    to_input = m if inverse_map else np.linalg.inv(m)
    pixel_map = denormalize_matrix(in_w, in_h) @ to_input @ normalize_matrix(out_w, out_h)
    us, vs = np.meshgrid(np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64))
    xs = pixel_map[0, 0] * us + pixel_map[0, 1] * vs + pixel_map[0, 2]
    ys = pixel_map[1, 0] * us + pixel_map[1, 1] * vs + pixel_map[1, 2]
    return xs, ys


def warp_affine(
    img: np.ndarray,
    m: np.ndarray,
    out_w: int | None = None,
    out_h: int | None = None,
    fill: float = 0.0,
    padding: str = "fill",
    inverse_map: bool = False,
) -> np.ndarray:
    """Inverse-warp ``img`` through the affine matrix ``m``.

    Args:
        img: Source image.
        m: 3x3 (or 2x3) matrix in normalized coordinates.
        out_w, out_h: Output size; defaults to the input size.
        fill: Intensity read outside the image when ``padding="fill"``.
        padding: ``fill``, ``border`` or ``wrap``.
        inverse_map: Treat ``m`` as the output-to-input map.

    Raises:
        SingularTransform: If the linear part of ``m`` is not invertible.
    """
    in_w, in_h = dims(img)
    out_w = in_w if out_w is None else out_w
    out_h = in_h if out_h is None else out_h
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"Output dimensions must be positive, got {out_w}x{out_h}")
    xs, ys = sampling_grid(m, in_w, in_h, out_w, out_h, inverse_map=inverse_map)
    out = bilinear_sample(img, xs, ys, fill=fill, padding=padding)
    return np.clip(out, 0.0, 1.0)


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize using the warp kernel with edge clamping."""
    return warp_affine(img, np.eye(3), out_w, out_h, padding="border")


def crop(img: np.ndarray, x0: int, y0: int, w: int, h: int) -> np.ndarray:
    width, height = dims(img)
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
        raise BoundsError(
            f"Crop ({x0}, {y0}, {w}, {h}) does not fit inside a {width}x{height} image"
        )
    return img[y0:y0 + h, x0:x0 + w].copy()


def center_offsets(width: int, height: int, w: int, h: int) -> tuple[int, int]:
    return int(round((width - w) / 2.0)), int(round((height - h) / 2.0))


def center_crop(img: np.ndarray, w: int, h: int) -> np.ndarray:
    width, height = dims(img)
    x0, y0 = center_offsets(width, height, w, h)
    return crop(img, x0, y0, w, h)


def resize_shorter_side(img: np.ndarray, s: int) -> np.ndarray:
    """Resize so the shorter side equals ``s``, preserving aspect ratio."""
    if s < 1:
        raise ShapeError(f"Target side must be >= 1, got {s}")
    width, height = dims(img)
    short = min(width, height)
    if short == s:
        return img.copy()
    scale = s / short
    if width <= height:
        new_w, new_h = s, max(1, int(round(height * scale)))
    else:
        new_w, new_h = max(1, int(round(width * scale))), s
    return resize(img, new_w, new_h)


def cyclic_shift(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by whole pixels with wrap-around; positive dx moves content right."""
    return np.roll(img, shift=(int(dy), int(dx)), axis=(0, 1))


# --- 8-bit boundary -------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize with v -> round(v * 255), halves rounded up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    return from_uint8(to_uint8(img))


# --- IO -------------------------------------------------------------------


def _ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` integer header fields, skipping whitespace and comments."""
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise ParseError("Truncated PPM header", offset=pos)
        start = pos
        while pos < n and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"Expected a decimal header field, got {data[pos:pos + 1]!r}", offset=pos)
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ParseError("Missing whitespace after PPM header", offset=pos)
    return fields, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary PPM (P6, maxval <= 255)."""
    if len(data) < 2 or data[:2] != b"P6":
        raise ParseError("Not a binary PPM file (expected magic 'P6')", offset=0)
    (width, height, maxval), pos = _ppm_tokens(data, 3)
    if width < 1 or height < 1:
        raise ParseError(f"Invalid PPM dimensions {width}x{height}", offset=pos)
    if not 1 <= maxval <= 255:
        raise ParseError(f"Unsupported PPM maxval {maxval}", offset=pos)
    expected = width * height * 3
    body = data[pos:pos + expected]
    if len(body) < expected:
        raise ParseError(
            f"Truncated PPM pixel data: expected {expected} bytes, found {len(body)}",
            offset=pos + len(body),
        )
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    if maxval == 255:
        return from_uint8(pixels)
    if pixels.max() > maxval:
        raise ParseError(f"Pixel value exceeds maxval {maxval}", offset=pos)
    return pixels.astype(np.float64) / maxval


def encode_ppm(img: np.ndarray) -> bytes:
    width, height = dims(img)
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + to_uint8(img).tobytes()


def read_image(path: str | Path) -> np.ndarray:
    """Read a PPM (P6) file, or a PNG through Pillow."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(_PNG_SIGNATURE):
        try:
            with PILImage.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise ParseError(f"Unreadable PNG {path}: {e}", offset=0) from e
        return from_uint8(arr)
    return decode_ppm(data)


def write_image(img: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(encode_ppm(validate_image(img)))
    logger.debug(f"Wrote {path}")
