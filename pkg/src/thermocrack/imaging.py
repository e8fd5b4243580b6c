"""Image-processing layer: radiometric colormap codec, thermal/visible
fusion, an MSX-style edge overlay, preprocessing filters, and the
crack-vs-surroundings temperature difference.

Images are uint8 arrays of shape (H, W, 3); temperature fields are float64
maps in degrees C with explicit calibration bounds.  All 8-bit outputs
round half-away-from-zero.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
from PIL import Image

from .errors import DegenerateGeometryError, DomainError, MalformedColormapError, ShapeError

GAUSSIAN_3X3 = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SURROUND_RADIUS = 3  # ring width, 8-connected dilation


def round_half_away(x):
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _as_image(img, name="image"):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ShapeError(f"{name}: expected uint8 (H, W, 3) array, got {img.dtype} {img.shape}")
    return img


def _check_same_size(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"image dimensions differ: {a.shape[:2]} vs {b.shape[:2]}")


@dataclass
class ThermalField:
    """Per-pixel temperature map (degrees C) with calibration bounds."""

    temps: np.ndarray  # (H, W) float64
    t_min: float
    t_max: float

    def __post_init__(self):
        self.temps = np.asarray(self.temps, dtype=np.float64)
        if self.temps.ndim != 2:
            raise ShapeError(f"ThermalField: temps must be 2-d, got shape {self.temps.shape}")
        if not self.t_min < self.t_max:
            raise DomainError(f"ThermalField: t_min {self.t_min} must be < t_max {self.t_max}")
        if self.temps.min() < self.t_min or self.temps.max() > self.t_max:
            raise DomainError("ThermalField: temperatures outside calibration bounds")

    @property
    def height(self):
        return self.temps.shape[0]

    @property
    def width(self):
        return self.temps.shape[1]


def resize_bilinear(img, out_w, out_h):
    """Align-corners bilinear resize, per channel, rounded to 8 bits."""
    img = _as_image(img)
    if out_w < 1 or out_h < 1:
        raise DomainError(f"resize_bilinear: target size must be >= 1, got {out_w}x{out_h}")
    in_h, in_w = img.shape[:2]

    def coords(n_out, n_in):
        if n_out == 1:
            return np.full(1, (n_in - 1) / 2.0)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys = coords(out_h, in_h)
    xs = coords(out_w, in_w)
    y0 = np.minimum(np.floor(ys).astype(int), in_h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    f = img.astype(np.float64)
    top = f[y0][:, x0] * (1 - fx) + f[y0][:, x1] * fx
    bot = f[y1][:, x0] * (1 - fx) + f[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(round_half_away(out), 0, 255).astype(np.uint8)


def median_denoise(img):
    """3x3 median filter per channel, replicated borders."""
    img = _as_image(img)
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = ndi.median_filter(img[..., c], size=3, mode="nearest")
    return out


def unsharp_sharpen(img, amount=1.0):
    """Unsharp mask: I + amount * (I - gaussian_blur(I)), clamped to 8 bits."""
    img = _as_image(img)
    if amount < 0:
        raise DomainError(f"unsharp_sharpen: amount must be >= 0, got {amount}")
    f = img.astype(np.float64)
    out = np.empty_like(f)
    for c in range(3):
        blur = ndi.correlate(f[..., c], GAUSSIAN_3X3, mode="nearest")
        out[..., c] = f[..., c] + amount * (f[..., c] - blur)
    return np.clip(round_half_away(out), 0, 255).astype(np.uint8)


def alpha_fuse(thermal_render, visible):
    """50/50 alpha blend of a thermal render over a visible image."""
    a = _as_image(thermal_render, "thermal_render")
    b = _as_image(visible, "visible")
    _check_same_size(a, b)
    s = a.astype(np.uint16) + b.astype(np.uint16)
    return ((s + 1) // 2).astype(np.uint8)  # round_half_away((a+b)/2) for non-negative ints


def edge_overlay_msx(thermal_render, visible, gain=64.0):
    """MSX-style emulation: brighten the thermal render along visible edges.

    Edge strength is the Sobel gradient magnitude of the visible image's
    luminance, normalized to [0, 1].
    """
    a = _as_image(thermal_render, "thermal_render")
    b = _as_image(visible, "visible")
    _check_same_size(a, b)
    if gain < 0:
        raise DomainError(f"edge_overlay_msx: gain must be >= 0, got {gain}")
    luma = b.astype(np.float64) @ LUMA_WEIGHTS
    gx = ndi.correlate(luma, SOBEL_X, mode="nearest")
    gy = ndi.correlate(luma, SOBEL_Y, mode="nearest")
    edges = np.hypot(gx, gy)
    peak = edges.max()
    if peak > 0:
        edges /= peak
    out = a.astype(np.float64) + gain * edges[..., None]
    return np.clip(round_half_away(out), 0, 255).astype(np.uint8)


def temp_to_color(field):
    """Injective temperature -> RGB lookup: (R=i, G=i//2, B=255-i) where i
    quantizes T over the calibration bounds."""
    if not isinstance(field, ThermalField):
        raise ShapeError("temp_to_color: expected a ThermalField")
    span = field.t_max - field.t_min
    i = np.clip(round_half_away(255.0 * (field.temps - field.t_min) / span), 0, 255)
    i = i.astype(np.uint8)
    return np.stack([i, i // 2, 255 - i], axis=-1)


def color_to_temp(img, t_min, t_max):
    """Invert temp_to_color; exact up to half a quantization step.

    Raises MalformedColormapError at the first pixel (row-major) whose
    G or B channel is more than +-1 from its R-implied value.
    """
    img = _as_image(img)
    if not t_min < t_max:
        raise DomainError(f"color_to_temp: t_min {t_min} must be < t_max {t_max}")
    r = img[..., 0].astype(np.int16)
    bad = (np.abs(img[..., 1].astype(np.int16) - r // 2) > 1) | (
        np.abs(img[..., 2].astype(np.int16) - (255 - r)) > 1
    )
    if bad.any():
        row, col = np.unravel_index(np.argmax(bad), bad.shape)
        raise MalformedColormapError(int(row), int(col), img[row, col])
    temps = t_min + (r / 255.0) * (t_max - t_min)
    return ThermalField(temps, t_min, t_max)


def compute_delta_t(field, mask):
    """Absolute difference between the mean crack temperature and the mean of
    a surrounding ring (dilation radius 3, 8-connected, minus the mask)."""
    temps = field.temps if isinstance(field, ThermalField) else np.asarray(field, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != temps.shape:
        raise ShapeError(f"compute_delta_t: mask shape {mask.shape} != field shape {temps.shape}")
    if not mask.any():
        raise DegenerateGeometryError("compute_delta_t: empty crack mask")
    dilated = ndi.binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=SURROUND_RADIUS)
    ring = dilated & ~mask
    if not ring.any():
        raise DegenerateGeometryError("compute_delta_t: surroundings ring is empty")
    return float(abs(temps[mask].mean() - temps[ring].mean()))


# ---------------------------------------------------------------------------
# Persistence


def save_rgb_png(img, path):
    _as_image(img)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def load_rgb_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return arr.copy()


def _sidecar_path(png_path):
    return Path(png_path).with_suffix(".json")


def save_thermal_field(field, png_path):
    """16-bit grayscale PNG plus a JSON sidecar holding the bounds."""
    span = field.t_max - field.t_min
    v = round_half_away(65535.0 * (field.temps - field.t_min) / span)
    Image.fromarray(np.clip(v, 0, 65535).astype(np.uint16)).save(png_path, format="PNG")
    meta = {"t_min": field.t_min, "t_max": field.t_max}
    _sidecar_path(png_path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def load_thermal_field(png_path):
    meta = json.loads(_sidecar_path(png_path).read_text(encoding="utf-8"))
    t_min, t_max = float(meta["t_min"]), float(meta["t_max"])
    with Image.open(png_path) as im:
        v = np.asarray(im, dtype=np.float64)
    temps = t_min + (v / 65535.0) * (t_max - t_min)
    return ThermalField(temps, t_min, t_max)
