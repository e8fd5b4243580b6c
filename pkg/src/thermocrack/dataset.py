"""Crack-severity labeling, synthetic sample generation, manifests, and
stratified train/val/test splitting.

Severity is defined by the temperature difference between a crack and its
surroundings: below 2 C is level 1, 2-4 C is level 2, above 4 C is level 3
(both boundaries belong to level 2).
"""

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from . import imaging
from .errors import DomainError, GenerationError, ManifestError
from .imaging import ThermalField

SOURCE_KINDS = ("msx_like", "fusion", "thermal", "visible")
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.6, 0.2, 0.2)

# |delta| sampling interval per level; margins keep samples away from the
# 2 C and 4 C class boundaries so noise cannot flip a label.
LEVEL_DELTA_RANGES = {1: (0.5, 1.8), 2: (2.2, 3.8), 3: (4.2, 8.0)}
HARD_DELTA_RANGES = {1: (0.05, 2.0), 2: (2.0, 4.0), 3: (4.0, 8.0)}
RETRY_BUDGET = 8

# Every sample is rendered with the same calibration span (auto-leveled to
# the scene's coldest pixel, like a camera with a fixed temperature range).
# A fixed span keeps rendered crack contrast proportional to delta-T instead
# of being normalized away per image; it covers background variation, the
# largest ambient warmth, and the largest crack offset without clipping.
CALIBRATION_SPAN = 54.0

# Mean face warmth (degrees C above the undamaged background) contributed by
# the damaged zone behind a crack.  The zone's extent grows with severity
# class, so the warmth is keyed on the level rather than on the individual
# crack's delta-T.
AMBIENT_WARMTH = {1: 0.5, 2: 20.0, 3: 40.0}

# Visible staining of the damp face.  Moderate (level 2) cracks wick
# moisture to the face, growing a green algal film; severe (level 3)
# cracks expose corroding reinforcement, streaking the face rust-red.
# Hairline cracks leave the face clean.  Each entry is an (R, G, B) lift
# applied under the stain field, plus a speckle amplitude (crusty
# granules) whose density gives the stain a detectable edge texture.
STAIN_TINTS = {2: (30.0, 80.0, 30.0), 3: (110.0, 60.0, 40.0)}
STAIN_SPECKLE = {2: (18.0, 0.6), 3: (18.0, 0.9)}  # amplitude, granule density

# Per-sample uniform jitter (+- degrees C) applied to the ambient warmth.
AMBIENT_JITTER = 0.15

# Edge-overlay gain used when rendering msx_like samples (how strongly the
# visible texture's edges brighten the thermal render).
MSX_GAIN = 48.0


class CrackLevel(enum.IntEnum):
    LEVEL_1 = 1
    LEVEL_2 = 2
    LEVEL_3 = 3


def classify_delta_t(delta_t):
    """Map a temperature difference (degrees C) to its crack level."""
    if not (isinstance(delta_t, (int, float, np.floating, np.integer))
            and math.isfinite(delta_t) and delta_t >= 0):
        raise DomainError(f"classify_delta_t: delta_t must be finite and >= 0, got {delta_t!r}")
    if delta_t < 2.0:
        return CrackLevel.LEVEL_1
    if delta_t <= 4.0:
        return CrackLevel.LEVEL_2
    return CrackLevel.LEVEL_3


@dataclass
class SampleRecord:
    image_path: str
    source_kind: str
    level: CrackLevel
    delta_t: float
    split: str = "train"


@dataclass
class Manifest:
    records: list
    seed: int

    def counts(self):
        """Nested {level: {split: n}} tally."""
        out = {int(lv): {s: 0 for s in SPLITS} for lv in CrackLevel}
        for r in self.records:
            out[int(r.level)][r.split] += 1
        return out


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class SynthSample:
    image: np.ndarray          # rendered sample per source_kind, uint8 (H, W, 3)
    visible: np.ndarray        # visible-light wall texture, uint8 (H, W, 3)
    field: ThermalField
    mask: np.ndarray           # bool (H, W)
    delta_t: float


def _background_temps(rng, h, w):
    base = rng.uniform(18.0, 28.0)
    yy = np.linspace(0.0, 1.0, h)[:, None]
    xx = np.linspace(0.0, 1.0, w)[None, :]
    slope_y, slope_x = rng.uniform(-0.02, 0.02, size=2)
    temps = base + slope_y * yy + slope_x * xx
    temps = temps + 0.05 * np.sin(
        2.0 * np.pi * (rng.uniform() + rng.uniform(0.5, 1.5) * yy + rng.uniform(0.5, 1.5) * xx)
    )
    temps += rng.normal(0.0, 0.15, size=(h, w))
    return temps


# Crack geometry per level: more severe cracks are wider and longer, so the
# rendered shape carries severity information alongside the thermal contrast
# (widths stay within the overall 1-4 px band).
LEVEL_CRACK_WIDTHS = {1: (1.0, 1.5), 2: (2.2, 2.8), 3: (3.5, 4.0)}
LEVEL_CRACK_LENGTHS = {1: (0.35, 0.5), 2: (0.9, 1.1), 3: (2.2, 3.0)}


def _rasterize_crack(rng, h, w, level):
    """Random-walk polyline; width and length scale with severity level."""
    mask = np.zeros((h, w), dtype=bool)
    y = rng.uniform(0.2 * h, 0.8 * h)
    x = rng.uniform(0.2 * w, 0.8 * w)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    w_lo, w_hi = LEVEL_CRACK_WIDTHS[int(level)]
    l_lo, l_hi = LEVEL_CRACK_LENGTHS[int(level)]
    width = rng.uniform(w_lo, w_hi)
    n_steps = int(rng.integers(int(l_lo * min(h, w)), int(l_hi * min(h, w))))
    for _ in range(n_steps):
        heading += rng.normal(0.0, 0.22)
        y = float(np.clip(y + np.sin(heading), 2.0, h - 3.0))
        x = float(np.clip(x + np.cos(heading), 2.0, w - 3.0))
        width = float(np.clip(width + rng.normal(0.0, 0.12), w_lo, w_hi))
        r = width / 2.0
        mask[int(round(y)), int(round(x))] = True
        y0, y1 = int(np.floor(y - r)), int(np.ceil(y + r)) + 1
        x0, x1 = int(np.floor(x - r)), int(np.ceil(x + r)) + 1
        yy, xx = np.ogrid[y0:y1, x0:x1]
        mask[y0:y1, x0:x1] |= (yy - y) ** 2 + (xx - x) ** 2 <= r * r
    return mask


def _wall_texture(rng, h, w, mask, stain=None, stain_level=None):
    """Procedural masonry-like visible image with the crack drawn dark.

    ``stain``, if given, is a [0, 1] field of staining around the crack,
    tinted and speckled per ``stain_level`` (see STAIN_TINTS).
    """
    gray = 40.0 + rng.normal(0.0, 2.0, size=(h, w))
    # coarse mottling, nearest-neighbor upsampled (blockiness gives the
    # edge overlay something to latch onto)
    cell = 12
    coarse = rng.normal(0.0, 3.0, size=(h // cell + 1, w // cell + 1))
    gray += np.repeat(np.repeat(coarse, cell, axis=0), cell, axis=1)[:h, :w]
    # mortar joints: horizontal courses with staggered vertical head joints
    course = int(rng.integers(14, 22))
    brick = int(rng.integers(28, 44))
    for row in range(int(rng.integers(0, course)), h, course):
        gray[row:row + 2, :] -= 10.0
        offset = (row // course % 2) * (brick // 2)
        for col in range(offset, w, brick):
            gray[max(row - course, 0):row + 2, col:col + 2] -= 8.0
    rgb = np.stack([gray, gray * 0.97, gray * 0.92], axis=-1)
    if stain is not None:
        amp, density = STAIN_SPECKLE[stain_level]
        granules = (rng.uniform(size=(h, w)) < density) * rng.normal(
            0.0, amp, size=(h, w))
        lift = (stain * (1.0 + granules / 30.0))[..., None] * np.asarray(
            STAIN_TINTS[stain_level])
        rgb = rgb + lift
    rgb[mask] *= 0.92
    return np.clip(imaging.round_half_away(rgb), 0, 255).astype(np.uint8)


def synth_sample(seed, level, source_kind, height=120, width=160, hard_boundaries=False):
    """Generate one labeled synthetic sample, deterministic in its arguments.

    The crack region is offset by a warm temperature delta drawn from the
    level's interval; the realized delta_t (crack mean vs
    surrounding ring mean) is re-measured and must classify back to the
    requested level, resampling up to RETRY_BUDGET times.
    """
    level = CrackLevel(level)
    if source_kind not in SOURCE_KINDS:
        raise DomainError(f"synth_sample: unknown source_kind {source_kind!r}")
    rng = np.random.default_rng([int(seed), int(level), SOURCE_KINDS.index(source_kind)])
    h, w = int(height), int(width)
    background = _background_temps(rng, h, w)
    mask = _rasterize_crack(rng, h, w, level)
    lo, hi = (HARD_DELTA_RANGES if hard_boundaries else LEVEL_DELTA_RANGES)[int(level)]

    # The damaged zone behind a crack (trapped moisture, delaminated render)
    # retains heat and warms the whole wall face; the extent of that zone
    # grows with severity class, so the ambient warmth is keyed on the
    # level.  The warmth is uniform up to a smooth halo, so it cancels in
    # the crack-vs-ring measurement and the realized delta_t stays ~delta.
    # Calibration is leveled on the undamaged background alone, so the
    # rendered scene gets visibly warmer with severity.
    halo = ndi.gaussian_filter(mask.astype(np.float64), sigma=12.0)
    if halo.max() > 0:
        halo /= halo.max()
    ambient = AMBIENT_WARMTH[int(level)] + rng.uniform(-AMBIENT_JITTER, AMBIENT_JITTER)
    t_min = float(background.min())

    for _ in range(RETRY_BUDGET):
        # cracks read warm: trapped air and moisture retain heat relative to
        # the surrounding wall face
        delta = rng.uniform(lo, hi)
        temps = background + ambient * (1.0 + 0.1 * halo)
        temps[mask] += delta
        delta_t = imaging.compute_delta_t(temps, mask)
        if classify_delta_t(delta_t) == level:
            break
    else:
        raise GenerationError(
            f"synth_sample: could not realize level {int(level)} in {RETRY_BUDGET} tries"
        )

    field = ThermalField(temps, t_min=t_min, t_max=t_min + CALIBRATION_SPAN)
    render = imaging.temp_to_color(field)
    stain = None if int(level) == 1 else (0.6 + 0.4 * halo)
    visible = _wall_texture(rng, h, w, mask, stain=stain, stain_level=int(level))
    if source_kind == "thermal":
        image = render
    elif source_kind == "visible":
        image = visible
    elif source_kind == "fusion":
        image = imaging.alpha_fuse(render, visible)
    else:  # msx_like
        image = imaging.edge_overlay_msx(render, visible, gain=MSX_GAIN)
    return SynthSample(image=image, visible=visible, field=field, mask=mask, delta_t=delta_t)


def synth_dataset(seed, n_per_level, source_kind, out_dir, height=120, width=160,
                  ratios=DEFAULT_RATIOS, hard_boundaries=False):
    """Write 3 * n_per_level labeled images plus thermal sidecars under
    out_dir and return a stratified-split Manifest (paths relative to out_dir)."""
    if n_per_level < 1:
        raise DomainError(f"synth_dataset: n_per_level must be >= 1, got {n_per_level}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "thermal").mkdir(parents=True, exist_ok=True)
    records = []
    for level in CrackLevel:
        for i in range(n_per_level):
            sample_seed = int(seed) * 1_000_003 + i
            sample = synth_sample(sample_seed, level, source_kind,
                                  height=height, width=width,
                                  hard_boundaries=hard_boundaries)
            stem = f"{source_kind}_L{int(level)}_{i:04d}"
            rel = f"images/{stem}.png"
            imaging.save_rgb_png(sample.image, out_dir / rel)
            imaging.save_thermal_field(sample.field, out_dir / "thermal" / f"{stem}.png")
            records.append(SampleRecord(image_path=rel, source_kind=source_kind,
                                        level=level, delta_t=sample.delta_t))
    records = stratified_split(records, ratios=ratios, seed=seed)
    return Manifest(records=records, seed=int(seed))


# ---------------------------------------------------------------------------
# Splitting


def _split_counts(n, ratios):
    """Floor + largest-remainder apportionment; ties favor train, then val."""
    quotas = [n * r for r in ratios]
    counts = [int(math.floor(q + 1e-9)) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(records, ratios=DEFAULT_RATIOS, seed=0):
    """Assign train/val/test within each level.

    The shuffle is keyed on (seed, level) over records sorted by path, so the
    assignment is independent of input order.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DomainError(f"stratified_split: ratios must be positive and sum to 1, got {ratios}")
    out = []
    for level in CrackLevel:
        group = sorted((r for r in records if r.level == level), key=lambda r: r.image_path)
        if not group:
            continue
        rng = np.random.default_rng([int(seed), int(level)])
        perm = rng.permutation(len(group))
        counts = _split_counts(len(group), ratios)
        assignment = np.empty(len(group), dtype=object)
        start = 0
        for split, k in zip(SPLITS, counts):
            assignment[perm[start:start + k]] = split
            start += k
        out.extend(replace(rec, split=assignment[i]) for i, rec in enumerate(group))
    out.sort(key=lambda r: r.image_path)
    return out


# ---------------------------------------------------------------------------
# Manifest persistence (JSON Lines; header object first)

MANIFEST_VERSION = 1


def save_manifest(manifest, path):
    lines = [json.dumps({"version": MANIFEST_VERSION, "seed": manifest.seed,
                         "counts": manifest.counts()}, sort_keys=True)]
    for r in manifest.records:
        lines.append(json.dumps({
            "path": r.image_path,
            "source": r.source_kind,
            "level": int(r.level),
            "delta_t": float(r.delta_t),
            "split": r.split,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path):
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest file (missing header)")

    def fail(line_no, msg):
        raise ManifestError(f"{path}:{line_no}: {msg}")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        fail(1, f"bad header JSON: {e}")
    if header.get("version") != MANIFEST_VERSION:
        fail(1, f"unsupported manifest version {header.get('version')!r}")

    records = []
    seen = set()
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            fail(line_no, f"bad record JSON: {e}")
        for key in ("path", "source", "level", "delta_t", "split"):
            if key not in obj:
                fail(line_no, f"missing key {key!r}")
        if obj["source"] not in SOURCE_KINDS:
            fail(line_no, f"unknown source {obj['source']!r}")
        if obj["level"] not in (1, 2, 3):
            fail(line_no, f"unknown level {obj['level']!r}")
        if obj["split"] not in SPLITS:
            fail(line_no, f"unknown split {obj['split']!r}")
        dt = obj["delta_t"]
        if not isinstance(dt, (int, float)) or not math.isfinite(dt) or dt < 0:
            fail(line_no, f"delta_t must be finite and >= 0, got {dt!r}")
        if obj["path"] in seen:
            fail(line_no, f"duplicate image path {obj['path']!r}")
        seen.add(obj["path"])
        records.append(SampleRecord(image_path=obj["path"], source_kind=obj["source"],
                                    level=CrackLevel(obj["level"]), delta_t=float(dt),
                                    split=obj["split"]))
    return Manifest(records=records, seed=int(header.get("seed", 0)))
