"""Marker overlay, frame stitching, and resolution presets.

Markers are filled circles with the numeric object id centered on top, drawn
in ascending id order so output rasters are reproducible. Dropout removes a
deterministic subset of ids (seed + id set decide, nothing else), mirroring
robustness experiments that delete a fraction of markers or adapt their size.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from typing import Sequence

from PIL import Image, ImageDraw, ImageFont

logger = logging.getLogger(__name__)

# preset name -> (width, height); the two HD presets share a resolution and
# differ in how many frames the pipeline samples.
PRESETS = {"base": (128, 123), "hd": (512, 490), "hdm": (512, 490)}
PRESET_FRAME_COUNT = {"base": 8, "hd": 8, "hdm": 32}

ADAPTIVE_RADIUS_MIN = 3
ADAPTIVE_RADIUS_MAX = 14


@dataclass(frozen=True)
class MarkerStyle:
    radius: int = 6                 # px at a 512-wide image, scaled with width
    adaptive: bool = False          # radius from point count instead
    fill: tuple[int, int, int] = (30, 110, 220)
    outline: tuple[int, int, int] = (255, 255, 255)
    text: tuple[int, int, int] = (255, 255, 255)
    text_size: int = 12             # px at a 512-wide image, scaled with width
    dropout_fraction: float = 0.0
    dropout_seed: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("marker radius must be positive")
        if not (0.0 <= self.dropout_fraction < 1.0):
            raise ValueError("dropout_fraction must be in [0, 1)")


@dataclass(frozen=True)
class DrawMarker:
    """One marker to draw: id, pixel position, and a size weight.

    weight is the number of projected points behind the marker; only the
    adaptive radius mode reads it.
    """

    object_id: int
    u: float
    v: float
    weight: int = 0


@dataclass(frozen=True)
class StitchedImage:
    image: Image.Image
    grid: tuple[int, int]
    tile_size: tuple[int, int]


def select_dropout(object_ids: Sequence[int], fraction: float, seed: int) -> set[int]:
    """The dropped id subset: floor(fraction * K) ids, fixed by (seed, ids)."""
    ids = sorted(object_ids)
    n_drop = math.floor(fraction * len(ids))
    if n_drop == 0:
        return set()
    return set(random.Random(seed).sample(ids, n_drop))


def adaptive_radius(weight: int) -> int:
    """Radius grows with the square root of the projected point count."""
    r = round(math.sqrt(max(weight, 0)) / 3.0)
    return max(ADAPTIVE_RADIUS_MIN, min(ADAPTIVE_RADIUS_MAX, r))


def _scaled(base: int, width: int, floor: int) -> int:
    return max(floor, round(base * width / 512))


def _font(size: int):
    try:
        return ImageFont.load_default(size=size)
    except (OSError, TypeError):
        return ImageFont.load_default()


def overlay_markers(image: Image.Image, markers: Sequence[DrawMarker],
                    style: MarkerStyle = MarkerStyle()) -> Image.Image:
    """Draw markers onto a copy of the image.

    Out-of-bounds markers are skipped (counted in a warning); the id dropout
    subset comes from select_dropout so reruns draw the same markers.
    """
    out = image.copy().convert("RGB")
    if not markers:
        return out
    drawer = ImageDraw.Draw(out)
    width, height = out.size
    dropped = select_dropout([m.object_id for m in markers],
                             style.dropout_fraction, style.dropout_seed)
    font = _font(_scaled(style.text_size, width, 8))

    skipped = 0
    for marker in sorted(markers, key=lambda m: m.object_id):
        if marker.object_id in dropped:
            continue
        if not (0 <= marker.u < width and 0 <= marker.v < height):
            skipped += 1
            continue
        if style.adaptive:
            radius = adaptive_radius(marker.weight)
        else:
            radius = _scaled(style.radius, width, 2)
        u, v = marker.u, marker.v
        drawer.ellipse(
            [u - radius, v - radius, u + radius, v + radius],
            fill=style.fill, outline=style.outline,
        )
        label = str(marker.object_id)
        box = drawer.textbbox((0, 0), label, font=font)
        tw, th = box[2] - box[0], box[3] - box[1]
        drawer.text((u - tw / 2 - box[0], v - th / 2 - box[1]), label,
                    fill=style.text, font=font)
    if skipped:
        logger.warning("skipped %d out-of-bounds markers", skipped)
    return out


def stitch(images: Sequence[Image.Image], rows: int, cols: int) -> StitchedImage:
    """Row-major grid of uniformly sized tiles."""
    if len(images) != rows * cols:
        raise ValueError(f"expected {rows * cols} images for a {rows}x{cols} grid, "
                         f"got {len(images)}")
    tile_w, tile_h = images[0].size
    for i, img in enumerate(images):
        if img.size != (tile_w, tile_h):
            raise ValueError(
                f"tile {i} is {img.size}, expected uniform {(tile_w, tile_h)}"
            )
    canvas = Image.new("RGB", (cols * tile_w, rows * tile_h))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        canvas.paste(img.convert("RGB"), (c * tile_w, r * tile_h))
    return StitchedImage(canvas, (rows, cols), (tile_w, tile_h))


def grid_for(count: int) -> tuple[int, int]:
    """Stitch grid: 2 rows when the count splits evenly, else one row."""
    if count == 8:
        return (2, 4)
    if count % 2 == 0 and count > 1:
        return (2, count // 2)
    return (1, count)


def resize_preset(image: Image.Image, preset: str) -> Image.Image:
    """Resize to the preset's exact dimensions (bilinear; aspect may distort)."""
    if preset not in PRESETS:
        raise KeyError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    target = PRESETS[preset]
    if image.size == target:
        return image.copy()
    return image.resize(target, Image.Resampling.BILINEAR)
