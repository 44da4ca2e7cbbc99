"""Auxiliary view synthesis: global highlight overlays and zoom crops.

The global view strokes trusted regions in green and doubtful regions in red
on a copy of the scene, preserving every pixel outside the strokes and label
text. Zoom views crop a context-expanded window around a disputed box and
rescale it so its long edge hits the model input size. All output is
deterministic: fixed bilinear resampling, the bundled default font, no
randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from .arbitration import ConsensusPartition, DoubtfulProposal, SelectionResult
from .errors import DegenerateBox
from .geometry import BBox, ImageDims, expand_and_clamp

RGB = tuple[int, int, int]

DEFAULT_TRUSTED_COLOR: RGB = (0, 200, 0)
DEFAULT_DOUBTFUL_COLOR: RGB = (220, 0, 0)


@dataclass(frozen=True)
class RenderStyle:
    """Stroke colors and label options for the highlight overlay.

    line_width of None derives the width from the image size:
    max(2, round(0.004 * long_edge)).
    """

    trusted_color: RGB = DEFAULT_TRUSTED_COLOR
    doubtful_color: RGB = DEFAULT_DOUBTFUL_COLOR
    line_width: int | None = None
    draw_labels: bool = True

    def __post_init__(self):
        for color in (self.trusted_color, self.doubtful_color):
            if len(color) != 3 or any(not (0 <= c <= 255) for c in color):
                raise ValueError(f"invalid RGB color: {color}")
        if self.line_width is not None and self.line_width < 1:
            raise ValueError(f"line_width must be >= 1: {self.line_width}")

    def resolve_line_width(self, dims: ImageDims) -> int:
        if self.line_width is not None:
            return self.line_width
        return max(2, round(0.004 * max(dims.width, dims.height)))


@dataclass(frozen=True)
class ZoomView:
    source: DoubtfulProposal
    window: BBox
    image: Image.Image


@dataclass(frozen=True)
class ZoomFailure:
    source: DoubtfulProposal
    reason: str


@dataclass(frozen=True)
class RenderedViewSet:
    """One global highlight view plus zoom views in selection order."""

    global_view: Image.Image
    zoom_views: tuple[ZoomView, ...]
    per_view_cost: int
    total_visual_tokens: int
    overlay_size: tuple[int, int]
    zoom_failures: tuple[ZoomFailure, ...] = field(default=())


def _dims(image: Image.Image) -> ImageDims:
    return ImageDims(width=image.width, height=image.height)


def _rect_pixels(box: BBox, dims: ImageDims) -> tuple[int, int, int, int] | None:
    """Inclusive integer pixel rectangle for stroking, clipped to the image."""
    x1 = max(0, round(box.x1))
    y1 = max(0, round(box.y1))
    x2 = min(dims.width - 1, round(box.x2) - 1)
    y2 = min(dims.height - 1, round(box.y2) - 1)
    if x2 < x1 or y2 < y1:
        return None
    return x1, y1, x2, y2


def _label_anchor(rect: tuple[int, int, int, int], text_h: int, dims: ImageDims, lw: int) -> tuple[int, int]:
    x1, y1, _, _ = rect
    y = y1 - text_h - 1
    if y < 0:
        y = min(y1 + lw + 1, dims.height - 1)
    return (min(x1 + lw + 1, dims.width - 1), y)


def _regions(partition: ConsensusPartition) -> list[tuple[BBox, str, bool]]:
    out = [(t.box, t.label, True) for t in partition.trusted]
    out += [(d.proposal.box, d.proposal.label, False) for d in partition.doubtful]
    return out


def render_highlight(
    image: Image.Image, partition: ConsensusPartition, style: RenderStyle
) -> Image.Image:
    """Stroke trusted/doubtful region outlines on a copy of the image.

    Output has the input's exact dimensions; pixels outside the stroked
    perimeters and label text are untouched.
    """
    out = image.convert("RGB") if image.mode != "RGB" else image.copy()
    dims = _dims(image)
    lw = style.resolve_line_width(dims)
    draw = ImageDraw.Draw(out)
    font = ImageFont.load_default()
    for box, label, trusted in _regions(partition):
        rect = _rect_pixels(box, dims)
        if rect is None:
            continue
        color = style.trusted_color if trusted else style.doubtful_color
        draw.rectangle(rect, outline=color, width=lw)
        if style.draw_labels:
            bbox = draw.textbbox((0, 0), label, font=font)
            text_h = bbox[3] - bbox[1]
            draw.text(_label_anchor(rect, text_h, dims, lw), label, fill=color, font=font)
    return out


def highlight_footprint(
    dims: ImageDims, partition: ConsensusPartition, style: RenderStyle
) -> Image.Image:
    """Mask ("1" mode) of every pixel render_highlight is allowed to touch.

    The stroke footprint is computed geometrically (outer rectangle minus the
    interior left inside the stroke width) rather than by replaying the
    drawing calls, with a one-pixel safety margin; label footprints come from
    font metrics with the same margin.
    """
    mask = Image.new("1", (dims.width, dims.height), 0)
    draw = ImageDraw.Draw(mask)
    lw = style.resolve_line_width(dims)
    font = ImageFont.load_default()
    pad = 1
    for box, label, _ in _regions(partition):
        rect = _rect_pixels(box, dims)
        if rect is None:
            continue
        x1, y1, x2, y2 = rect
        outer = (x1 - pad, y1 - pad, x2 + pad, y2 + pad)
        inner = (x1 + lw + pad, y1 + lw + pad, x2 - lw - pad, y2 - lw - pad)
        if inner[0] > inner[2] or inner[1] > inner[3]:
            draw.rectangle(outer, fill=1)
        else:
            draw.rectangle((outer[0], outer[1], outer[2], inner[1]), fill=1)
            draw.rectangle((outer[0], inner[3], outer[2], outer[3]), fill=1)
            draw.rectangle((outer[0], outer[1], inner[0], outer[3]), fill=1)
            draw.rectangle((inner[2], outer[1], outer[2], outer[3]), fill=1)
        if style.draw_labels:
            tb = draw.textbbox((0, 0), label, font=font)
            text_h = tb[3] - tb[1]
            ax, ay = _label_anchor(rect, text_h, dims, lw)
            draw.rectangle(
                (ax + tb[0] - pad, ay + tb[1] - pad, ax + tb[2] + pad, ay + tb[3] + pad),
                fill=1,
            )
    return mask


def _fit_long_edge(width: int, height: int, target: int) -> tuple[int, int]:
    long_edge = max(width, height)
    if width >= height:
        return target, max(1, round(height * target / long_edge))
    return max(1, round(width * target / long_edge)), target


def resize_long_edge_cap(image: Image.Image, target_long_edge: int) -> Image.Image:
    """Downscale so the long edge is at most target_long_edge; never upscale."""
    if max(image.size) <= target_long_edge:
        return image.copy()
    w, h = _fit_long_edge(image.width, image.height, target_long_edge)
    return image.resize((w, h), Image.Resampling.BILINEAR)


def render_zoom(
    image: Image.Image, b: BBox, zoom_scale: float, target_long_edge: int
) -> Image.Image:
    """Crop a context-expanded window around the box and rescale it.

    The window is the box scaled by zoom_scale about its center, clipped to
    the image; the crop is resized (bilinear, aspect preserved) so its long
    edge equals target_long_edge, or returned at native size when it already
    matches. Raises DegenerateBox when the box lies outside the image.
    """
    crop = crop_zoom_window(image, b, zoom_scale)
    if max(crop.size) == target_long_edge:
        return crop
    w, h = _fit_long_edge(crop.width, crop.height, target_long_edge)
    return crop.resize((w, h), Image.Resampling.BILINEAR)


def zoom_window(b: BBox, zoom_scale: float, dims: ImageDims) -> BBox:
    """Integer-aligned crop window for a zoom on the given box."""
    expanded = expand_and_clamp(b, zoom_scale, dims)
    x1 = max(0, math.floor(expanded.x1))
    y1 = max(0, math.floor(expanded.y1))
    x2 = min(dims.width, math.ceil(expanded.x2))
    y2 = min(dims.height, math.ceil(expanded.y2))
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBox(f"zoom window for {b.as_tuple()} collapsed")
    return BBox(x1, y1, x2, y2)


def crop_zoom_window(image: Image.Image, b: BBox, zoom_scale: float) -> Image.Image:
    window = zoom_window(b, zoom_scale, _dims(image))
    return image.crop((int(window.x1), int(window.y1), int(window.x2), int(window.y2)))


def render_views(
    image: Image.Image,
    partition: ConsensusPartition,
    selection: SelectionResult,
    style: RenderStyle,
    zoom_scale: float = 1.5,
    target_long_edge: int = 384,
    per_view_cost: int = 576,
) -> RenderedViewSet:
    """Produce the global highlight view plus one zoom per selected proposal.

    The overlay is drawn at native resolution and then capped to the model
    input size. A zoom that collapses (box outside the image) is skipped and
    recorded, not fatal. Token total covers the rendered views only:
    (1 + #zooms) * per_view_cost.
    """
    overlay = render_highlight(image, partition, style)
    global_view = resize_long_edge_cap(overlay, target_long_edge)
    dims = _dims(image)

    zooms: list[ZoomView] = []
    failures: list[ZoomFailure] = []
    for d in selection.selected:
        try:
            window = zoom_window(d.proposal.box, zoom_scale, dims)
            zoom_img = render_zoom(image, d.proposal.box, zoom_scale, target_long_edge)
        except DegenerateBox as exc:
            failures.append(ZoomFailure(source=d, reason=str(exc)))
            continue
        zooms.append(ZoomView(source=d, window=window, image=zoom_img))

    return RenderedViewSet(
        global_view=global_view,
        zoom_views=tuple(zooms),
        per_view_cost=per_view_cost,
        total_visual_tokens=(1 + len(zooms)) * per_view_cost,
        overlay_size=(image.width, image.height),
        zoom_failures=tuple(failures),
    )


def save_views(views: RenderedViewSet, out_dir: str | Path, trace_id: str) -> list[Path]:
    """Write the view set as PNGs: <trace_id>_global.png, <trace_id>_zoom_<k>.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{trace_id}_global.png"]
    views.global_view.save(paths[0], format="PNG")
    for k, zoom in enumerate(views.zoom_views, start=1):
        path = out / f"{trace_id}_zoom_{k}.png"
        zoom.image.save(path, format="PNG")
        paths.append(path)
    return paths
