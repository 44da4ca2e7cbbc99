import random

import numpy as np
import pytest
from PIL import Image

from active_look.arbitration import (
    ArbitrationConfig,
    ConsensusPartition,
    DoubtfulProposal,
    Proposal,
    SelectionResult,
    TrustedRegion,
    arbitrate,
    select_budgeted,
)
from active_look.errors import DegenerateBox
from active_look.geometry import BBox, ImageDims
from active_look.rendering import (
    RenderStyle,
    highlight_footprint,
    render_highlight,
    render_views,
    render_zoom,
    resize_long_edge_cap,
    save_views,
    zoom_window,
)

CFG = ArbitrationConfig()


def empty_partition():
    return ConsensusPartition(trusted=(), doubtful=(), gamma=0.0, tau_effective=0.6)


def partition_with(trusted_boxes=(), doubtful_boxes=()):
    trusted = tuple(
        TrustedRegion(
            box=BBox(*b),
            label="dog",
            score=0.9,
            contributors=(Proposal(BBox(*b), "dog", 0.9, "A"), Proposal(BBox(*b), "dog", 0.9, "B")),
        )
        for b in trusted_boxes
    )
    doubtful = tuple(
        DoubtfulProposal(proposal=Proposal(BBox(*b), "cat", 0.7, "A"), disagreement=1.0)
        for b in doubtful_boxes
    )
    total = len(trusted) + len(doubtful)
    return ConsensusPartition(
        trusted=trusted,
        doubtful=doubtful,
        gamma=len(doubtful) / total if total else 0.0,
        tau_effective=0.6,
    )


def white_image(w=100, h=100):
    return Image.new("RGB", (w, h), (255, 255, 255))


class TestRenderHighlight:
    def test_empty_partition_is_identical_copy(self):
        img = white_image()
        out = render_highlight(img, empty_partition(), RenderStyle())
        assert out.size == img.size
        assert out.tobytes() == img.tobytes()
        assert out is not img

    def test_dimensions_preserved(self):
        img = white_image(123, 47)
        out = render_highlight(img, partition_with([(10, 10, 40, 30)]), RenderStyle())
        assert out.size == (123, 47)

    def test_input_not_mutated(self):
        img = white_image()
        before = img.tobytes()
        render_highlight(img, partition_with([(10, 10, 40, 40)]), RenderStyle())
        assert img.tobytes() == before

    def test_changes_confined_to_footprint(self):
        img = white_image()
        style = RenderStyle()
        partition = partition_with([(10, 10, 40, 40)], [(60, 60, 90, 90)])
        out = render_highlight(img, partition, style)
        changed = np.any(np.array(out) != np.array(img), axis=2)
        allowed = np.array(highlight_footprint(ImageDims(100, 100), partition, style))
        assert not changed[~allowed].any()

    def test_perimeter_colors(self):
        img = white_image()
        style = RenderStyle(draw_labels=False, line_width=2)
        partition = partition_with([(10, 10, 40, 40)], [(60, 60, 90, 90)])
        out = render_highlight(img, partition, style)
        px = out.load()
        assert px[25, 10] == style.trusted_color  # top edge of trusted box
        assert px[75, 60] == style.doubtful_color  # top edge of doubtful box

    def test_deterministic(self):
        img = white_image()
        partition = partition_with([(10, 10, 40, 40)], [(60, 60, 90, 90)])
        a = render_highlight(img, partition, RenderStyle())
        b = render_highlight(img, partition, RenderStyle())
        assert a.tobytes() == b.tobytes()

    def test_auto_line_width_scales_with_image(self):
        assert RenderStyle().resolve_line_width(ImageDims(100, 100)) == 2
        assert RenderStyle().resolve_line_width(ImageDims(2000, 1000)) == 8


class TestRenderZoom:
    def test_full_image_aspect_preserved(self):
        img = Image.new("RGB", (768, 384), (10, 20, 30))
        out = render_zoom(img, BBox(0, 0, 768, 384), 1.0, 384)
        assert out.size == (384, 192)

    def test_context_expanded_square_crop(self):
        img = white_image()
        out = render_zoom(img, BBox(40, 40, 60, 60), 1.5, 384)
        assert out.size == (384, 384)

    def test_crop_window_matches_expansion(self):
        window = zoom_window(BBox(40, 40, 60, 60), 1.5, ImageDims(100, 100))
        assert window == BBox(35, 35, 65, 65)

    def test_matches_manual_crop_resize(self):
        rng = random.Random(5)
        img = Image.new("RGB", (100, 100))
        img.putdata([(rng.randrange(256),) * 3 for _ in range(100 * 100)])
        out = render_zoom(img, BBox(40, 40, 60, 60), 1.5, 384)
        expected = img.crop((35, 35, 65, 65)).resize((384, 384), Image.Resampling.BILINEAR)
        assert out.tobytes() == expected.tobytes()

    def test_identity_when_crop_matches_target(self):
        img = white_image(100, 100)
        out = render_zoom(img, BBox(10, 10, 40, 40), 1.0, 30)
        assert out.size == (30, 30)
        assert out.tobytes() == img.crop((10, 10, 40, 40)).tobytes()

    def test_outside_image_raises(self):
        with pytest.raises(DegenerateBox):
            render_zoom(white_image(), BBox(-50, -50, -10, -10), 1.5, 384)

    def test_magnification_matches_resolution_gain(self):
        # square crop not clipped by bounds: output px per source px equals
        # the crop's resolution gain once both views are normalized to the
        # same display size
        from active_look.geometry import resolution_gain

        img = white_image(100, 100)
        crop_box = BBox(35, 35, 65, 65)
        out = render_zoom(img, crop_box, 1.0, 384)
        px_per_src = out.width / crop_box.width
        gain = resolution_gain(crop_box, ImageDims(100, 100))
        display_scale = 384 / 100
        assert px_per_src == pytest.approx(gain * display_scale, abs=1 / crop_box.width)


class TestResizeCap:
    def test_no_upscale(self):
        img = white_image(100, 80)
        out = resize_long_edge_cap(img, 384)
        assert out.size == (100, 80)
        assert out.tobytes() == img.tobytes()

    def test_downscale_long_edge(self):
        img = white_image(768, 384)
        out = resize_long_edge_cap(img, 384)
        assert out.size == (384, 192)


class TestRenderViews:
    def test_empty_selection_single_global_view(self):
        views = render_views(
            white_image(),
            empty_partition(),
            SelectionResult((), 0, ()),
            RenderStyle(),
        )
        assert not views.zoom_views
        assert views.total_visual_tokens == 576
        assert views.global_view.tobytes() == white_image().tobytes()

    def test_two_zooms_token_total(self):
        a = [
            Proposal(BBox(10, 10, 30, 30), "dog", 0.9, "A"),
            Proposal(BBox(50, 50, 80, 80), "cat", 0.8, "A"),
        ]
        partition = arbitrate(a, [], CFG)
        selection = select_budgeted(partition, ArbitrationConfig(budget=1152))
        views = render_views(white_image(), partition, selection, RenderStyle())
        assert len(views.zoom_views) == 2
        assert views.total_visual_tokens == 3 * 576 == 1728
        assert [z.source for z in views.zoom_views] == list(selection.selected)

    def test_failing_zoom_skipped_and_recorded(self):
        bad = DoubtfulProposal(Proposal(BBox(-50, -50, -10, -10), "cat", 0.7, "A"), 1.0)
        partition = ConsensusPartition((), (bad,), 1.0, 0.6)
        selection = SelectionResult((bad,), 576, ())
        views = render_views(white_image(), partition, selection, RenderStyle())
        assert not views.zoom_views
        assert len(views.zoom_failures) == 1
        assert views.total_visual_tokens == 576

    def test_save_views_filenames(self, tmp_path):
        a = [Proposal(BBox(10, 10, 30, 30), "dog", 0.9, "A")]
        partition = arbitrate(a, [], CFG)
        selection = select_budgeted(partition, CFG)
        views = render_views(white_image(), partition, selection, RenderStyle())
        paths = save_views(views, tmp_path, "t01")
        assert [p.name for p in paths] == ["t01_global.png", "t01_zoom_1.png"]
        assert all(p.exists() for p in paths)
