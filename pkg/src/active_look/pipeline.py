"""End-to-end orchestration: extract, propose, arbitrate, render, reason.

One run executes the full verification loop against a scene image and a
question, producing a Verdict plus a PipelineTrace that records every stage
(targets, both proposal sets, the partition, the selection, view metadata,
prompts, replies, the token ledger, timings, and flags) and serializes
losslessly to a schema-versioned JSON document.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import arbitration as arb
from .arbitration import (
    ArbitrationConfig,
    ConsensusPartition,
    DoubtfulProposal,
    Proposal,
    SelectionResult,
    TrustedRegion,
    select_budgeted,
)
from .config import PipelineConfig
from .errors import (
    ExpertUnavailable,
    ImageUnreadable,
    MalformedExtraction,
    MalformedResponse,
    PipelineAbort,
    ReasonerUnavailable,
)
from .experts import ExpertAdapter, SceneImage, inject_noise, load_image, propose
from .geometry import BBox
from .reasoner import (
    ReasonerAdapter,
    ReasonerRequest,
    Verdict,
    fallback_targets,
    parse_target_reply,
    parse_yesno,
    stage1_prompt,
    stage3_prompt,
)
from .rendering import RenderedViewSet, render_views, resize_long_edge_cap, save_views

TRACE_SCHEMA_VERSION = 1

_ADAPTER_ERRORS = (ExpertUnavailable, ReasonerUnavailable, MalformedResponse, ImageUnreadable)


def estimate_text_tokens(text: str) -> int:
    """Deterministic size estimate: one token per four characters, rounded up."""
    return (len(text) + 3) // 4


@dataclass(frozen=True)
class TokenLedger:
    """Visual/text token accounting for the two perception rounds.

    Round 1 sends the original image once for target extraction; round 2
    sends the detection visualization, the original again, and any zoom
    views, so round2_visual = (2 + #zooms) * per_view_cost.
    """

    round1_visual: int
    round2_visual: int
    input_text_estimate: int
    output_text_estimate: int


@dataclass
class PipelineTrace:
    """Complete record of one pipeline run."""

    trace_id: str
    item_id: str
    image_id: str
    query: str
    targets: list[str] = field(default_factory=list)
    proposals_a: list[Proposal] = field(default_factory=list)
    proposals_b: list[Proposal] = field(default_factory=list)
    provisional_gamma: float | None = None
    provisional_tau: float | None = None
    partition: ConsensusPartition | None = None
    selection: SelectionResult | None = None
    views: dict | None = None
    detection_summary: str | None = None
    prompts: dict = field(default_factory=dict)
    replies: dict = field(default_factory=dict)
    verdict: Verdict | None = None
    ledger: TokenLedger | None = None
    timings: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": TRACE_SCHEMA_VERSION,
            "trace_id": self.trace_id,
            "item_id": self.item_id,
            "image_id": self.image_id,
            "query": self.query,
            "targets": list(self.targets),
            "proposals_a": [_proposal_to_dict(p) for p in self.proposals_a],
            "proposals_b": [_proposal_to_dict(p) for p in self.proposals_b],
            "provisional_gamma": self.provisional_gamma,
            "provisional_tau": self.provisional_tau,
            "partition": _partition_to_dict(self.partition),
            "selection": _selection_to_dict(self.selection),
            "views": self.views,
            "detection_summary": self.detection_summary,
            "prompts": dict(self.prompts),
            "replies": dict(self.replies),
            "verdict": None
            if self.verdict is None
            else {"answer": self.verdict.answer, "raw_text": self.verdict.raw_text},
            "ledger": None
            if self.ledger is None
            else {
                "round1_visual": self.ledger.round1_visual,
                "round2_visual": self.ledger.round2_visual,
                "input_text_estimate": self.ledger.input_text_estimate,
                "output_text_estimate": self.ledger.output_text_estimate,
            },
            "timings": dict(self.timings),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineTrace":
        if data.get("schema") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema: {data.get('schema')!r}")
        verdict = data.get("verdict")
        ledger = data.get("ledger")
        return cls(
            trace_id=data["trace_id"],
            item_id=data["item_id"],
            image_id=data["image_id"],
            query=data["query"],
            targets=list(data.get("targets", [])),
            proposals_a=[_proposal_from_dict(p) for p in data.get("proposals_a", [])],
            proposals_b=[_proposal_from_dict(p) for p in data.get("proposals_b", [])],
            provisional_gamma=data.get("provisional_gamma"),
            provisional_tau=data.get("provisional_tau"),
            partition=_partition_from_dict(data.get("partition")),
            selection=_selection_from_dict(data.get("selection")),
            views=data.get("views"),
            detection_summary=data.get("detection_summary"),
            prompts=dict(data.get("prompts", {})),
            replies=dict(data.get("replies", {})),
            verdict=None if verdict is None else Verdict(**verdict),
            ledger=None if ledger is None else TokenLedger(**ledger),
            timings=dict(data.get("timings", {})),
            flags=dict(data.get("flags", {})),
        )

    def to_json(self, include_timings: bool = True) -> str:
        data = self.to_dict()
        if not include_timings:
            data.pop("timings")
        return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineTrace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _box_to_list(b: BBox) -> list[float]:
    return [b.x1, b.y1, b.x2, b.y2]


def _proposal_to_dict(p: Proposal) -> dict:
    return {"box": _box_to_list(p.box), "label": p.label, "score": p.score, "expert": p.expert}


def _proposal_from_dict(d: dict) -> Proposal:
    return Proposal(box=BBox(*d["box"]), label=d["label"], score=d["score"], expert=d["expert"])


def _doubtful_to_dict(d: DoubtfulProposal) -> dict:
    return {"proposal": _proposal_to_dict(d.proposal), "disagreement": d.disagreement}


def _doubtful_from_dict(d: dict) -> DoubtfulProposal:
    return DoubtfulProposal(
        proposal=_proposal_from_dict(d["proposal"]), disagreement=d["disagreement"]
    )


def _partition_to_dict(p: ConsensusPartition | None) -> dict | None:
    if p is None:
        return None
    return {
        "trusted": [
            {
                "box": _box_to_list(t.box),
                "label": t.label,
                "score": t.score,
                "pair_iou": t.pair_iou,
                "contributors": [_proposal_to_dict(c) for c in t.contributors],
            }
            for t in p.trusted
        ],
        "doubtful": [_doubtful_to_dict(d) for d in p.doubtful],
        "gamma": p.gamma,
        "tau_effective": p.tau_effective,
        "provisional_gamma": p.provisional_gamma,
    }


def _partition_from_dict(d: dict | None) -> ConsensusPartition | None:
    if d is None:
        return None
    trusted = tuple(
        TrustedRegion(
            box=BBox(*t["box"]),
            label=t["label"],
            score=t["score"],
            pair_iou=t["pair_iou"],
            contributors=tuple(_proposal_from_dict(c) for c in t["contributors"]),
        )
        for t in d["trusted"]
    )
    return ConsensusPartition(
        trusted=trusted,
        doubtful=tuple(_doubtful_from_dict(x) for x in d["doubtful"]),
        gamma=d["gamma"],
        tau_effective=d["tau_effective"],
        provisional_gamma=d.get("provisional_gamma", 0.0),
    )


def _selection_to_dict(s: SelectionResult | None) -> dict | None:
    if s is None:
        return None
    return {
        "selected": [_doubtful_to_dict(d) for d in s.selected],
        "spent_tokens": s.spent_tokens,
        "skipped": [_doubtful_to_dict(d) for d in s.skipped],
    }


def _selection_from_dict(d: dict | None) -> SelectionResult | None:
    if d is None:
        return None
    return SelectionResult(
        selected=tuple(_doubtful_from_dict(x) for x in d["selected"]),
        spent_tokens=d["spent_tokens"],
        skipped=tuple(_doubtful_from_dict(x) for x in d["skipped"]),
    )


def _views_metadata(views: RenderedViewSet) -> dict:
    return {
        "global": {"width": views.global_view.width, "height": views.global_view.height},
        "overlay_size": list(views.overlay_size),
        "zooms": [
            {
                "label": z.source.proposal.label,
                "box": _box_to_list(z.source.proposal.box),
                "window": _box_to_list(z.window),
                "width": z.image.width,
                "height": z.image.height,
            }
            for z in views.zoom_views
        ],
        "per_view_cost": views.per_view_cost,
        "total_visual_tokens": views.total_visual_tokens,
        "zoom_failures": [
            {
                "label": f.source.proposal.label,
                "box": _box_to_list(f.source.proposal.box),
                "reason": f.reason,
            }
            for f in views.zoom_failures
        ],
    }


def compute_trace_id(image_id: str, query: str, cfg: PipelineConfig) -> str:
    """Deterministic run identifier: same scene, question, and config knobs
    that alter behavior yield the same id."""
    key = "\n".join(
        [
            image_id,
            query,
            cfg.policy,
            f"noise={cfg.noise.enabled}:{cfg.noise.max_iou}",
            f"seed={cfg.rng_seed}",
        ]
    )
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:12]


def summarize_detections(partition: ConsensusPartition, selection: SelectionResult) -> str:
    """Render the evidence summary embedded in the final-inference prompt.

    Trusted regions first (confidence descending), then doubtful proposals
    (disagreement descending); selected-for-zoom entries get a [zoomed]
    suffix; coordinates are rounded to integers.
    """
    if partition.is_empty:
        return "No objects detected."
    selected = set(selection.selected)
    lines = []
    for t in partition.trusted:
        lines.append(f"✓ CONFIRMED: {t.label} (conf {t.score:.2f}) at [{_fmt_box(t.box)}]")
    for d in partition.doubtful:
        suffix = " [zoomed]" if d in selected else ""
        lines.append(
            f"SUSPICIOUS: {d.proposal.label} (conf {d.proposal.score:.2f}) "
            f"at [{_fmt_box(d.proposal.box)}]{suffix}"
        )
    return "\n".join(lines)


def _fmt_box(b: BBox) -> str:
    return f"{round(b.x1)},{round(b.y1)},{round(b.x2)},{round(b.y2)}"


class _Timer:
    def __init__(self, timings: dict, stage: str):
        self.timings = timings
        self.stage = stage

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timings[self.stage] = time.perf_counter() - self._t0
        return False


def run(
    image: SceneImage | str | Path,
    query: str,
    expert_a: ExpertAdapter,
    expert_b: ExpertAdapter,
    reasoner: ReasonerAdapter,
    cfg: PipelineConfig | None = None,
    item_id: str | None = None,
    vocabulary: set[str] | None = None,
    out_dir: str | Path | None = None,
) -> tuple[Verdict, PipelineTrace]:
    """Execute one full verification run; returns (verdict, trace).

    Adapter failures raise PipelineAbort carrying the partial trace. When the
    reasoner extracts no targets or both experts return nothing, rendering
    degrades to the plain global view and the condition is flagged. With
    out_dir set, the rendered views are written there as PNGs and their file
    names recorded in the trace.
    """
    cfg = cfg or PipelineConfig()
    if not isinstance(image, SceneImage):
        image = load_image(image)

    trace = PipelineTrace(
        trace_id=compute_trace_id(image.image_id, query, cfg),
        item_id=item_id or image.image_id,
        image_id=image.image_id,
        query=query,
        flags={"policy": cfg.policy, "noise_enabled": cfg.noise.enabled},
    )
    try:
        return _run_stages(
            image, query, expert_a, expert_b, reasoner, cfg, trace, vocabulary, out_dir
        )
    except _ADAPTER_ERRORS as exc:
        trace.flags["error"] = f"{type(exc).__name__}: {exc}"
        raise PipelineAbort(str(exc), trace=trace) from exc


def _run_stages(
    image: SceneImage,
    query: str,
    expert_a: ExpertAdapter,
    expert_b: ExpertAdapter,
    reasoner: ReasonerAdapter,
    cfg: PipelineConfig,
    trace: PipelineTrace,
    vocabulary: set[str] | None,
    out_dir: str | Path | None = None,
) -> tuple[Verdict, PipelineTrace]:
    arb_cfg: ArbitrationConfig = cfg.arbitration

    with _Timer(trace.timings, "extract"):
        prompt1 = stage1_prompt(query)
        trace.prompts["stage1"] = prompt1
        reply1 = reasoner.generate(
            ReasonerRequest(images=(image.raster,), prompt=prompt1, temperature=cfg.temperature)
        )
        trace.replies["stage1"] = reply1
        try:
            targets = parse_target_reply(reply1)
            trace.flags["extraction_fallback"] = False
        except MalformedExtraction:
            targets = fallback_targets(query, vocabulary)
            trace.flags["extraction_fallback"] = True
    trace.targets = targets
    trace.flags["empty_targets"] = not targets

    with _Timer(trace.timings, "propose"):
        if targets:
            with ThreadPoolExecutor(max_workers=2) as pool:
                fut_a = pool.submit(propose, expert_a, image, targets, cfg.score_threshold_a)
                fut_b = pool.submit(propose, expert_b, image, targets, cfg.score_threshold_b)
                proposals_a = fut_a.result()
                proposals_b = fut_b.result()
        else:
            proposals_a, proposals_b = [], []
        if cfg.noise.enabled:
            proposals_a = inject_noise(proposals_a, cfg.noise.max_iou, image.dims, cfg.rng_seed)
            proposals_b = inject_noise(
                proposals_b, cfg.noise.max_iou, image.dims, cfg.rng_seed + 1
            )
    trace.proposals_a = proposals_a
    trace.proposals_b = proposals_b
    trace.flags["empty_proposals"] = not proposals_a and not proposals_b

    with _Timer(trace.timings, "arbitrate"):
        if cfg.policy == "union":
            partition = arb.union_partition(proposals_a, proposals_b, arb_cfg)
        elif cfg.policy == "none":
            partition = arb.empty_partition(arb_cfg)
        else:
            partition = arb.arbitrate(proposals_a, proposals_b, arb_cfg)
        selection = select_budgeted(partition, arb_cfg)
    trace.provisional_gamma = partition.provisional_gamma
    trace.provisional_tau = arb_cfg.tau_base
    trace.partition = partition
    trace.selection = selection

    with _Timer(trace.timings, "render"):
        views = render_views(
            image.raster,
            partition,
            selection,
            cfg.style,
            zoom_scale=cfg.zoom_scale,
            target_long_edge=cfg.target_long_edge,
            per_view_cost=arb_cfg.per_view_cost,
        )
        original_view = resize_long_edge_cap(image.raster, cfg.target_long_edge)
    trace.views = _views_metadata(views)
    if out_dir is not None:
        paths = save_views(views, out_dir, trace.trace_id)
        trace.views["files"] = [p.name for p in paths]
    trace.flags["zoom_skips"] = len(views.zoom_failures)

    with _Timer(trace.timings, "reason"):
        summary = summarize_detections(partition, selection)
        trace.detection_summary = summary
        zoom_labels = [z.source.proposal.label for z in views.zoom_views]
        prompt3 = stage3_prompt(query, summary, zoom_labels)
        trace.prompts["stage3"] = prompt3
        images = (views.global_view, original_view, *(z.image for z in views.zoom_views))
        reply3 = reasoner.generate(
            ReasonerRequest(images=images, prompt=prompt3, temperature=cfg.temperature)
        )
        trace.replies["stage3"] = reply3
        verdict = parse_yesno(reply3)
    trace.verdict = verdict

    per_view = arb_cfg.per_view_cost
    trace.ledger = TokenLedger(
        round1_visual=per_view,
        round2_visual=(2 + len(views.zoom_views)) * per_view,
        input_text_estimate=estimate_text_tokens(prompt1) + estimate_text_tokens(prompt3),
        output_text_estimate=estimate_text_tokens(reply1) + estimate_text_tokens(reply3),
    )
    return verdict, trace


def render_run_views(
    image: SceneImage,
    partition: ConsensusPartition,
    selection: SelectionResult,
    cfg: PipelineConfig,
) -> RenderedViewSet:
    """Views-only entry point used by the render CLI subcommand."""
    return render_views(
        image.raster,
        partition,
        selection,
        cfg.style,
        zoom_scale=cfg.zoom_scale,
        target_long_edge=cfg.target_long_edge,
        per_view_cost=cfg.arbitration.per_view_cost,
    )


def run_fixture(
    fixture,
    cfg: PipelineConfig | None = None,
    reasoner: ReasonerAdapter | None = None,
    scene_ids: list[str] | None = None,
    out_dir: str | Path | None = None,
):
    """Run every questioned fixture scene offline; yields (scene, verdict, trace).

    Uses the fixture's recorded detections for both expert slots and, unless
    another reasoner is supplied, the rule-based mock. Scenes are processed
    in sorted image-id order for reproducible output.
    """
    from .experts import FixtureExpert
    from .reasoner import MockReasoner

    cfg = cfg or PipelineConfig()
    reasoner = reasoner or MockReasoner(fixture)
    expert_a = FixtureExpert(fixture, "A")
    expert_b = FixtureExpert(fixture, "B")
    vocabulary = fixture.labels()
    ids = scene_ids if scene_ids is not None else sorted(fixture.scenes)
    results = []
    for image_id in ids:
        scene = fixture.scenes[image_id]
        if not scene.question:
            continue
        image = load_image(scene.image_path, image_id=scene.image_id)
        verdict, trace = run(
            image,
            scene.question,
            expert_a,
            expert_b,
            reasoner,
            cfg,
            vocabulary=vocabulary,
            out_dir=out_dir,
        )
        results.append((scene, verdict, trace))
    return results
