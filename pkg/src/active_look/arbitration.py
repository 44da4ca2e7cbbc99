"""Dual-expert consensus arbitration and budgeted selection of disputed regions.

Proposals from two detection experts are partitioned into a trusted set
(cross-expert matches) and a doubtful set (everything else). The conflict
ratio of a provisional partition adapts the IoU matching threshold, and the
doubtful set is ranked by disagreement for budgeted zoom verification.

All operations are pure and deterministic: matching and selection sort by
content, so permuting input order never changes the result.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .geometry import BBox, iou


def normalize_label(label: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return re.sub(r"\s+", " ", label.strip().lower())


@dataclass(frozen=True)
class Proposal:
    """One candidate region from a detection expert."""

    box: BBox
    label: str
    score: float
    expert: str

    def __post_init__(self):
        object.__setattr__(self, "label", normalize_label(self.label))
        if not self.label:
            raise ValueError("proposal label must be non-empty")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"proposal score out of [0,1]: {self.score}")
        if not self.expert:
            raise ValueError("proposal expert tag must be non-empty")


@dataclass(frozen=True)
class ArbitrationConfig:
    """Thresholds and budget for consensus arbitration.

    budget and per_view_cost are in visual tokens; the default 576 per view
    corresponds to one 384x384 view, and the default budget admits one zoom.
    """

    tau_base: float = 0.6
    delta: float = 0.1
    tau_low: float = 0.5
    tau_high: float = 0.7
    budget: int = 576
    per_view_cost: int = 576

    def __post_init__(self):
        if not (0.0 < self.tau_base < 1.0):
            raise ValueError(f"tau_base out of (0,1): {self.tau_base}")
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive: {self.delta}")
        if self.tau_base - self.delta <= 0.0 or self.tau_base + self.delta >= 1.0:
            raise ValueError("tau_base +/- delta must stay inside (0,1)")
        if not (0.0 <= self.tau_low < self.tau_high <= 1.0):
            raise ValueError("need 0 <= tau_low < tau_high <= 1")
        if self.budget < 0:
            raise ValueError(f"budget must be nonnegative: {self.budget}")
        if self.per_view_cost < 1:
            raise ValueError(f"per_view_cost must be positive: {self.per_view_cost}")


@dataclass(frozen=True)
class TrustedRegion:
    """A consensus region, merged from one cross-expert pair (or a single
    proposal under the trust-all policy)."""

    box: BBox
    label: str
    score: float
    contributors: tuple[Proposal, ...]
    pair_iou: float = 1.0


@dataclass(frozen=True)
class DoubtfulProposal:
    """An unmatched proposal with its cross-expert disagreement score."""

    proposal: Proposal
    disagreement: float


@dataclass(frozen=True)
class ConsensusPartition:
    """Result of arbitration: trusted regions, ranked doubtful proposals, the
    final conflict ratio, and the threshold that produced the partition."""

    trusted: tuple[TrustedRegion, ...]
    doubtful: tuple[DoubtfulProposal, ...]
    gamma: float
    tau_effective: float
    provisional_gamma: float = 0.0

    @property
    def is_empty(self) -> bool:
        return not self.trusted and not self.doubtful


@dataclass(frozen=True)
class SelectionResult:
    """Doubtful proposals chosen for zoom verification under the token budget."""

    selected: tuple[DoubtfulProposal, ...]
    spent_tokens: int
    skipped: tuple[DoubtfulProposal, ...]


def _box_key(b: BBox) -> tuple[float, float, float, float]:
    return (b.x1, b.y1, b.x2, b.y2)


def _proposal_key(p: Proposal) -> tuple:
    return (-p.score, *_box_key(p.box), p.label, p.expert)


def _doubtful_key(d: DoubtfulProposal) -> tuple:
    p = d.proposal
    return (-d.disagreement, -p.score, -p.box.area, *_box_key(p.box), p.label, p.expert)


def match_proposals(
    set_a: list[Proposal], set_b: list[Proposal], tau: float
) -> tuple[list[tuple[Proposal, Proposal, float]], list[Proposal], list[Proposal]]:
    """Greedy one-to-one matching of same-label proposals with IoU >= tau.

    Candidate pairs are visited in descending IoU order (ties broken by label,
    then box coordinates, then score), so the result is independent of input
    ordering. Returns (matches, unmatched_a, unmatched_b) with the unmatched
    lists in canonical order.
    """
    candidates = []
    for i, pa in enumerate(set_a):
        for j, pb in enumerate(set_b):
            if pa.label != pb.label:
                continue
            ov = iou(pa.box, pb.box)
            if ov >= tau:
                candidates.append((ov, i, j))
    candidates.sort(
        key=lambda c: (-c[0], _proposal_key(set_a[c[1]]), _proposal_key(set_b[c[2]]))
    )

    matches: list[tuple[Proposal, Proposal, float]] = []
    used_a: set[int] = set()
    used_b: set[int] = set()
    for ov, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append((set_a[i], set_b[j], ov))

    unmatched_a = sorted((p for i, p in enumerate(set_a) if i not in used_a), key=_proposal_key)
    unmatched_b = sorted((p for j, p in enumerate(set_b) if j not in used_b), key=_proposal_key)
    return matches, unmatched_a, unmatched_b


def adaptive_threshold(gamma: float, cfg: ArbitrationConfig) -> float:
    """Conflict-adaptive IoU threshold.

    Low conflict loosens matching (tau_base - delta), high conflict tightens
    it (tau_base + delta); the boundary values fall in the middle branch.
    """
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma out of [0,1]: {gamma}")
    if gamma < cfg.tau_low:
        return cfg.tau_base - cfg.delta
    if gamma > cfg.tau_high:
        return cfg.tau_base + cfg.delta
    return cfg.tau_base


def disagreement_score(p: Proposal, other_expert_set: list[Proposal]) -> float:
    """1 minus the best same-label IoU against the other expert's proposals.

    1.0 when the other expert produced no box of this label at all.
    """
    best = 0.0
    for q in other_expert_set:
        if q.label == p.label:
            best = max(best, iou(p.box, q.box))
    return 1.0 - best


def merge_pair(pa: Proposal, pb: Proposal, pair_iou: float) -> TrustedRegion:
    """Merge a matched pair: confidence-weighted corner average, mean score."""
    wa, wb = pa.score, pb.score
    total = wa + wb
    if total <= 0.0:
        wa = wb = 0.5
        total = 1.0
    box = BBox(
        (wa * pa.box.x1 + wb * pb.box.x1) / total,
        (wa * pa.box.y1 + wb * pb.box.y1) / total,
        (wa * pa.box.x2 + wb * pb.box.x2) / total,
        (wa * pa.box.y2 + wb * pb.box.y2) / total,
    )
    return TrustedRegion(
        box=box,
        label=pa.label,
        score=0.5 * (pa.score + pb.score),
        contributors=(pa, pb),
        pair_iou=pair_iou,
    )


def _compute_gamma(n_trusted: int, n_doubtful: int) -> float:
    total = n_trusted + n_doubtful
    return n_doubtful / total if total > 0 else 0.0


def _trusted_key(t: TrustedRegion) -> tuple:
    return (-t.score, *_box_key(t.box), t.label)


def arbitrate(
    set_a: list[Proposal], set_b: list[Proposal], cfg: ArbitrationConfig
) -> ConsensusPartition:
    """Two-pass consensus arbitration.

    Pass 1 matches at tau_base to measure the provisional conflict ratio;
    that ratio adapts the threshold once, and pass 2 repartitions at the
    adapted value. No fixpoint iteration. Empty inputs yield an empty
    partition with gamma 0.
    """
    prov_matches, prov_ua, prov_ub = match_proposals(set_a, set_b, cfg.tau_base)
    provisional_gamma = _compute_gamma(len(prov_matches), len(prov_ua) + len(prov_ub))
    tau_effective = adaptive_threshold(provisional_gamma, cfg)

    matches, unmatched_a, unmatched_b = match_proposals(set_a, set_b, tau_effective)
    trusted = tuple(sorted((merge_pair(pa, pb, ov) for pa, pb, ov in matches), key=_trusted_key))
    doubtful = tuple(
        sorted(
            [DoubtfulProposal(p, disagreement_score(p, set_b)) for p in unmatched_a]
            + [DoubtfulProposal(p, disagreement_score(p, set_a)) for p in unmatched_b],
            key=_doubtful_key,
        )
    )
    gamma = _compute_gamma(len(trusted), len(doubtful))
    return ConsensusPartition(
        trusted=trusted,
        doubtful=doubtful,
        gamma=gamma,
        tau_effective=tau_effective,
        provisional_gamma=provisional_gamma,
    )


def union_partition(
    set_a: list[Proposal], set_b: list[Proposal], cfg: ArbitrationConfig | None = None
) -> ConsensusPartition:
    """Trust-all ablation policy: every proposal becomes its own trusted region."""
    tau = (cfg or ArbitrationConfig()).tau_base
    trusted = tuple(
        sorted(
            (
                TrustedRegion(box=p.box, label=p.label, score=p.score, contributors=(p,))
                for p in list(set_a) + list(set_b)
            ),
            key=_trusted_key,
        )
    )
    return ConsensusPartition(
        trusted=trusted, doubtful=(), gamma=0.0, tau_effective=tau, provisional_gamma=0.0
    )


def empty_partition(cfg: ArbitrationConfig | None = None) -> ConsensusPartition:
    """No-proposal ablation policy: nothing trusted, nothing doubtful."""
    tau = (cfg or ArbitrationConfig()).tau_base
    return ConsensusPartition(
        trusted=(), doubtful=(), gamma=0.0, tau_effective=tau, provisional_gamma=0.0
    )


def select_budgeted(partition: ConsensusPartition, cfg: ArbitrationConfig) -> SelectionResult:
    """Greedy budgeted pick of doubtful proposals by descending disagreement.

    Ties break by descending expert score, then larger area, then box
    coordinates. A proposal is selected iff adding one view stays within the
    budget; the scan re-sorts its input, so it is permutation-invariant.
    """
    ranked = sorted(partition.doubtful, key=_doubtful_key)
    selected: list[DoubtfulProposal] = []
    skipped: list[DoubtfulProposal] = []
    spent = 0
    for d in ranked:
        if spent + cfg.per_view_cost <= cfg.budget:
            selected.append(d)
            spent += cfg.per_view_cost
        else:
            skipped.append(d)
    return SelectionResult(selected=tuple(selected), spent_tokens=spent, skipped=tuple(skipped))
