"""Benchmark metric kernels: binary existence QA, paired perception QA,
caption hallucination rates, scale stratification, and the conflict-vs-error
trigger report.

All kernels are pure functions over immutable record collections and are
invariant to record order. Unparseable predictions count as wrong rather
than being dropped.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyRecordSet, JoinFailure, MissingGroundTruth, UnpairedImage
from .reasoner import parse_yesno

SCALE_SMALL = "small"
SCALE_MEDIUM = "medium"
SCALE_LARGE = "large"


@dataclass(frozen=True)
class EvalRecord:
    """One benchmark item joining a prediction to its ground truth."""

    id: str
    prediction: str
    answer: str | None = None
    question: str | None = None
    category: str | None = None
    image_id: str | None = None
    a_rel: float | None = None

    def __post_init__(self):
        if self.a_rel is not None and not (0.0 <= self.a_rel <= 1.0):
            raise ValueError(f"a_rel out of [0,1]: {self.a_rel}")


def _binary_prediction(record: EvalRecord) -> str:
    """Parsed yes/no; unparseable counts as the non-ground-truth answer."""
    parsed = parse_yesno(record.prediction).answer
    if parsed in ("yes", "no"):
        return parsed
    return "no" if record.answer == "yes" else "yes"


@dataclass(frozen=True)
class PopeMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    zero_denominator: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "zero_denominator": list(self.zero_denominator),
        }


def pope_metrics(records: list[EvalRecord]) -> PopeMetrics:
    """Confusion-matrix metrics over yes/no records, with "yes" positive.

    Zero-denominator precision/recall/F1 come back as 0.0 and are flagged.
    """
    if not records:
        raise EmptyRecordSet("no records to score")
    tp = fp = fn = tn = 0
    for r in records:
        if r.answer not in ("yes", "no"):
            raise ValueError(f"record {r.id}: ground-truth answer must be yes/no: {r.answer!r}")
        pred = _binary_prediction(r)
        if r.answer == "yes":
            if pred == "yes":
                tp += 1
            else:
                fn += 1
        else:
            if pred == "yes":
                fp += 1
            else:
                tn += 1
    flags = []
    accuracy = (tp + tn) / len(records)
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall"]
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1"]
    return PopeMetrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        zero_denominator=tuple(flags),
    )


@dataclass(frozen=True)
class MMECategoryScore:
    category: str
    accuracy: float
    accuracy_plus: float
    score: float
    n_questions: int
    n_images: int

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "accuracy": self.accuracy,
            "accuracy_plus": self.accuracy_plus,
            "score": self.score,
            "n_questions": self.n_questions,
            "n_images": self.n_images,
        }


def _strictly_parseable(prediction: str) -> bool:
    return prediction.strip().rstrip(".!").lower() in ("yes", "no")


def mme_scores(
    records: list[EvalRecord], plus_mode: str = "paired"
) -> dict[str, MMECategoryScore]:
    """Per-category accuracy, accuracy-plus, and combined score (max 200).

    plus_mode "paired" (default): accuracy_plus is the fraction of images
    whose two paired questions are both answered correctly. plus_mode
    "strict_parse": the fraction of questions answered correctly with a
    strictly formatted reply (bare yes/no).
    """
    if not records:
        raise EmptyRecordSet("no records to score")
    if plus_mode not in ("paired", "strict_parse"):
        raise ValueError(f"unknown plus_mode: {plus_mode}")
    by_category: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        if r.category is None or r.image_id is None:
            raise ValueError(f"record {r.id}: paired scoring needs category and image_id")
        by_category[r.category].append(r)

    out: dict[str, MMECategoryScore] = {}
    for category, recs in sorted(by_category.items()):
        by_image: dict[str, list[EvalRecord]] = defaultdict(list)
        for r in recs:
            by_image[r.image_id].append(r)
        for image_id, pair in by_image.items():
            if len(pair) != 2:
                raise UnpairedImage(
                    f"category {category}: image {image_id} has {len(pair)} questions, expected 2"
                )
        correct = {id(r): _binary_prediction(r) == r.answer for r in recs}
        accuracy = sum(correct.values()) / len(recs)
        if plus_mode == "paired":
            plus_hits = sum(
                1 for pair in by_image.values() if all(correct[id(r)] for r in pair)
            )
            accuracy_plus = plus_hits / len(by_image)
        else:
            accuracy_plus = sum(
                1 for r in recs if correct[id(r)] and _strictly_parseable(r.prediction)
            ) / len(recs)
        out[category] = MMECategoryScore(
            category=category,
            accuracy=accuracy,
            accuracy_plus=accuracy_plus,
            score=100.0 * accuracy + 100.0 * accuracy_plus,
            n_questions=len(recs),
            n_images=len(by_image),
        )
    return out


@dataclass(frozen=True)
class SynonymMap:
    """Surface-word to canonical-category mapping with a closed vocabulary."""

    mapping: dict[str, str]
    categories: frozenset[str]

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "SynonymMap":
        norm = {_norm_word(k): _norm_word(v) for k, v in mapping.items()}
        return cls(mapping=norm, categories=frozenset(norm.values()))

    @classmethod
    def from_json(cls, path: str | Path) -> "SynonymMap":
        return cls.from_mapping(json.loads(Path(path).read_text(encoding="utf-8")))

    def lookup(self, surface: str) -> str | None:
        surface = _norm_word(surface)
        if surface in self.mapping:
            return self.mapping[surface]
        if surface in self.categories:
            return surface
        return None


def _norm_word(w: str) -> str:
    return re.sub(r"\s+", " ", w.strip().lower())


def _caption_mentions(caption: str, synonyms: SynonymMap) -> set[str]:
    """Distinct canonical categories mentioned: token and bigram lookups."""
    tokens = re.findall(r"[a-z0-9]+", caption.lower())
    grams = tokens + [" ".join(pair) for pair in zip(tokens, tokens[1:])]
    mentions = set()
    for g in grams:
        cat = synonyms.lookup(g)
        if cat is not None:
            mentions.add(cat)
    return mentions


@dataclass(frozen=True)
class ChairResult:
    chair_s: float
    chair_i: float
    recall: float
    n_captions: int
    n_hallucinated_captions: int
    n_mentions: int
    n_hallucinated_mentions: int

    def to_dict(self) -> dict:
        return {
            "chair_s": self.chair_s,
            "chair_i": self.chair_i,
            "recall": self.recall,
            "n_captions": self.n_captions,
            "n_hallucinated_captions": self.n_hallucinated_captions,
            "n_mentions": self.n_mentions,
            "n_hallucinated_mentions": self.n_hallucinated_mentions,
        }


def chair(
    records: list[EvalRecord],
    gt_objects_per_image: dict[str, list[str]],
    synonyms: SynonymMap,
) -> ChairResult:
    """Caption hallucination rates plus micro-averaged ground-truth recall.

    A mention is a distinct canonical category found in a caption; it is
    hallucinated when absent from that image's ground-truth objects. A
    caption is hallucinated when it contains at least one such mention.
    """
    if not records:
        raise EmptyRecordSet("no records to score")
    gt_canonical: dict[str, set[str]] = {}
    for image_id, objects in gt_objects_per_image.items():
        gt_canonical[image_id] = {
            synonyms.lookup(o) or _norm_word(o) for o in objects
        }
    n_captions = n_bad_captions = n_mentions = n_bad_mentions = 0
    mentioned_by_image: dict[str, set[str]] = defaultdict(set)
    for r in records:
        if r.image_id is None or r.image_id not in gt_canonical:
            raise MissingGroundTruth(f"no ground-truth objects for image {r.image_id!r}")
        gt = gt_canonical[r.image_id]
        mentions = _caption_mentions(r.prediction, synonyms)
        hallucinated = {m for m in mentions if m not in gt}
        n_captions += 1
        n_mentions += len(mentions)
        n_bad_mentions += len(hallucinated)
        if hallucinated:
            n_bad_captions += 1
        mentioned_by_image[r.image_id] |= mentions & gt
    recall_num = sum(len(m) for m in mentioned_by_image.values())
    recall_den = sum(len(gt_canonical[i]) for i in mentioned_by_image)
    return ChairResult(
        chair_s=n_bad_captions / n_captions,
        chair_i=n_bad_mentions / n_mentions if n_mentions else 0.0,
        recall=recall_num / recall_den if recall_den else 0.0,
        n_captions=n_captions,
        n_hallucinated_captions=n_bad_captions,
        n_mentions=n_mentions,
        n_hallucinated_mentions=n_bad_mentions,
    )


def scale_bin(a_rel: float) -> str:
    """Small below 10%, large above 30%, medium in between (bounds inclusive)."""
    if not (0.0 <= a_rel <= 1.0):
        raise ValueError(f"a_rel out of [0,1]: {a_rel}")
    if a_rel < 0.10:
        return SCALE_SMALL
    if a_rel <= 0.30:
        return SCALE_MEDIUM
    return SCALE_LARGE


def split_by_scale(records: list[EvalRecord]) -> dict[str, list[EvalRecord]]:
    """Group records carrying a_rel into scale bins (others are dropped)."""
    groups: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        if r.a_rel is not None:
            groups[scale_bin(r.a_rel)].append(r)
    return dict(groups)


@dataclass(frozen=True)
class TriggerRow:
    partition: str  # "low" | "high"
    sample_ratio: float
    error_rate: float
    n: int

    def to_dict(self) -> dict:
        return {
            "partition": self.partition,
            "sample_ratio": self.sample_ratio,
            "error_rate": self.error_rate,
            "n": self.n,
        }


def trigger_report(traces, records: list[EvalRecord]) -> list[TriggerRow]:
    """Split items by whether the conflict ratio exceeded the effective
    threshold, reporting each side's share and baseline error rate.

    `traces` may be PipelineTrace objects or loaded trace dicts; they join to
    records by item id. Ratios across the two rows sum to 1.
    """
    by_id = {r.id: r for r in records}
    groups: dict[str, list[EvalRecord]] = {"low": [], "high": []}
    for t in traces:
        if isinstance(t, dict):
            item_id = t["item_id"]
            part = t.get("partition") or {}
            gamma = part.get("gamma", 0.0)
            tau = part.get("tau_effective", 1.0)
        else:
            item_id = t.item_id
            gamma = t.partition.gamma if t.partition else 0.0
            tau = t.partition.tau_effective if t.partition else 1.0
        record = by_id.get(item_id)
        if record is None:
            raise JoinFailure(f"trace item {item_id!r} has no evaluation record")
        groups["high" if gamma > tau else "low"].append(record)
    total = sum(len(g) for g in groups.values())
    if total == 0:
        raise EmptyRecordSet("no traces to report on")
    rows = []
    for name in ("low", "high"):
        recs = groups[name]
        errors = sum(1 for r in recs if _binary_prediction(r) != r.answer)
        rows.append(
            TriggerRow(
                partition=name,
                sample_ratio=len(recs) / total,
                error_rate=errors / len(recs) if recs else 0.0,
                n=len(recs),
            )
        )
    return rows


def format_table(headers: list[str], rows: list[list[str]]) -> str:
    """Plain aligned text table."""
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), sep, *(fmt(r) for r in rows)])
