"""Reasoner adapters and the offline rule-based stand-in.

Stage 1 asks the reasoner which objects a question requires; stage 3 asks
for a final Yes/No given the multi-view evidence. Both prompt templates ship
as text assets with {placeholder} slots and are filled verbatim.

The mock reasoner answers stage-3 prompts from scene ground truth with a
fixed priority-rule engine, which makes fully offline end-to-end runs
deterministic: an object is "clearly visible" unaided when its ground-truth
area fraction is large enough, a green CONFIRMED region of the queried label
is trusted as-is, and a zoomed SUSPICIOUS region counts only if ground truth
actually overlaps it (IoU >= 0.5).
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Protocol

import requests
from PIL import Image

from .arbitration import normalize_label
from .errors import (
    MalformedExtraction,
    MalformedResponse,
    MissingGroundTruth,
    ReasonerUnavailable,
)
from .experts import ExpertFixture, FixtureScene, GroundTruthObject
from .geometry import BBox, ImageDims, area_ratio, iou
from .rendering import resize_long_edge_cap
from .schemas import validate_payload

STAGE1_PREFIX = "Please analyze this image and the question:"
STAGE3_PREFIX = "Task: Answer the user's question"

_CONDITIONAL_ZOOM_LINE = (
    '- [Conditional] IMAGE 3: Zoomed-in view of the suspicious region for '
    '"{top_suspicious_label}". This provides clearer visual evidence to verify the object.'
)


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    ref = resources.files("active_look.prompts") / f"{name}.txt"
    return ref.read_text(encoding="utf-8")


def stage1_prompt(user_query: str) -> str:
    """Target-extraction prompt with the user query substituted."""
    return _template("target_extraction").replace("{user_query}", user_query)


def stage3_prompt(user_query: str, detection_summary_text: str, zoom_labels: list[str]) -> str:
    """Final-inference prompt.

    The conditional IMAGE 3 line is removed when there are no zoom views;
    otherwise it is instantiated with the top suspicious label (conditional
    marker dropped) and additional zooms continue as IMAGE 4, IMAGE 5, ...
    """
    text = _template("final_inference")
    if zoom_labels:
        zoom_line = _CONDITIONAL_ZOOM_LINE.replace("- [Conditional] ", "- ").replace(
            "{top_suspicious_label}", zoom_labels[0]
        )
        extra = [
            f'- IMAGE {3 + k}: Zoomed-in view of the suspicious region for "{label}". '
            "This provides clearer visual evidence to verify the object."
            for k, label in enumerate(zoom_labels[1:], start=1)
        ]
        text = text.replace(_CONDITIONAL_ZOOM_LINE, "\n".join([zoom_line, *extra]))
    else:
        text = text.replace(_CONDITIONAL_ZOOM_LINE + "\n", "")
    text = text.replace("{detection_summary_text}", detection_summary_text)
    return text.replace("{user_query}", user_query)


@dataclass(frozen=True)
class ReasonerRequest:
    """Images plus prompt for one reasoner call.

    Stage 3 orders images as: detection visualization, original image, then
    zoom views; stage 1 sends the original image alone.
    """

    images: tuple[Image.Image, ...]
    prompt: str
    temperature: float = 1.0

    def __post_init__(self):
        if not self.images:
            raise ValueError("reasoner request needs at least one image")
        if not self.prompt:
            raise ValueError("reasoner request needs a non-empty prompt")


@dataclass(frozen=True)
class Verdict:
    answer: str  # "yes" | "no" | "unparseable"
    raw_text: str


class ReasonerAdapter(Protocol):
    def generate(self, request: ReasonerRequest) -> str: ...


_YESNO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_yesno(text: str) -> Verdict:
    """First token-boundary occurrence of yes/no wins; neither -> unparseable."""
    m = _YESNO_RE.search(text)
    if m is None:
        return Verdict(answer="unparseable", raw_text=text)
    return Verdict(answer=m.group(1).lower(), raw_text=text)


def _scan_json_object(text: str) -> dict:
    start = text.find("{")
    end = text.rfind("}")
    if start < 0 or end <= start:
        raise MalformedExtraction(f"no JSON object in reply: {text[:120]!r}")
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedExtraction(f"invalid JSON in reply: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedExtraction("reply JSON is not an object")
    return obj


def parse_target_reply(text: str) -> list[str]:
    """Parse {"objects": [...]} from a stage-1 reply, tolerating surrounding prose."""
    obj = _scan_json_object(text)
    objects = obj.get("objects")
    if not isinstance(objects, list) or any(not isinstance(o, str) for o in objects):
        raise MalformedExtraction('reply JSON lacks an "objects" string list')
    seen: list[str] = []
    for o in objects:
        label = normalize_label(o)
        if label and label not in seen:
            seen.append(label)
    return seen


def extract_targets(reasoner: ReasonerAdapter, image: Image.Image, query: str) -> list[str]:
    """Stage 1: ask which objects the question needs, parse the JSON reply."""
    request = ReasonerRequest(images=(image,), prompt=stage1_prompt(query))
    return parse_target_reply(reasoner.generate(request))


_STOPLIST = frozenset(
    "a an the is are there any in on at of image picture photo this that it "
    "do does can you see visible how many what which".split()
)


def fallback_targets(query: str, vocabulary: set[str] | None = None) -> list[str]:
    """Noun extraction used when stage-1 parsing fails.

    With a vocabulary (e.g. the fixture's label set), return its members found
    in the query, longest match first; without one, return the query's tokens
    minus a small stoplist.
    """
    if vocabulary:
        return match_labels(query, vocabulary)
    words = re.findall(r"[a-z]+", normalize_label(query))
    out: list[str] = []
    for w in words:
        if w not in _STOPLIST and w not in out:
            out.append(w)
    return out


def match_labels(text: str, vocabulary: set[str]) -> list[str]:
    """Vocabulary members present in the text, longest first, spans consumed.

    Matching is word-boundary based, so "bat" does not fire inside
    "baseball bat" once the longer label has claimed the span.
    """
    haystack = normalize_label(text)
    found: list[str] = []
    for label in sorted(vocabulary, key=lambda s: (-len(s), s)):
        pattern = r"\b" + re.escape(label) + r"\b"
        m = re.search(pattern, haystack)
        if m:
            found.append(label)
            haystack = haystack[: m.start()] + "#" * (m.end() - m.start()) + haystack[m.end() :]
    return found


class HttpReasoner:
    """Client for the /generate wire protocol."""

    def __init__(self, url: str, timeout: float = 60.0, session=None):
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()

    @staticmethod
    def _encode(image: Image.Image) -> str:
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        return base64.b64encode(buf.getvalue()).decode("ascii")

    def generate(self, request: ReasonerRequest) -> str:
        body = {
            "images_b64": [self._encode(im) for im in request.images],
            "prompt": request.prompt,
            "temperature": request.temperature,
        }
        try:
            resp = self.session.post(self.url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ReasonerUnavailable(f"reasoner at {self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise ReasonerUnavailable(
                f"reasoner at {self.url}: HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            payload = resp.json()
            validate_payload("generate_response", payload)
        except Exception as exc:
            raise MalformedResponse(f"bad /generate reply: {exc}") from exc
        return payload["text"]


@dataclass(frozen=True)
class SceneGroundTruth:
    dims: ImageDims
    objects: tuple[GroundTruthObject, ...]


@dataclass(frozen=True)
class SummaryRegion:
    label: str
    box: BBox
    confirmed: bool
    zoomed: bool


_CONFIRMED_LINE = re.compile(
    r"^✓ CONFIRMED: (?P<label>.+?) \(conf [0-9.]+\) at "
    r"\[(?P<x1>-?\d+),(?P<y1>-?\d+),(?P<x2>-?\d+),(?P<y2>-?\d+)\]$"
)
_SUSPICIOUS_LINE = re.compile(
    r"^SUSPICIOUS: (?P<label>.+?) \(conf [0-9.]+\) at "
    r"\[(?P<x1>-?\d+),(?P<y1>-?\d+),(?P<x2>-?\d+),(?P<y2>-?\d+)\](?P<zoomed> \[zoomed\])?$"
)
_QUESTION_LINE = re.compile(r'User Question: "(?P<q>.*)"')
_STAGE1_QUESTION = re.compile(r'the question: "(?P<q>.*)"')


def parse_summary_regions(prompt: str) -> list[SummaryRegion]:
    """Recover the highlighted regions from a final-inference prompt."""
    regions: list[SummaryRegion] = []
    for line in prompt.splitlines():
        line = line.strip()
        m = _CONFIRMED_LINE.match(line)
        if m:
            regions.append(_region_from_match(m, confirmed=True, zoomed=False))
            continue
        m = _SUSPICIOUS_LINE.match(line)
        if m:
            regions.append(_region_from_match(m, confirmed=False, zoomed=bool(m.group("zoomed"))))
    return regions


def _region_from_match(m: re.Match, confirmed: bool, zoomed: bool) -> SummaryRegion:
    x1, y1, x2, y2 = (int(m.group(k)) for k in ("x1", "y1", "x2", "y2"))
    return SummaryRegion(
        label=m.group("label"),
        box=BBox(float(x1), float(y1), float(max(x2, x1 + 1)), float(max(y2, y1 + 1))),
        confirmed=confirmed,
        zoomed=zoomed,
    )


RULE1_YES = "Yes (Rule 1: object clearly visible in the original image)"
RULE2_YES = "Yes (Rule 2: confirmed green box)"
RULE3_YES = "Yes (Rule 3: verified in zoomed region)"
RULE4_OVERRIDE_NO = "No (Rule 4 override: no visual evidence in ROI)"
RULE4_NO = "No (Rule 4: no detection)"


def mock_answer(
    request: ReasonerRequest,
    scene_ground_truth: SceneGroundTruth | None,
    visual_evidence_first: bool = True,
    min_visible_area: float = 0.05,
    verify_iou: float = 0.5,
) -> str:
    """Deterministic stage-3 answer from the priority rules and ground truth.

    Rule order: (1) the queried object is clearly visible unaided, meaning a
    ground-truth instance covers at least min_visible_area of the image;
    (2) a green CONFIRMED region carries the queried label (trusted as-is);
    (3) a zoomed SUSPICIOUS region of the label is corroborated by ground
    truth at IoU >= verify_iou; (4) otherwise "No", with an "override" note
    when candidate regions of the label existed but failed verification.
    """
    if scene_ground_truth is None:
        raise MissingGroundTruth("mock reasoner needs scene ground truth")
    prompt = request.prompt
    qm = _QUESTION_LINE.search(prompt)
    question = qm.group("q") if qm else prompt
    regions = parse_summary_regions(prompt)

    vocabulary = {g.label for g in scene_ground_truth.objects} | {r.label for r in regions}
    matched = match_labels(question, vocabulary)
    label = matched[0] if matched else None

    gt_boxes = (
        [g.box for g in scene_ground_truth.objects if g.label == label] if label else []
    )
    if visual_evidence_first and any(
        area_ratio(b, scene_ground_truth.dims) >= min_visible_area for b in gt_boxes
    ):
        return RULE1_YES
    if label is not None and any(r.confirmed and r.label == label for r in regions):
        return RULE2_YES
    candidate_regions = [r for r in regions if label is not None and r.label == label]
    for r in candidate_regions:
        if r.zoomed and any(iou(r.box, g) >= verify_iou for g in gt_boxes):
            return RULE3_YES
    if candidate_regions:
        return RULE4_OVERRIDE_NO
    return RULE4_NO


def _raster_fingerprint(image: Image.Image) -> str:
    digest = hashlib.sha256()
    digest.update(image.mode.encode("ascii"))
    digest.update(f"|{image.width}x{image.height}|".encode("ascii"))
    digest.update(image.tobytes())
    return digest.hexdigest()


class MockReasoner:
    """Fixture-backed reasoner for offline runs.

    The scene behind a request is recognized the way a real model would
    recognize it: by the image itself. Each fixture scene's image file is
    fingerprinted at load time (at native resolution and capped to the
    default model input size), and incoming request images are matched
    against that index; a question-text lookup is used only when it
    identifies exactly one scene. Stage-1 prompts are answered by matching
    the question against the fixture's label vocabulary; stage-3 prompts are
    routed through mock_answer with the recognized scene's ground truth.
    """

    def __init__(
        self,
        fixture: ExpertFixture,
        extra_vocabulary: set[str] | None = None,
        visual_evidence_first: bool = True,
        min_visible_area: float = 0.05,
        verify_iou: float = 0.5,
        capped_long_edge: int = 384,
    ):
        self.fixture = fixture
        self.vocabulary = fixture.labels() | (extra_vocabulary or set())
        self.visual_evidence_first = visual_evidence_first
        self.min_visible_area = min_visible_area
        self.verify_iou = verify_iou
        self._by_fingerprint: dict[str, FixtureScene] = {}
        self._by_question: dict[str, list[FixtureScene]] = {}
        for scene in fixture.scenes.values():
            if scene.question:
                self._by_question.setdefault(scene.question, []).append(scene)
            if not scene.image_path:
                continue
            try:
                image = Image.open(scene.image_path).convert("RGB")
            except OSError:
                continue
            self._by_fingerprint[_raster_fingerprint(image)] = scene
            capped = resize_long_edge_cap(image, capped_long_edge)
            self._by_fingerprint[_raster_fingerprint(capped)] = scene

    def _resolve_scene(self, request: ReasonerRequest, question: str | None) -> FixtureScene | None:
        for image in request.images:
            scene = self._by_fingerprint.get(_raster_fingerprint(image))
            if scene is not None:
                return scene
        if question is not None:
            candidates = self._by_question.get(question, [])
            if len(candidates) == 1:
                return candidates[0]
        return None

    def generate(self, request: ReasonerRequest) -> str:
        prompt = request.prompt
        if prompt.startswith(STAGE1_PREFIX):
            m = _STAGE1_QUESTION.search(prompt)
            question = m.group("q") if m else ""
            return json.dumps({"objects": match_labels(question, self.vocabulary)})
        if prompt.startswith(STAGE3_PREFIX):
            qm = _QUESTION_LINE.search(prompt)
            scene = self._resolve_scene(request, qm.group("q") if qm else None)
            if scene is None:
                raise MissingGroundTruth("no fixture scene matches the request")
            return mock_answer(
                request,
                SceneGroundTruth(dims=scene.dims, objects=scene.ground_truth),
                visual_evidence_first=self.visual_evidence_first,
                min_visible_area=self.min_visible_area,
                verify_iou=self.verify_iou,
            )
        raise MalformedResponse(f"unrecognized prompt shape: {prompt[:60]!r}")
