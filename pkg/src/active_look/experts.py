"""Detection expert adapters: fixture playback, HTTP clients, noise injection.

Two heterogeneous experts feed the arbitration stage. Offline runs replay
recorded detections from a JSONL fixture file; live runs call a detection
service over the /detect wire protocol. The noise injector reproduces the
low-overlap spatial-shift stress test used to probe over-trust failures.
"""

from __future__ import annotations

import base64
import io
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import requests
from PIL import Image, UnidentifiedImageError

from .arbitration import Proposal, normalize_label
from .errors import (
    EmptyTargets,
    ExpertUnavailable,
    ImageUnreadable,
    MalformedResponse,
    NoisePlacementImpossible,
)
from .geometry import BBox, ImageDims, clamp, iou
from .schemas import validate_payload

EXPERT_A = "A"
EXPERT_B = "B"
DEFAULT_SCORE_THRESHOLD = 0.3


@dataclass(frozen=True)
class SceneImage:
    """An input image plus its identity and, when file-backed, the raw bytes.

    Raw bytes travel unmodified over the wire so a serving process can
    recognize the exact file it was given.
    """

    image_id: str
    raster: Image.Image
    path: Path | None = None
    data: bytes | None = None

    @property
    def dims(self) -> ImageDims:
        return ImageDims(width=self.raster.width, height=self.raster.height)

    def encoded(self) -> str:
        if self.data is not None:
            payload = self.data
        else:
            buf = io.BytesIO()
            self.raster.save(buf, format="PNG")
            payload = buf.getvalue()
        return base64.b64encode(payload).decode("ascii")


def load_image(path: str | Path, image_id: str | None = None) -> SceneImage:
    """Read an image file (PNG/JPEG) into a SceneImage."""
    p = Path(path)
    try:
        data = p.read_bytes()
        raster = Image.open(io.BytesIO(data))
        raster.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageUnreadable(f"cannot read image {p}: {exc}") from exc
    return SceneImage(image_id=image_id or p.stem, raster=raster.convert("RGB"), path=p, data=data)


@dataclass(frozen=True)
class DetectionRequest:
    """Wire-level detection request: an encoded image plus target labels."""

    image_b64: str
    queries: tuple[str, ...]
    score_threshold: float = DEFAULT_SCORE_THRESHOLD

    def __post_init__(self):
        if not self.queries or any(not q.strip() for q in self.queries):
            raise EmptyTargets("detection request needs at least one non-empty query")

    def body(self) -> dict:
        return {
            "image_b64": self.image_b64,
            "queries": list(self.queries),
            "score_threshold": self.score_threshold,
        }


@dataclass(frozen=True)
class RawDetection:
    label: str
    box: BBox
    score: float


@dataclass(frozen=True)
class GroundTruthObject:
    label: str
    box: BBox


@dataclass(frozen=True)
class FixtureScene:
    image_id: str
    image_path: str
    dims: ImageDims
    detections: dict[str, tuple[RawDetection, ...]]
    ground_truth: tuple[GroundTruthObject, ...] = ()
    question: str | None = None
    answer: str | None = None
    a_rel: float | None = None


@dataclass
class ExpertFixture:
    """Recorded per-scene detections for both expert slots, keyed by image id."""

    scenes: dict[str, FixtureScene] = field(default_factory=dict)

    def scene(self, image_id: str) -> FixtureScene | None:
        return self.scenes.get(image_id)

    def labels(self) -> set[str]:
        vocab: set[str] = set()
        for scene in self.scenes.values():
            for dets in scene.detections.values():
                vocab.update(d.label for d in dets)
            vocab.update(g.label for g in scene.ground_truth)
        return vocab


def _parse_box(raw, dims: ImageDims, context: str) -> BBox:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise ValueError(f"{context}: box must be [x1,y1,x2,y2], got {raw!r}")
    box = BBox(*(float(v) for v in raw))
    if box.x1 < 0 or box.y1 < 0 or box.x2 > dims.width or box.y2 > dims.height:
        raise ValueError(f"{context}: box {box.as_tuple()} outside {dims.width}x{dims.height}")
    return box


def load_fixture(path: str | Path) -> ExpertFixture:
    """Parse a scenes JSONL file, validating boxes against the declared dims."""
    fixture = ExpertFixture()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            context = f"{path}:{lineno}"
            image_id = str(obj["image_id"])
            dims = ImageDims(width=int(obj["width"]), height=int(obj["height"]))
            detections: dict[str, tuple[RawDetection, ...]] = {}
            for slot, dets in obj.get("experts", {}).items():
                parsed = tuple(
                    RawDetection(
                        label=normalize_label(d["label"]),
                        box=_parse_box(d["box"], dims, context),
                        score=float(d["score"]),
                    )
                    for d in dets
                )
                detections[slot] = parsed
            ground_truth = tuple(
                GroundTruthObject(
                    label=normalize_label(g["label"]),
                    box=_parse_box(g["box"], dims, context),
                )
                for g in obj.get("ground_truth", [])
            )
            fixture.scenes[image_id] = FixtureScene(
                image_id=image_id,
                image_path=str(obj.get("image_path", "")),
                dims=dims,
                detections=detections,
                ground_truth=ground_truth,
                question=obj.get("question"),
                answer=obj.get("answer"),
                a_rel=obj.get("a_rel"),
            )
    return fixture


class ExpertAdapter(Protocol):
    name: str

    def detect(
        self, image: SceneImage, queries: list[str], score_threshold: float
    ) -> list[RawDetection]: ...


class FixtureExpert:
    """Replays one expert slot of a scenes fixture; unknown scenes yield nothing."""

    def __init__(self, fixture: ExpertFixture, slot: str, name: str | None = None):
        self.fixture = fixture
        self.slot = slot
        self.name = name or slot

    def detect(
        self, image: SceneImage, queries: list[str], score_threshold: float
    ) -> list[RawDetection]:
        scene = self.fixture.scene(image.image_id)
        if scene is None:
            return []
        wanted = {normalize_label(q) for q in queries}
        return [
            d
            for d in scene.detections.get(self.slot, ())
            if d.label in wanted and d.score > score_threshold
        ]


class HttpExpert:
    """Client for the /detect wire protocol."""

    def __init__(self, name: str, url: str, timeout: float = 30.0, session=None):
        self.name = name
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()

    def detect(
        self, image: SceneImage, queries: list[str], score_threshold: float
    ) -> list[RawDetection]:
        request = DetectionRequest(
            image_b64=image.encoded(),
            queries=tuple(normalize_label(q) for q in queries),
            score_threshold=score_threshold,
        )
        try:
            resp = self.session.post(self.url, json=request.body(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise ExpertUnavailable(f"expert {self.name} at {self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise ExpertUnavailable(
                f"expert {self.name} at {self.url}: HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            payload = resp.json()
            validate_payload("detect_response", payload)
            dets = [
                RawDetection(
                    label=normalize_label(d["label"]),
                    box=BBox(*(float(v) for v in d["box"])),
                    score=float(d["score"]),
                )
                for d in payload["detections"]
            ]
        except Exception as exc:
            raise MalformedResponse(f"expert {self.name}: bad /detect reply: {exc}") from exc
        return dets


def build_detection_query(targets: list[str]) -> str:
    """Compose the open-vocabulary detection prompt: 'a dog. a cat.'"""
    labels = [normalize_label(t) for t in targets]
    if not labels or any(not t for t in labels):
        raise EmptyTargets("cannot build a detection query from empty targets")
    return " ".join(f"a {t}." for t in labels)


def propose(
    expert: ExpertAdapter,
    image: SceneImage,
    targets: list[str],
    tau_score: float = DEFAULT_SCORE_THRESHOLD,
) -> list[Proposal]:
    """Query one expert and return score-filtered, canonically sorted proposals.

    Only detections with score strictly above tau_score survive. Sorting by
    (score desc, box coordinates) makes the output independent of the order
    the backend happened to return.
    """
    queries = [normalize_label(t) for t in targets]
    detections = expert.detect(image, queries, tau_score)
    proposals = [
        Proposal(box=d.box, label=d.label, score=d.score, expert=expert.name)
        for d in detections
        if d.score > tau_score
    ]
    proposals.sort(key=lambda p: (-p.score, p.box.x1, p.box.y1, p.box.x2, p.box.y2, p.label))
    return proposals


def inject_noise(
    proposals: list[Proposal],
    max_iou: float,
    dims: ImageDims,
    rng_seed: int = 42,
    max_attempts: int = 1000,
) -> list[Proposal]:
    """Replace each box with a same-size translation overlapping it below max_iou.

    Translations are sampled uniformly over all in-bounds placements from one
    generator seeded with rng_seed, so the output is a pure function of
    (proposals, seed). Labels, scores, and box sizes are preserved. Raises
    NoisePlacementImpossible when no accepted placement is found within
    max_attempts (e.g. a box covering the whole image).
    """
    if not (0.0 <= max_iou < 1.0):
        raise ValueError(f"max_iou must be in [0,1): {max_iou}")
    rng = random.Random(rng_seed)
    noisy: list[Proposal] = []
    for p in proposals:
        box = clamp(p.box, dims)
        w, h = box.width, box.height
        placed = None
        for _ in range(max_attempts):
            nx1 = rng.uniform(0.0, dims.width - w)
            ny1 = rng.uniform(0.0, dims.height - h)
            candidate = BBox(nx1, ny1, nx1 + w, ny1 + h)
            if iou(box, candidate) < max_iou:
                placed = candidate
                break
        if placed is None:
            raise NoisePlacementImpossible(
                f"no placement of {box.as_tuple()} in {dims.width}x{dims.height} "
                f"reaches IoU < {max_iou} within {max_attempts} attempts"
            )
        noisy.append(replace(p, box=placed))
    return noisy
