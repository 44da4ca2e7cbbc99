"""Stub backends: recorded-detection experts and a rule-based reasoner.

These stand in for real detector/LVLM weights so the full wire surface can
be exercised without GPUs. The fixture detector recognizes the exact image
it was sent by hashing the raw upload; the rule reasoner recognizes scenes
by decoded pixel content and answers from ground truth with the same
priority rules the offline pipeline uses: unaided visibility for large
objects, trust in green CONFIRMED regions, pixel verification of zoomed
SUSPICIOUS regions, otherwise "No".

Real model backends plug in here: implement the DetectorBackend or
ReasonerBackend protocol and register a selector prefix in build_detector /
build_reasoner.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from PIL import Image


class DetectorBackend(Protocol):
    selector: str

    def detect(
        self, raw_bytes: bytes, image: Image.Image, queries: list[str], threshold: float
    ) -> list[dict]: ...


class ReasonerBackend(Protocol):
    selector: str

    def generate(self, images: list[Image.Image], prompt: str, temperature: float) -> str: ...


def _norm(label: str) -> str:
    return re.sub(r"\s+", " ", label.strip().lower())


@dataclass(frozen=True)
class _Scene:
    image_id: str
    image_path: str
    width: int
    height: int
    detections: dict  # slot -> list of {label, box, score}
    ground_truth: list  # list of {label, box}
    question: str | None


def _load_scenes(path: str | Path) -> list[_Scene]:
    scenes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        scenes.append(
            _Scene(
                image_id=str(obj["image_id"]),
                image_path=str(obj.get("image_path", "")),
                width=int(obj["width"]),
                height=int(obj["height"]),
                detections={
                    slot: [
                        {"label": _norm(d["label"]), "box": list(map(float, d["box"])),
                         "score": float(d["score"])}
                        for d in dets
                    ]
                    for slot, dets in obj.get("experts", {}).items()
                },
                ground_truth=[
                    {"label": _norm(g["label"]), "box": list(map(float, g["box"]))}
                    for g in obj.get("ground_truth", [])
                ],
                question=obj.get("question"),
            )
        )
    return scenes


class FixtureDetector:
    """Serves one expert slot of a recorded-scenes file.

    Scenes are recognized by the SHA-256 of the uploaded image bytes, which
    the client sends verbatim from disk. Unknown images yield no detections.
    """

    def __init__(self, path: str | Path, slot: str, selector: str):
        self.selector = selector
        self.slot = slot
        self._by_sha: dict[str, _Scene] = {}
        for scene in _load_scenes(path):
            if not scene.image_path:
                continue
            try:
                digest = hashlib.sha256(Path(scene.image_path).read_bytes()).hexdigest()
            except OSError:
                continue
            self._by_sha[digest] = scene

    def detect(self, raw_bytes, image, queries, threshold):
        scene = self._by_sha.get(hashlib.sha256(raw_bytes).hexdigest())
        if scene is None:
            return []
        wanted = {_norm(q) for q in queries}
        return [
            {"label": d["label"], "box": d["box"], "score": d["score"]}
            for d in scene.detections.get(self.slot, [])
            if d["label"] in wanted and d["score"] > threshold
        ]


def _pixel_fingerprint(image: Image.Image) -> str:
    digest = hashlib.sha256()
    digest.update(image.mode.encode("ascii"))
    digest.update(f"|{image.width}x{image.height}|".encode("ascii"))
    digest.update(image.tobytes())
    return digest.hexdigest()


def _capped(image: Image.Image, target: int) -> Image.Image:
    long_edge = max(image.size)
    if long_edge <= target:
        return image.copy()
    if image.width >= image.height:
        size = (target, max(1, round(image.height * target / long_edge)))
    else:
        size = (max(1, round(image.width * target / long_edge)), target)
    return image.resize(size, Image.Resampling.BILINEAR)


def _box_iou(a, b) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = ix2 - ix1, iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


_CONFIRMED = re.compile(
    r"^✓ CONFIRMED: (?P<label>.+?) \(conf [0-9.]+\) at \[(?P<c>-?\d+,-?\d+,-?\d+,-?\d+)\]$"
)
_SUSPICIOUS = re.compile(
    r"^SUSPICIOUS: (?P<label>.+?) \(conf [0-9.]+\) at \[(?P<c>-?\d+,-?\d+,-?\d+,-?\d+)\]"
    r"(?P<zoomed> \[zoomed\])?$"
)
_USER_QUESTION = re.compile(r'User Question: "(?P<q>.*)"')
_STAGE1_QUESTION = re.compile(r'the question: "(?P<q>.*)"')
_STAGE1_PREFIX = "Please analyze this image and the question:"


class RuleReasoner:
    """Ground-truth-driven reasoner stub over a recorded-scenes file."""

    def __init__(
        self,
        path: str | Path,
        selector: str,
        min_visible_area: float = 0.05,
        verify_iou: float = 0.5,
        capped_long_edge: int = 384,
    ):
        self.selector = selector
        self.min_visible_area = min_visible_area
        self.verify_iou = verify_iou
        self._scenes = _load_scenes(path)
        self._vocabulary = sorted(
            {g["label"] for s in self._scenes for g in s.ground_truth}
            | {d["label"] for s in self._scenes for dets in s.detections.values() for d in dets},
            key=lambda s: (-len(s), s),
        )
        self._by_fingerprint: dict[str, _Scene] = {}
        for scene in self._scenes:
            if not scene.image_path:
                continue
            try:
                image = Image.open(scene.image_path).convert("RGB")
            except OSError:
                continue
            self._by_fingerprint[_pixel_fingerprint(image)] = scene
            self._by_fingerprint[_pixel_fingerprint(_capped(image, capped_long_edge))] = scene

    def _match_question_labels(self, question: str) -> list[str]:
        text = _norm(question)
        found = []
        for label in self._vocabulary:
            m = re.search(r"\b" + re.escape(label) + r"\b", text)
            if m:
                found.append(label)
                text = text[: m.start()] + "#" * (m.end() - m.start()) + text[m.end() :]
        return found

    def _resolve_scene(self, images: list[Image.Image]) -> _Scene | None:
        for image in images:
            scene = self._by_fingerprint.get(_pixel_fingerprint(image))
            if scene is not None:
                return scene
        return None

    def generate(self, images, prompt, temperature):
        if prompt.startswith(_STAGE1_PREFIX):
            m = _STAGE1_QUESTION.search(prompt)
            labels = self._match_question_labels(m.group("q")) if m else []
            return json.dumps({"objects": labels})
        return self._final_answer(images, prompt)

    def _final_answer(self, images, prompt) -> str:
        scene = self._resolve_scene(images)
        if scene is None:
            return "No (scene not recognized)"
        greens, reds = [], []
        for line in prompt.splitlines():
            line = line.strip()
            m = _CONFIRMED.match(line)
            if m:
                greens.append((m.group("label"), [int(v) for v in m.group("c").split(",")]))
                continue
            m = _SUSPICIOUS.match(line)
            if m:
                reds.append(
                    (
                        m.group("label"),
                        [int(v) for v in m.group("c").split(",")],
                        bool(m.group("zoomed")),
                    )
                )
        qm = _USER_QUESTION.search(prompt)
        question = qm.group("q") if qm else ""
        vocabulary = (
            {g["label"] for g in scene.ground_truth}
            | {label for label, _ in greens}
            | {label for label, _, _ in reds}
        )
        text = _norm(question)
        label = None
        for candidate in sorted(vocabulary, key=lambda s: (-len(s), s)):
            if re.search(r"\b" + re.escape(candidate) + r"\b", text):
                label = candidate
                break

        gt_boxes = [g["box"] for g in scene.ground_truth if label and g["label"] == label]
        image_area = scene.width * scene.height
        if any(
            ((b[2] - b[0]) * (b[3] - b[1])) / image_area >= self.min_visible_area
            for b in gt_boxes
        ):
            return "Yes (Rule 1: object clearly visible in the original image)"
        if label is not None and any(g_label == label for g_label, _ in greens):
            return "Yes (Rule 2: confirmed green box)"
        candidates = [(box, zoomed) for r_label, box, zoomed in reds if r_label == label]
        for box, zoomed in candidates:
            if zoomed and any(_box_iou(box, g) >= self.verify_iou for g in gt_boxes):
                return "Yes (Rule 3: verified in zoomed region)"
        if candidates:
            return "No (Rule 4 override: no visual evidence in ROI)"
        return "No (Rule 4: no detection)"


class EchoReasoner:
    def __init__(self, text: str, selector: str):
        self.selector = selector
        self.text = text

    def generate(self, images, prompt, temperature):
        return self.text


class SleepReasoner:
    """Stalls before replying; exists to exercise the 504 path."""

    def __init__(self, seconds: float, selector: str):
        self.selector = selector
        self.seconds = seconds

    def generate(self, images, prompt, temperature):
        time.sleep(self.seconds)
        return "Yes"


def build_detector(selector: str, slot: str) -> DetectorBackend | None:
    if selector == "unloaded":
        return None
    if selector.startswith("fixture:"):
        spec = selector[len("fixture:"):]
        path, _, fixture_slot = spec.partition("#")
        return FixtureDetector(path, fixture_slot or slot, selector)
    raise ValueError(f"unknown detector selector: {selector!r}")


def build_reasoner(selector: str) -> ReasonerBackend | None:
    if selector == "unloaded":
        return None
    if selector.startswith("fixture-rules:"):
        return RuleReasoner(selector[len("fixture-rules:"):], selector)
    if selector.startswith("echo:"):
        return EchoReasoner(selector[len("echo:"):], selector)
    if selector.startswith("sleep:"):
        return SleepReasoner(float(selector[len("sleep:"):]), selector)
    raise ValueError(f"unknown reasoner selector: {selector!r}")
