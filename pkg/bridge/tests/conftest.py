import json
from pathlib import Path

import pytest
from PIL import Image, ImageDraw


def _draw(path: Path, width: int, height: int, objects):
    img = Image.new("RGB", (width, height), (230, 230, 224))
    draw = ImageDraw.Draw(img)
    palette = {"dog": (180, 120, 40), "cat": (200, 200, 60), "person": (70, 130, 180),
               "bird": (220, 140, 180)}
    for obj in objects:
        x1, y1, x2, y2 = obj["box"]
        draw.rectangle((round(x1), round(y1), round(x2) - 1, round(y2) - 1),
                       fill=palette.get(obj["label"], (120, 120, 120)))
    img.save(path, format="PNG")


def _scene(out_dir, image_id, objects, experts, question, answer, width=160, height=120):
    image_path = out_dir / f"{image_id}.png"
    _draw(image_path, width, height, objects)
    return {
        "image_id": image_id,
        "image_path": str(image_path),
        "width": width,
        "height": height,
        "experts": experts,
        "ground_truth": objects,
        "question": question,
        "answer": answer,
    }


@pytest.fixture(scope="session")
def scenes_jsonl(tmp_path_factory):
    """Five scenes covering visible/verified/rejected/absent evidence paths."""
    out = tmp_path_factory.mktemp("bridge_scenes")
    scenes = [
        _scene(
            out, "pos_large",
            objects=[{"label": "dog", "box": [20, 20, 100, 90]}],
            experts={
                "A": [{"label": "dog", "box": [21, 20, 101, 90], "score": 0.9}],
                "B": [{"label": "dog", "box": [20, 21, 100, 91], "score": 0.8}],
            },
            question="Is there a dog in the image?", answer="yes",
        ),
        _scene(
            out, "pos_small",
            objects=[{"label": "cat", "box": [10, 10, 28, 26]}],
            experts={
                "A": [{"label": "cat", "box": [10, 10, 28, 26], "score": 0.85}],
                "B": [{"label": "cat", "box": [11, 10, 29, 26], "score": 0.8}],
            },
            question="Is there a cat in the image?", answer="yes",
        ),
        _scene(
            out, "pos_single",
            objects=[{"label": "bird", "box": [60, 60, 78, 74]}],
            experts={
                "A": [{"label": "bird", "box": [60, 60, 78, 74], "score": 0.7}],
                "B": [],
            },
            question="Is there a bird in the image?", answer="yes",
        ),
        _scene(
            out, "neg_halluc",
            objects=[{"label": "cat", "box": [30, 30, 60, 60]}],
            experts={
                "A": [{"label": "person", "box": [90, 40, 130, 100], "score": 0.5}],
                "B": [],
            },
            question="Is there a person in the image?", answer="no",
        ),
        _scene(
            out, "neg_clean",
            objects=[{"label": "dog", "box": [20, 20, 100, 90]}],
            experts={
                "A": [{"label": "dog", "box": [21, 20, 101, 90], "score": 0.9}],
                "B": [{"label": "dog", "box": [20, 21, 100, 91], "score": 0.8}],
            },
            question="Is there a keyboard in the image?", answer="no",
        ),
    ]
    path = out / "scenes.jsonl"
    path.write_text("\n".join(json.dumps(s) for s in scenes) + "\n", encoding="utf-8")
    return path
