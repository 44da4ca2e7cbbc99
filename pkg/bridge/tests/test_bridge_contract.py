"""Contract tests: stub-backend responses validate against the shared wire
schemas shipped with the pipeline package, and error paths return the
documented statuses and bodies."""

import base64
import io

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from active_look.schemas import validate_payload
from model_bridge.app import create_app
from model_bridge.config import BridgeConfig


def _png_b64(width=160, height=120, color=(1, 2, 3)):
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _scene_b64(scenes_jsonl, image_id):
    import json

    for line in scenes_jsonl.read_text().splitlines():
        obj = json.loads(line)
        if obj["image_id"] == image_id:
            with open(obj["image_path"], "rb") as fh:
                return base64.b64encode(fh.read()).decode("ascii")
    raise KeyError(image_id)


@pytest.fixture(scope="module")
def client(scenes_jsonl):
    config = BridgeConfig(
        expert_a=f"fixture:{scenes_jsonl}#A",
        expert_b=f"fixture:{scenes_jsonl}#B",
        reasoner="echo:Yes",
        max_image_side=512,
        request_timeout_s=1.0,
    )
    return TestClient(create_app(config))


class TestHealth:
    def test_health_shape(self, client, scenes_jsonl):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert set(body["backends"]) == {"A", "B", "reasoner"}
        assert body["backends"]["A"].startswith("fixture:")


class TestDetect:
    def test_valid_request_schema_conformant(self, client, scenes_jsonl):
        request = {
            "image_b64": _scene_b64(scenes_jsonl, "pos_large"),
            "queries": ["dog"],
            "score_threshold": 0.3,
        }
        validate_payload("detect_request", request)
        resp = client.post("/detect?expert=A", json=request)
        assert resp.status_code == 200
        payload = resp.json()
        validate_payload("detect_response", payload)
        assert payload["image_size"] == [160, 120]
        assert len(payload["detections"]) == 1
        assert payload["detections"][0]["label"] == "dog"

    def test_slot_b_serves_other_expert(self, client, scenes_jsonl):
        request = {
            "image_b64": _scene_b64(scenes_jsonl, "pos_single"),
            "queries": ["bird"],
            "score_threshold": 0.3,
        }
        a = client.post("/detect?expert=A", json=request).json()
        b = client.post("/detect?expert=B", json=request).json()
        assert len(a["detections"]) == 1
        assert b["detections"] == []

    def test_high_threshold_empty_but_valid(self, client, scenes_jsonl):
        request = {
            "image_b64": _scene_b64(scenes_jsonl, "pos_large"),
            "queries": ["dog"],
            "score_threshold": 0.99,
        }
        payload = client.post("/detect?expert=A", json=request).json()
        validate_payload("detect_response", payload)
        assert payload["detections"] == []

    def test_unknown_image_empty(self, client):
        request = {"image_b64": _png_b64(), "queries": ["dog"], "score_threshold": 0.1}
        payload = client.post("/detect?expert=A", json=request).json()
        validate_payload("detect_response", payload)
        assert payload["detections"] == []

    def test_missing_queries_400(self, client):
        resp = client.post("/detect", json={"image_b64": _png_b64()})
        assert resp.status_code == 400
        assert resp.json() == {"error": "missing queries"}

    def test_empty_queries_400(self, client):
        resp = client.post("/detect", json={"image_b64": _png_b64(), "queries": []})
        assert resp.status_code == 400

    def test_undecodable_image_422(self, client):
        resp = client.post(
            "/detect", json={"image_b64": "bm90IGFuIGltYWdl", "queries": ["dog"]}
        )
        assert resp.status_code == 422

    def test_oversized_image_422(self, client):
        resp = client.post(
            "/detect", json={"image_b64": _png_b64(600, 600), "queries": ["dog"]}
        )
        assert resp.status_code == 422

    def test_unknown_slot_400(self, client):
        resp = client.post(
            "/detect?expert=C", json={"image_b64": _png_b64(), "queries": ["dog"]}
        )
        assert resp.status_code == 400

    def test_unloaded_backend_503(self, scenes_jsonl):
        config = BridgeConfig(expert_a="unloaded", expert_b=f"fixture:{scenes_jsonl}#B",
                              reasoner="echo:Yes")
        unloaded_client = TestClient(create_app(config))
        resp = unloaded_client.post(
            "/detect?expert=A", json={"image_b64": _png_b64(), "queries": ["dog"]}
        )
        assert resp.status_code == 503


class TestGenerate:
    def test_echo_round_trip(self, client):
        request = {"images_b64": [_png_b64()], "prompt": "hello", "temperature": 1.0}
        validate_payload("generate_request", request)
        resp = client.post("/generate", json=request)
        assert resp.status_code == 200
        payload = resp.json()
        validate_payload("generate_response", payload)
        assert payload == {"text": "Yes"}

    def test_three_images_nonempty_text(self, client):
        request = {
            "images_b64": [_png_b64(), _png_b64(color=(9, 9, 9)), _png_b64(40, 40)],
            "prompt": "Task: Answer the user's question",
        }
        payload = client.post("/generate", json=request).json()
        assert payload["text"]

    def test_missing_prompt_400(self, client):
        resp = client.post("/generate", json={"images_b64": [_png_b64()]})
        assert resp.status_code == 400

    def test_missing_images_400(self, client):
        resp = client.post("/generate", json={"prompt": "x"})
        assert resp.status_code == 400

    def test_undecodable_image_422(self, client):
        resp = client.post("/generate", json={"images_b64": ["???"], "prompt": "x"})
        assert resp.status_code == 422

    def test_timeout_504(self, scenes_jsonl):
        config = BridgeConfig(
            expert_a=f"fixture:{scenes_jsonl}#A",
            expert_b=f"fixture:{scenes_jsonl}#B",
            reasoner="sleep:2.0",
            request_timeout_s=0.2,
        )
        slow_client = TestClient(create_app(config))
        resp = slow_client.post(
            "/generate", json={"images_b64": [_png_b64()], "prompt": "x"}
        )
        assert resp.status_code == 504

    def test_unloaded_503(self):
        config = BridgeConfig()
        resp = TestClient(create_app(config)).post(
            "/generate", json={"images_b64": [_png_b64()], "prompt": "x"}
        )
        assert resp.status_code == 503


class TestConfig:
    def test_identical_expert_backends_rejected(self, scenes_jsonl):
        with pytest.raises(ValueError, match="distinct"):
            BridgeConfig(
                expert_a=f"fixture:{scenes_jsonl}#A",
                expert_b=f"fixture:{scenes_jsonl}#A",
            )

    def test_distinct_slots_of_same_file_allowed(self, scenes_jsonl):
        BridgeConfig(
            expert_a=f"fixture:{scenes_jsonl}#A",
            expert_b=f"fixture:{scenes_jsonl}#B",
        )
