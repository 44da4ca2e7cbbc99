"""FastAPI application exposing /detect, /generate, and /health."""

from __future__ import annotations

import base64
import binascii
import io
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .backends import build_detector, build_reasoner
from .config import BridgeConfig


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _decode_image(b64: str, max_side: int):
    """Returns (raw_bytes, image) or an error response."""
    try:
        raw = base64.b64decode(b64, validate=True)
        image = Image.open(io.BytesIO(raw))
        image.load()
    except (binascii.Error, UnidentifiedImageError, OSError, ValueError):
        return None, _error(422, "undecodable image")
    if max(image.size) > max_side:
        return None, _error(422, f"image side exceeds {max_side}")
    return (raw, image.convert("RGB")), None


def create_app(config: BridgeConfig) -> FastAPI:
    app = FastAPI(title="model-bridge")
    detectors = {
        "A": build_detector(config.expert_a, "A"),
        "B": build_detector(config.expert_b, "B"),
    }
    reasoner = build_reasoner(config.reasoner)
    executor = ThreadPoolExecutor(max_workers=8)

    @app.get("/health")
    async def health():
        return {
            "status": "ok",
            "backends": {
                "A": config.expert_a,
                "B": config.expert_b,
                "reasoner": config.reasoner,
            },
        }

    @app.post("/detect")
    async def detect(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed body")
        if not isinstance(body, dict):
            return _error(400, "malformed body")
        queries = body.get("queries")
        if not isinstance(queries, list) or not queries or not all(
            isinstance(q, str) and q.strip() for q in queries
        ):
            return _error(400, "missing queries")
        image_b64 = body.get("image_b64")
        if not isinstance(image_b64, str) or not image_b64:
            return _error(400, "missing image_b64")
        threshold = body.get("score_threshold", 0.0)
        if not isinstance(threshold, (int, float)) or not (0.0 <= threshold <= 1.0):
            return _error(400, "invalid score_threshold")

        slot = request.query_params.get("expert", "A")
        if slot not in detectors:
            return _error(400, f"unknown expert slot {slot!r}")
        backend = detectors[slot]
        if backend is None:
            return _error(503, "backend unloaded")

        decoded, err = _decode_image(image_b64, config.max_image_side)
        if err is not None:
            return err
        raw, image = decoded
        detections = backend.detect(raw, image, queries, float(threshold))
        return {"detections": detections, "image_size": [image.width, image.height]}

    @app.post("/generate")
    async def generate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed body")
        if not isinstance(body, dict):
            return _error(400, "malformed body")
        images_b64 = body.get("images_b64")
        if not isinstance(images_b64, list) or not images_b64:
            return _error(400, "missing images_b64")
        prompt = body.get("prompt")
        if not isinstance(prompt, str) or not prompt:
            return _error(400, "missing prompt")
        temperature = body.get("temperature", 1.0)
        if not isinstance(temperature, (int, float)) or temperature < 0:
            return _error(400, "invalid temperature")

        if reasoner is None:
            return _error(503, "backend unloaded")

        images = []
        for b64 in images_b64:
            if not isinstance(b64, str):
                return _error(422, "undecodable image")
            decoded, err = _decode_image(b64, config.max_image_side)
            if err is not None:
                return err
            images.append(decoded[1])

        future = executor.submit(reasoner.generate, images, prompt, float(temperature))
        try:
            text = future.result(timeout=config.request_timeout_s)
        except FutureTimeout:
            return _error(504, "reasoner timed out")
        return {"text": text}

    return app
