"""HTTP inference service: answer + evidence endpoints over loaded checkpoints.

Endpoints (HTTP/1.1, JSON unless noted):

* ``GET  /v1/health``  -> ``{"status": "ok"}``
* ``GET  /v1/models``  -> list of {model_id, variant, n_classes, config}
* ``POST /v1/answer``  -> AnswerResponse JSON (multipart: image, question,
  model_id, top_k=5, explain=false)
* ``POST /v1/explain`` -> heatmap PNG, or JSON via ``format=json``
  (same fields plus optional target_class)

Error contract: 400 malformed request (the offending field is named), 404
unknown model_id, 422 target_class out of range, 500 with an opaque incident
id and no stack trace. Models are loaded once at startup and never mutated,
so concurrent answer requests are safe; gradient-based explanation is
serialized by a per-process lock.
"""

import base64
import io
import logging
import os
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .explain import gradcam, render_overlay
from .model import VqaModel, load_checkpoint, predict
from .training import variant_name

logger = logging.getLogger("medvqa.service")

MAX_UPLOAD_BYTES = 10 * 1024 * 1024
DEFAULT_BIND = "127.0.0.1:8080"


class ModelRegistry:
    """Write-once map model_id -> (model, sidecar), filled at startup."""

    def __init__(self):
        self._entries: dict[str, tuple[VqaModel, dict]] = {}

    def load_directory(self, model_dir) -> None:
        model_dir = Path(model_dir)
        if not model_dir.is_dir():
            raise FileNotFoundError(f"model directory not found: {model_dir}")
        for sub in sorted(model_dir.iterdir()):
            if (sub / "checkpoint.json").is_file():
                self.add(sub.name, *load_checkpoint(sub))
        if not self._entries:
            raise FileNotFoundError(f"no loadable checkpoints under {model_dir}")

    def add(self, model_id: str, model: VqaModel, sidecar: dict) -> None:
        if model_id in self._entries:
            raise ValueError(f"duplicate model_id {model_id!r}")
        model.eval()
        self._entries[model_id] = (model, sidecar)

    def get(self, model_id: str) -> tuple[VqaModel, dict] | None:
        return self._entries.get(model_id)

    def describe(self) -> list[dict]:
        return [
            {
                "model_id": mid,
                "variant": variant_name(model.cfg),
                "n_classes": model.cfg.n_classes,
                "config": sidecar.get("model_config", {}),
            }
            for mid, (model, sidecar) in sorted(self._entries.items())
        ]


def _error(status: int, message: str, field: str | None = None) -> JSONResponse:
    payload: dict = {"error": message}
    if field:
        payload["field"] = field
    return JSONResponse(status_code=status, content=payload)


def _decode_upload(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def create_app(registry: ModelRegistry) -> FastAPI:
    app = FastAPI(title="medvqa inference service")
    explain_lock = threading.Lock()  # gradient contexts must not interleave

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception):
        incident = uuid.uuid4().hex
        logger.exception("incident %s on %s: %s", incident, request.url.path, exc)
        return JSONResponse(status_code=500, content={"error": "internal error", "id": incident})

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/models")
    def models():
        return registry.describe()

    def _validated_inputs(image, question, model_id):
        if image is None:
            return None, _error(400, "missing multipart file field 'image'", field="image")
        if question is None or not question.strip():
            return None, _error(400, "missing or empty field 'question'", field="question")
        if model_id is None or not model_id.strip():
            return None, _error(400, "missing field 'model_id'", field="model_id")
        entry = registry.get(model_id)
        if entry is None:
            return None, _error(404, f"unknown model_id {model_id!r}")
        return entry, None

    def _read_image(image: UploadFile):
        data = image.file.read(MAX_UPLOAD_BYTES + 1)
        if len(data) > MAX_UPLOAD_BYTES:
            return None, _error(400, "image exceeds the 10 MB upload cap", field="image")
        try:
            return _decode_upload(data), None
        except Exception:
            return None, _error(400, "unreadable image file", field="image")

    @app.post("/v1/answer")
    def answer(
        image: UploadFile | None = File(None),
        question: str | None = Form(None),
        model_id: str | None = Form(None),
        top_k: int = Form(5),
        explain: bool = Form(False),
    ):
        t0 = time.perf_counter()
        entry, err = _validated_inputs(image, question, model_id)
        if err is not None:
            return err
        model, sidecar = entry
        arr, err = _read_image(image)
        if err is not None:
            return err
        k = max(1, min(int(top_k), model.cfg.n_classes))
        pred = predict(model, arr, question, k=k)
        categories = sidecar.get("answer_categories", {})
        payload = {
            "answer": pred.top_k[0][1],
            "predicted_class": pred.predicted_class,
            "top_k": [{"answer": a, "probability": p} for _, a, p in pred.top_k],
            "category_guess": categories.get(pred.top_k[0][1], "unknown"),
            "model_id": model_id,
        }
        if explain:
            with explain_lock:
                heatmap = gradcam(model, arr, question, target_class=pred.predicted_class)
            png = render_overlay(heatmap.values, arr, alpha=0.5)
            payload["heatmap_png_base64"] = base64.b64encode(png).decode("ascii")
        payload["latency_ms"] = (time.perf_counter() - t0) * 1000.0
        return payload

    @app.post("/v1/explain")
    def explain_endpoint(
        image: UploadFile | None = File(None),
        question: str | None = Form(None),
        model_id: str | None = Form(None),
        target_class: int | None = Form(None),
        format: str = Form("png"),
    ):
        entry, err = _validated_inputs(image, question, model_id)
        if err is not None:
            return err
        model, _ = entry
        arr, err = _read_image(image)
        if err is not None:
            return err
        if target_class is not None and not 0 <= target_class < model.cfg.n_classes:
            return _error(
                422, f"target_class {target_class} out of range [0, {model.cfg.n_classes})"
            )
        with explain_lock:
            heatmap = gradcam(model, arr, question, target_class=target_class)
        if format == "json":
            return heatmap.to_json()
        png = render_overlay(heatmap.values, arr, alpha=0.5)
        return Response(content=png, media_type="image/png")

    return app


def make_default_app() -> FastAPI:
    """App factory for ``uvicorn medvqa.service:make_default_app``; reads
    MEDVQA_MODEL_DIR."""
    registry = ModelRegistry()
    registry.load_directory(os.environ.get("MEDVQA_MODEL_DIR", "./models"))
    return create_app(registry)


def serve(model_dir, bind_addr: str | None = None) -> None:
    """Load every checkpoint under ``model_dir`` and block serving HTTP."""
    import uvicorn

    bind = bind_addr or os.environ.get("MEDVQA_BIND", DEFAULT_BIND)
    host, _, port = bind.partition(":")
    registry = ModelRegistry()
    registry.load_directory(model_dir)
    app = create_app(registry)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080), log_level="info")
