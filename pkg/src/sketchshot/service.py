"""Interactive teaching service.

A long-running FastAPI app around one model checkpoint: clients register
new classes from a few sketch images and classify photos against the
grown label space. Registrations are serialised behind a writer lock and
publish an immutable classifier snapshot; classification always sees
either the pre- or post-registration classifier, never a mix.
"""
from __future__ import annotations

import base64
import io
import os
import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from . import generator as G
from .backbone import embed
from .checkpoint import (Checkpoint, RegistryEntry, checkpoint_hash,
                         load_checkpoint, save_checkpoint)
from .classifier import ClassifierWeights, predict
from .tensor import Array
from .training import CLASSIFIER_WEIGHTS

MAX_EXEMPLARS = 20


class ClassEntry(BaseModel):
    class_id: int
    display_name: str
    origin: str
    exemplar_count: int


class RegisterRequest(BaseModel):
    name: str = Field(min_length=1, max_length=64)
    images: list[str] = Field(min_length=1, max_length=MAX_EXEMPLARS)


class RegisterResponse(BaseModel):
    registered: ClassEntry
    classes: list[ClassEntry]


class ClassifyRequest(BaseModel):
    image: str


class Prediction(BaseModel):
    class_id: int
    display_name: str
    origin: str
    probability: float


class ClassifyResponse(BaseModel):
    predictions: list[Prediction]


class HealthResponse(BaseModel):
    status: str
    checkpoint: str
    num_classes: int
    image_size: int


@dataclass(frozen=True)
class _Snapshot:
    weights: ClassifierWeights
    entries: tuple[RegistryEntry, ...]
    by_id: dict


class ServiceState:
    """One mutable model behind a writer lock plus atomic read snapshots."""

    def __init__(self, ckpt: Checkpoint, path=None):
        self._ckpt = ckpt
        self._path = path
        self._write_lock = threading.Lock()
        self._snapshot = self._build_snapshot()

    @staticmethod
    def load(path) -> "ServiceState":
        return ServiceState(load_checkpoint(path), path=path)

    def _build_snapshot(self) -> _Snapshot:
        ckpt = self._ckpt
        rows = ckpt.params.entries[CLASSIFIER_WEIGHTS]
        entries = ckpt.registry.entries
        if rows.shape[0] != len(entries):
            raise ValueError(f"classifier has {rows.shape[0]} rows but registry "
                             f"has {len(entries)} classes")
        cw = ClassifierWeights(rows.copy(), ckpt.registry.class_ids, scale=ckpt.scale)
        return _Snapshot(cw, entries, {e.class_id: e for e in entries})

    @property
    def checkpoint(self) -> Checkpoint:
        return self._ckpt

    def snapshot(self) -> _Snapshot:
        return self._snapshot

    def health(self) -> dict:
        snap = self._snapshot
        return {"status": "ok", "checkpoint": checkpoint_hash(self._ckpt),
                "num_classes": len(snap.entries),
                "image_size": self._ckpt.backbone_cfg.image_size}

    def decode_image(self, payload: str) -> Array:
        try:
            raw = base64.b64decode(payload, validate=True)
            with Image.open(io.BytesIO(raw)) as im:
                size = self._ckpt.backbone_cfg.image_size
                im = im.convert("RGB").resize((size, size), Image.BILINEAR)
                return np.asarray(im, dtype=np.float64) / 255.0
        except (ValueError, UnidentifiedImageError, OSError) as exc:
            raise HTTPException(status_code=400, detail=f"undecodable image: {exc}")

    def register_class(self, name: str, images: list[Array]) -> RegistryEntry:
        """Embed the exemplars, generate a grown weight matrix treating all
        current classes as base, and atomically publish + persist it."""
        if not 1 <= len(images) <= MAX_EXEMPLARS:
            raise HTTPException(status_code=400,
                                detail=f"need 1..{MAX_EXEMPLARS} exemplar images")
        with self._write_lock:
            ckpt = self._ckpt
            if ckpt.registry.has_name(name):
                raise HTTPException(status_code=409, detail=f"class name '{name}' already exists")
            embs = np.stack([embed(ckpt.params, img, ckpt.backbone_cfg) for img in images])
            try:
                G.class_prototype(embs)  # zero-norm guard before any mutation
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            if G.QUERY in ckpt.params.entries:
                gat = G.GatParams.from_entries(ckpt.params.entries, rounds=ckpt.gat_rounds)
                use_gat = True
            else:
                d = ckpt.backbone_cfg.embed_dim
                gat = G.GatParams(np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)))
                use_gat = False
            rows = G.generate_rows(gat, ckpt.params.entries[CLASSIFIER_WEIGHTS],
                                   [embs], use_gat=use_gat)
            entry = RegistryEntry(ckpt.registry.next_id(), name, "incremental", len(images))
            ckpt.params.replace(CLASSIFIER_WEIGHTS, rows)
            ckpt.registry = ckpt.registry.with_entry(entry)
            if self._path is not None:
                save_checkpoint(ckpt, self._path)
            self._snapshot = self._build_snapshot()
            return entry

    def classify(self, image: Array) -> list[dict]:
        snap = self._snapshot
        try:
            f = embed(self._ckpt.params, image, self._ckpt.backbone_cfg)
            probs = predict(snap.weights, f)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        order = np.argsort(-probs, kind="stable")
        out = []
        for j in order:
            e = snap.by_id[snap.weights.class_ids[j]]
            out.append({"class_id": e.class_id, "display_name": e.display_name,
                        "origin": e.origin, "probability": float(probs[j])})
        return out


def _entry_models(entries) -> list[ClassEntry]:
    return [ClassEntry(class_id=e.class_id, display_name=e.display_name,
                       origin=e.origin, exemplar_count=e.exemplar_count)
            for e in entries]


def create_app(state: ServiceState, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="sketchshot", version="0.1.0")

    @app.get("/health", response_model=HealthResponse)
    def health():
        return state.health()

    @app.get("/classes", response_model=list[ClassEntry])
    def classes():
        return _entry_models(state.snapshot().entries)

    @app.post("/classes", response_model=RegisterResponse)
    def register(req: RegisterRequest):
        images = [state.decode_image(p) for p in req.images]
        entry = state.register_class(req.name, images)
        return RegisterResponse(registered=_entry_models([entry])[0],
                                classes=_entry_models(state.snapshot().entries))

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(req: ClassifyRequest):
        image = state.decode_image(req.image)
        return ClassifyResponse(predictions=state.classify(image))

    if frontend_dir and os.path.isdir(frontend_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")
    return app
