"""HTTP/JSON façade over a live annotation session.

One session per server process. REST endpoints expose the current embedding
and accept annotations and training triggers; a WebSocket at ``/api/stream``
replays the latest snapshot on connect and then pushes one message per
completed epoch, so a client can animate training while it runs.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.concurrency import run_in_threadpool

from .annotation_session import (
    AlreadyTraining,
    AnnotationEvent,
    ClassOutOfRange,
    PointsView,
    Session,
    UnknownSampleId,
)
from .data_ingest import load_mnist, strip_labels, subsample_stratified
from .dgm_model import ModelConfig
from .trainer import EpochSnapshot

# ------------------------------------------------------------- serialization


def _sorted_order(sample_ids: np.ndarray) -> np.ndarray:
    return np.argsort(sample_ids, kind="stable")


def points_payload(view: PointsView) -> dict:
    """Full per-point records, stably ordered by sample id."""
    pts = view.points
    entries = []
    for i in _sorted_order(pts.sample_ids):
        entries.append(
            {
                "id": int(pts.sample_ids[i]),
                "mu": [float(v) for v in pts.mu[i]],
                "sigma": [float(v) for v in pts.sigma[i]],
                "label": int(view.labels[i]) if view.label_mask[i] else None,
                "pred": int(pts.pred_class[i]),
                "conf": float(pts.confidence[i]),
            }
        )
    return {"cycle": view.cycle, "epoch": view.epoch, "points": entries}


def epoch_message(snap: EpochSnapshot) -> str:
    """Compact stream encoding: one [id, mu components…] row per point."""
    pts = snap.points
    compact = [
        [int(pts.sample_ids[i]), *(float(v) for v in pts.mu[i])]
        for i in _sorted_order(pts.sample_ids)
    ]
    return json.dumps(
        {
            "type": "epoch",
            "cycle": snap.cycle,
            "epoch": snap.epoch,
            "loss": snap.loss.to_dict(),
            "points": compact,
        },
        separators=(",", ":"),
    )


def _stream_item_json(kind: str, payload) -> str:
    if kind == "epoch":
        return epoch_message(payload)
    return json.dumps({"type": kind, **payload}, separators=(",", ":"))


# ---------------------------------------------------------------- app factory


def create_app(session: Session | None = None, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="latent-loom", docs_url=None, redoc_url=None)
    app.state.session = session

    def require_session() -> Session:
        s = app.state.session
        if s is None:
            raise HTTPException(status_code=503, detail="session not initialized")
        return s

    @app.get("/api/points")
    def get_points() -> dict:
        return points_payload(require_session().current_points())

    @app.post("/api/annotations")
    async def post_annotations(request: Request) -> dict:
        session = require_session()
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be valid JSON")
        try:
            raw = body["assignments"]
            assignments = []
            for a in raw:
                sid, label = a["id"], a["label"]
                # bool is an int subclass; exclude it explicitly
                if isinstance(sid, bool) or isinstance(label, bool):
                    raise TypeError
                if not isinstance(sid, int) or not isinstance(label, int):
                    raise TypeError
                assignments.append((sid, label))
            source = body.get("source", "ui")
            event = AnnotationEvent(assignments=tuple(assignments), source=source, timestamp=time.time())
        except (KeyError, TypeError, IndexError, ValueError) as e:
            raise HTTPException(status_code=400, detail=f"malformed annotation body: {e}")
        try:
            summary = session.apply_annotations(event)
        except UnknownSampleId as e:
            raise HTTPException(status_code=404, detail=str(e))
        except ClassOutOfRange as e:
            raise HTTPException(status_code=422, detail=str(e))
        return {
            "accepted": summary.accepted,
            "relabeled": summary.relabeled,
            "total_labeled": summary.total_labeled,
        }

    @app.post("/api/train")
    async def post_train(request: Request):
        session = require_session()
        raw = await request.body()
        try:
            body = json.loads(raw) if raw else {}
        except Exception:
            raise HTTPException(status_code=400, detail="body must be valid JSON")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")

        cfg = session.train_config
        weights = cfg.weights
        if "epochs" in body:
            e = body["epochs"]
            if isinstance(e, bool) or not isinstance(e, int) or e < 1:
                raise HTTPException(status_code=400, detail="epochs must be an integer >= 1")
            cfg = replace(cfg, epochs=e)
        for key in ("beta_kl", "beta_classifier"):
            if key in body:
                v = body[key]
                if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                    raise HTTPException(status_code=400, detail=f"{key} must be a non-negative number")
                weights = replace(weights, **{key: float(v)})
        cfg = replace(cfg, weights=weights)

        try:
            cycle = session.trigger_update(override=cfg)
        except AlreadyTraining:
            return JSONResponse({"status": "training", "cycle": session.cycle}, status_code=409)
        return {"cycle": cycle, "status": "started"}

    @app.get("/api/status")
    def get_status() -> dict:
        session = app.state.session
        if session is None:
            return {"ready": False, "training": False, "cycle": 0, "epoch": 0, "labeled": 0, "n": 0, "config": None}
        view = session.current_points()
        cfg = session.train_config
        return {
            "ready": True,
            "training": view.training,
            "cycle": view.cycle,
            "epoch": view.epoch,
            "labeled": int(view.label_mask.sum()),
            "n": session.n,
            "config": {
                "latent_dim": session.model_config.latent_dim,
                "epochs": cfg.epochs,
                "batch_size": cfg.batch_size,
                "learning_rate": cfg.learning_rate,
                "beta_kl": cfg.weights.beta_kl,
                "beta_classifier": cfg.weights.beta_classifier,
                "seed": cfg.seed,
            },
        }

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        session = app.state.session
        if session is None:
            await ws.send_text(json.dumps({"type": "error", "cycle": 0, "epoch": 0, "message": "session not initialized"}))
            await ws.close()
            return

        sub = session.hub.subscribe()

        async def drain_client():
            # We never expect client payloads; this only notices disconnects.
            try:
                while True:
                    await ws.receive_text()
            except WebSocketDisconnect:
                pass

        reader = asyncio.ensure_future(drain_client())
        try:
            await ws.send_text(epoch_message(session.latest_snapshot()))
            while not reader.done():
                item = await run_in_threadpool(sub.get, 0.1)
                if item is None:
                    continue
                await ws.send_text(_stream_item_json(*item))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            sub.close()
            reader.cancel()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:

        @app.get("/")
        def index() -> dict:
            return {
                "service": "latent-loom",
                "endpoints": ["/api/points", "/api/annotations", "/api/train", "/api/status", "/api/stream"],
                "ui": "not bundled; build the frontend and pass --ui-dir",
            }

    return app


# --------------------------------------------------------------------- config


@dataclass(frozen=True)
class ServerConfig:
    """Process configuration; every flag also reads an LLOOM_* env default."""

    port: int = 8421
    host: str = "127.0.0.1"
    data_dir: str = "data/mnist"
    checkpoint: str | None = None
    latent_dim: int = 2
    labeled_fraction: float = 0.0
    seed: int = 0
    subsample: float = 0.1
    ui_dir: str | None = None


def _env(name: str, default):
    return os.environ.get(f"LLOOM_{name}", default)


def parse_config(argv: list[str] | None = None) -> ServerConfig:
    p = argparse.ArgumentParser(prog="latent-loom-server", description="Serve an annotation session over HTTP.")
    p.add_argument("--port", type=int, default=int(_env("PORT", 8421)))
    p.add_argument("--host", default=_env("HOST", "127.0.0.1"))
    p.add_argument("--data-dir", default=_env("DATA_DIR", "data/mnist"))
    p.add_argument("--checkpoint", default=_env("CHECKPOINT", None), help="session directory to resume")
    p.add_argument("--latent-dim", type=int, choices=(2, 3), default=int(_env("LATENT_DIM", 2)))
    p.add_argument("--labeled-fraction", type=float, default=float(_env("LABELED_FRACTION", 0.0)))
    p.add_argument("--seed", type=int, default=int(_env("SEED", 0)))
    p.add_argument("--subsample", type=float, default=float(_env("SUBSAMPLE", 0.1)), help="stratified fraction of the dataset to load")
    p.add_argument("--ui-dir", default=_env("UI_DIR", None), help="directory with the built UI bundle")
    a = p.parse_args(argv)
    return ServerConfig(
        port=a.port,
        host=a.host,
        data_dir=a.data_dir,
        checkpoint=a.checkpoint,
        latent_dim=a.latent_dim,
        labeled_fraction=a.labeled_fraction,
        seed=a.seed,
        subsample=a.subsample,
        ui_dir=a.ui_dir,
    )


def default_ui_dir() -> str | None:
    """Locate a built frontend bundle next to the working tree, if any."""
    candidates = [
        Path("frontend/dist"),
        Path(__file__).resolve().parents[2] / "frontend" / "dist",
    ]
    for c in candidates:
        if c.is_dir():
            return str(c)
    return None


def build_session(config: ServerConfig) -> Session:
    ds = load_mnist(config.data_dir, "train")
    if config.subsample < 1.0:
        ds = subsample_stratified(ds, config.subsample, config.seed)
    if config.labeled_fraction < 1.0:
        ds = strip_labels(ds, config.labeled_fraction, config.seed)
    if config.checkpoint:
        return Session.restore(config.checkpoint, ds)
    return Session(ds, model_config=ModelConfig(latent_dim=config.latent_dim), seed=config.seed)


def main(argv: list[str] | None = None) -> None:
    import uvicorn

    config = parse_config(argv)
    session = build_session(config)
    app = create_app(session, static_dir=config.ui_dir or default_ui_dir())
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


if __name__ == "__main__":
    main()
