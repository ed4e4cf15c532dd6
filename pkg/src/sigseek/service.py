"""HTTP query service: point-in, ranked matches out, plus labeling sessions.

A thin adapter over the library pipeline: /v1/query responses are exactly
the output of the in-process ranked retrieval on the same store/index, so
the HTTP layer adds no behavior of its own. Sessions hold a growing query
set driven by true/false labels; the label history is append-only and
replaying it reconstructs the query set.
"""

from __future__ import annotations

import io
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .errors import SigseekError
from .evaluation import QuerySet, run_query
from .mih import MihIndex
from .sigcore import VoxelCoord, sig_from_hex, sig_to_hex
from .store import BoundsError, EmptyStoreError, ShardedStore, lookup_signature


@dataclass
class ServiceConfig:
    nms_threshold: float = 8.0
    top_k: int = 50
    rank_n: int = 10
    patch_size_cap: int = 256
    session_log: Path | None = None


@dataclass
class SessionState:
    session_id: str
    queryset: QuerySet
    seeds: list[tuple[int, int, int]]
    config: dict
    label_history: list[dict] = field(default_factory=list)

    def labeled_coords(self) -> set[tuple[int, int, int]]:
        return {(e["x"], e["y"], e["z"]) for e in self.label_history}


@dataclass
class ServiceState:
    store: ShardedStore | None = None
    index: MihIndex | None = None
    volume: np.ndarray | None = None
    config: ServiceConfig = field(default_factory=ServiceConfig)
    ready: bool = False
    sessions: dict[str, SessionState] = field(default_factory=dict)
    _session_counter: itertools.count = field(default_factory=itertools.count)


class QueryBody(BaseModel):
    x: int | None = None
    y: int | None = None
    z: int | None = None
    signature_hex: str | None = None
    k: int | None = None
    t: float | None = None


class SessionBody(BaseModel):
    seeds: list[dict] = []
    t: float | None = None
    k: int | None = None
    rank_n: int | None = None


class LabelBody(BaseModel):
    x: int
    y: int
    z: int
    verdict: bool


def _err(status: int, category: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": category, "message": message})


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="sigseek", docs_url=None, redoc_url=None)
    app.state.sigseek = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        fields = ", ".join(
            ".".join(str(p) for p in err.get("loc", ())) for err in exc.errors()
        )
        return _err(400, "validation", f"invalid parameters: {fields}")

    def guard_ready():
        if not state.ready:
            return _err(503, "loading", "index is still loading")
        return None

    # ------------------------------------------------------------------
    @app.get("/v1/signature")
    def get_signature(x: int, y: int, z: int):
        not_ready = guard_ready()
        if not_ready:
            return not_ready
        try:
            res = lookup_signature(state.store, VoxelCoord(x, y, z))
        except EmptyStoreError as e:
            return _err(404, "empty-store", str(e))
        except (BoundsError, SigseekError) as e:
            return _err(400, "bounds", str(e))
        rec = res.record
        return {
            "x": rec.coord.x,
            "y": rec.coord.y,
            "z": rec.coord.z,
            "signature": sig_to_hex(rec.sig),
            "distance_to_site": res.distance,
        }

    # ------------------------------------------------------------------
    def resolve_probe(body: QueryBody):
        """Returns (signature, probe site coord or None) or an error response."""
        has_point = body.x is not None or body.y is not None or body.z is not None
        has_sig = body.signature_hex is not None
        if has_point == has_sig:
            return _err(400, "validation",
                        "provide either x,y,z or signature_hex, not both or neither")
        if has_sig:
            try:
                return sig_from_hex(body.signature_hex), None
            except SigseekError as e:
                return _err(400, "validation", str(e))
        if body.x is None or body.y is None or body.z is None:
            return _err(400, "validation", "point queries need all of x, y, z")
        try:
            res = lookup_signature(state.store, VoxelCoord(body.x, body.y, body.z))
        except EmptyStoreError as e:
            return _err(404, "empty-store", str(e))
        except (BoundsError, SigseekError) as e:
            return _err(400, "bounds", str(e))
        return res.record.sig, res.record.coord

    def ranked_matches(qs: QuerySet, t: float, k: int, self_site) -> list[dict]:
        preds = run_query(state.index, qs, t=t, k=k)
        out = []
        for p in preds:
            entry = {
                "x": p.coord.x,
                "y": p.coord.y,
                "z": p.coord.z,
                "distance": p.distance,
                "rank": p.rank,
            }
            if self_site is not None:
                entry["self"] = p.coord == self_site and p.distance == 0.0
            out.append(entry)
        return out

    @app.post("/v1/query")
    def post_query(body: QueryBody):
        not_ready = guard_ready()
        if not_ready:
            return not_ready
        k = body.k if body.k is not None else state.config.top_k
        t = body.t if body.t is not None else state.config.nms_threshold
        if k < 1:
            return _err(400, "validation", "k must be >= 1")
        if t <= 0:
            return _err(400, "validation", "t must be > 0")
        resolved = resolve_probe(body)
        if isinstance(resolved, JSONResponse):
            return resolved
        sig, site = resolved
        qs = QuerySet.from_signatures([(site or VoxelCoord(0, 0, 0), sig)])
        return {"matches": ranked_matches(qs, t, k, site)}

    # ------------------------------------------------------------------
    def session_or_none(session_id: str) -> SessionState | None:
        return state.sessions.get(session_id)

    def log_event(event: dict):
        if state.config.session_log is not None:
            with open(state.config.session_log, "a") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")

    @app.post("/v1/session")
    def post_session(body: SessionBody):
        not_ready = guard_ready()
        if not_ready:
            return not_ready
        if not body.seeds:
            return _err(400, "validation", "at least one seed site is required")
        session_id = f"s{next(state._session_counter)}"
        qs = None
        seeds = []
        for seed in body.seeds:
            if not all(axis in seed for axis in ("x", "y", "z")):
                return _err(400, "validation", "each seed needs x, y, z")
            try:
                res = lookup_signature(
                    state.store, VoxelCoord(int(seed["x"]), int(seed["y"]), int(seed["z"]))
                )
            except EmptyStoreError as e:
                return _err(404, "empty-store", str(e))
            except (BoundsError, SigseekError) as e:
                return _err(400, "bounds", str(e))
            rec = res.record
            if qs is None:
                qs = QuerySet.from_signatures([(rec.coord, rec.sig)])
            elif rec.coord not in qs.coords:
                qs.add_signature(rec.coord, rec.sig)
            seeds.append(rec.coord.as_tuple())
        cfg = {
            "t": body.t if body.t is not None else state.config.nms_threshold,
            "k": body.k if body.k is not None else state.config.top_k,
            "rank_n": body.rank_n if body.rank_n is not None else state.config.rank_n,
        }
        sess = SessionState(session_id=session_id, queryset=qs, seeds=seeds, config=cfg)
        state.sessions[session_id] = sess
        log_event({"event": "session", "id": session_id, "seeds": seeds})
        return {"id": session_id, "query_set_size": len(qs), "config": cfg}

    @app.get("/v1/session/{session_id}")
    def get_session(session_id: str):
        sess = session_or_none(session_id)
        if sess is None:
            return _err(404, "unknown-session", f"no session {session_id}")
        return {
            "id": sess.session_id,
            "config": sess.config,
            "seeds": [list(s) for s in sess.seeds],
            "query_set": [
                {"x": cst.x, "y": cst.y, "z": cst.z, "signature": sig_to_hex(sig)}
                for cst, sig in zip(sess.queryset.coords, sess.queryset.signatures)
            ],
            "label_history": sess.label_history,
        }

    @app.post("/v1/session/{session_id}/label")
    def post_label(session_id: str, body: LabelBody):
        sess = session_or_none(session_id)
        if sess is None:
            return _err(404, "unknown-session", f"no session {session_id}")
        key = (body.x, body.y, body.z)
        if key in sess.labeled_coords():
            return _err(409, "already-labeled", f"{key} already labeled")
        coord = VoxelCoord(*key)
        rec = state.index.record_at(coord)
        if rec is None:
            return _err(400, "validation", f"{key} is not a stored signature site")
        entry = {
            "x": body.x,
            "y": body.y,
            "z": body.z,
            "verdict": body.verdict,
            "timestamp": time.time(),
        }
        sess.label_history.append(entry)
        if body.verdict and coord not in sess.queryset.coords:
            sess.queryset.add_signature(coord, rec.sig)
        log_event({"event": "label", "id": session_id, **{
            k: v for k, v in entry.items() if k != "timestamp"
        }})
        return {
            "query_set_size": len(sess.queryset),
            "labels_used": len(sess.label_history),
        }

    @app.get("/v1/session/{session_id}/next")
    def get_next(session_id: str, rank_n: int | None = None):
        sess = session_or_none(session_id)
        if sess is None:
            return _err(404, "unknown-session", f"no session {session_id}")
        start = rank_n if rank_n is not None else sess.config["rank_n"]
        if start < 1:
            return _err(400, "validation", "rank_n must be >= 1")
        preds = run_query(
            state.index, sess.queryset, t=sess.config["t"], k=sess.config["k"]
        )
        labeled = sess.labeled_coords()
        members = {c.as_tuple() for c in sess.queryset.coords}
        for p in preds[start - 1 :]:
            key = p.coord.as_tuple()
            if key in labeled or key in members:
                continue
            return {
                "candidate": {
                    "x": p.coord.x,
                    "y": p.coord.y,
                    "z": p.coord.z,
                    "distance": p.distance,
                    "rank": p.rank,
                },
                "exhausted": False,
            }
        return {"candidate": None, "exhausted": True}

    # ------------------------------------------------------------------
    @app.get("/v1/patch")
    def get_patch(x: int, y: int, z: int, size: int = 64):
        not_ready = guard_ready()
        if not_ready:
            return not_ready
        if state.volume is None:
            return _err(404, "no-volume", "service has no volume loaded")
        if size < 1 or size > state.config.patch_size_cap:
            return _err(
                400, "validation",
                f"size must be in [1, {state.config.patch_size_cap}]",
            )
        img = render_patch(state.volume, x, y, z, size)
        buf = io.BytesIO()
        Image.fromarray(img, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    return app


def render_patch(volume: np.ndarray, x: int, y: int, z: int, size: int) -> np.ndarray:
    """8-bit grayscale view of the z-slice window centered at (x, y).

    Rows are y, columns are x; regions outside the volume render as 0.
    Intensity mapping is linear [0,1] -> [0,255] with round-half-up.
    """
    out = np.zeros((size, size), dtype=np.uint8)
    if volume.ndim == 2:
        plane = volume
    else:
        if not 0 <= z < volume.shape[2]:
            return out
        plane = volume[:, :, z]
    x0 = x - size // 2
    y0 = y - size // 2
    xs = slice(max(0, x0), min(plane.shape[0], x0 + size))
    ys = slice(max(0, y0), min(plane.shape[1], y0 + size))
    if xs.start >= xs.stop or ys.start >= ys.stop:
        return out
    window = plane[xs, ys]
    quantized = np.floor(np.clip(window, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    out[ys.start - y0 : ys.stop - y0, xs.start - x0 : xs.stop - x0] = quantized.T
    return out
