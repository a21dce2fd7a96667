"""HTTP service: health, single-image analysis, and multi-turn chat.

Endpoints (JSON):
  GET  /health          -> {"status": "ok"}
  POST /analyze         -> AnalyzeResult (multipart image upload)
  POST /chat            -> {"reply": str} for {"session_id", "message"}
Static UI assets (when built) are served under /ui.

The analysis engine is read-only with respect to checkpoints; sessions are
in-memory with an LRU cap.
"""

import base64
import io
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry
from .config import Config
from .encoders import IMAGE_SIZE
from .evalproto import ParsedLabel, parse_response
from .fpl_llm import LlmTuner
from .kfd import KfdModel
from .llm_client import ChatRequest, LlmClientError, complete
from .numnn.checkpoint import CheckpointError, apply_checkpoint, load_checkpoint
from .simulate import generate_toy_face

MAX_SESSIONS = 128
REGION_OVERLAP_THRESHOLD = 0.25


@dataclass
class AnalyzeResult:
    score: float
    seg_map: str                # base64 PNG, 224x224 grayscale
    regions_guess: list[str]
    prompt_text: str
    answer_text: str
    parsed: dict                # {"label", "matched_rule"}
    session_id: str

    def to_dict(self) -> dict:
        return asdict(self)


class EngineNotReady(Exception):
    """Checkpoint missing or unloadable; maps to HTTP 503."""


class BadImage(Exception):
    """Undecodable or invalid upload; maps to HTTP 400."""


def _region_masks() -> list[tuple[str, np.ndarray]]:
    """Rasterized hulls of each forgery region on the canonical toy-face
    landmark layout, used to name the areas a segmentation map covers."""
    _, lms = generate_toy_face(0)
    masks = []
    for region in geometry.ForgeryRegion:
        hull = geometry.convex_hull(lms.region_points(region))
        masks.append((region.display_name,
                      geometry.rasterize_hull(hull, IMAGE_SIZE, IMAGE_SIZE)))
    return masks


class AnalysisEngine:
    """KFD + prompt assembly + answer generation behind the HTTP surface."""

    def __init__(self, config: Config | None = None,
                 kfd_checkpoint: str | None = None,
                 llm_checkpoint: str | None = None):
        self.config = config or Config()
        self._error: str | None = None
        try:
            self.kfd = KfdModel(self.config.kfd)
            self.tuner = LlmTuner(self.kfd)
            if kfd_checkpoint is not None:
                apply_checkpoint(self.kfd.store, load_checkpoint(kfd_checkpoint))
            if llm_checkpoint is not None:
                apply_checkpoint(self.tuner.store, load_checkpoint(llm_checkpoint))
        except (OSError, CheckpointError) as err:
            self._error = f"checkpoint unavailable: {err}"
        self._region_masks = _region_masks()

    @property
    def ready(self) -> bool:
        return self._error is None

    @property
    def error(self) -> str | None:
        return self._error

    def decode_image(self, data: bytes) -> np.ndarray:
        try:
            img = Image.open(io.BytesIO(data)).convert("RGB")
        except Exception as err:
            raise BadImage(f"cannot decode image: {err}") from err
        if img.size != (IMAGE_SIZE, IMAGE_SIZE):
            img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        return np.asarray(img, np.float32) / 255.0

    def regions_guess(self, seg_map: np.ndarray, score: float) -> list[str]:
        if score <= 0.5:
            return []
        binary = seg_map >= 0.5
        out = []
        for name, mask in self._region_masks:
            area = float(mask.sum())
            if area > 0 and float((binary & (mask > 0)).sum()) / area \
                    >= REGION_OVERLAP_THRESHOLD:
                out.append(name)
        return out

    def answer_prompt(self, prompt_text: str, image: np.ndarray | None = None,
                      kfd_out=None) -> str:
        endpoint = self.config.llm.endpoint
        if endpoint:
            response = complete(endpoint, ChatRequest(
                model=self.config.llm.model,
                messages=[{"role": "user", "content": prompt_text}],
                timeout=self.config.llm.timeout))
            return response.content
        if image is not None:
            return self.tuner.answer(image, kfd_out)
        tokens = self.tuner.lm.greedy_decode(
            self.tuner.lm.embed_tokens(
                [b for b in prompt_text.encode("utf-8")]), max_tokens=64)
        from .fpl_llm import detokenize_bytes
        return detokenize_bytes(tokens)

    def analyze(self, data: bytes, session_id: str) -> AnalyzeResult:
        if not self.ready:
            raise EngineNotReady(self._error)
        image = self.decode_image(data)
        kfd_out = self.kfd.infer(image)
        prompt, _, _ = self.tuner.build_prompt(image, kfd_out)
        answer = self.answer_prompt(prompt.text, image, kfd_out)
        parsed = parse_response(answer)
        seg8 = np.clip(kfd_out.seg_map * 255.0, 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(seg8, mode="L").save(buf, format="PNG")
        return AnalyzeResult(
            score=float(kfd_out.score),
            seg_map=base64.b64encode(buf.getvalue()).decode("ascii"),
            regions_guess=self.regions_guess(kfd_out.seg_map, kfd_out.score),
            prompt_text=prompt.text,
            answer_text=answer,
            parsed={"label": parsed.label, "matched_rule": parsed.matched_rule},
            session_id=session_id,
        )


@dataclass
class Session:
    history: list[dict] = field(default_factory=list)
    prompt_text: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory LRU session map; each session's history is its own lock's
    responsibility."""

    def __init__(self, cap: int = MAX_SESSIONS):
        self.cap = cap
        self._lock = threading.Lock()
        self._sessions: OrderedDict[str, Session] = OrderedDict()

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id in self._sessions:
                self._sessions.move_to_end(session_id)
                return self._sessions[session_id]
            session = Session()
            self._sessions[session_id] = session
            while len(self._sessions) > self.cap:
                self._sessions.popitem(last=False)
            return session

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


def chat_turn(engine: AnalysisEngine, session: Session, message: str) -> str:
    """One chat turn: the first turn of an analyzed session carries the
    assembled detection prompt; later turns send the message as-is."""
    with session.lock:
        first_turn = not session.history
        if first_turn and session.prompt_text:
            outbound = session.prompt_text + " " + message
        else:
            outbound = message
        reply = engine.answer_prompt(outbound)
        session.history.append({"role": "user", "content": message})
        session.history.append({"role": "assistant", "content": reply})
        return reply


def create_app(config: Config | None = None,
               kfd_checkpoint: str | None = None,
               llm_checkpoint: str | None = None):
    from fastapi import FastAPI, File, HTTPException, Request, UploadFile
    from fastapi.staticfiles import StaticFiles

    engine = AnalysisEngine(config, kfd_checkpoint, llm_checkpoint)
    sessions = SessionStore()
    app = FastAPI(title="forgelab", version="0.1.0")
    app.state.engine = engine
    app.state.sessions = sessions

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/analyze")
    async def analyze(file: UploadFile = File(...), session_id: str = ""):
        data = await file.read()
        if not data:
            raise HTTPException(status_code=400, detail="empty upload")
        sid = session_id or f"s{np.random.default_rng().integers(1, 2**63)}"
        try:
            result = engine.analyze(data, sid)
        except BadImage as err:
            raise HTTPException(status_code=400, detail=str(err)) from err
        except EngineNotReady as err:
            raise HTTPException(status_code=503, detail=str(err)) from err
        except LlmClientError as err:
            raise HTTPException(status_code=502, detail=str(err)) from err
        sessions.get(sid).prompt_text = result.prompt_text
        return result.to_dict()

    @app.post("/chat")
    async def chat(request: Request):
        try:
            doc = await request.json()
        except Exception as err:
            raise HTTPException(status_code=400, detail="invalid JSON body") from err
        session_id = doc.get("session_id")
        message = doc.get("message")
        if not isinstance(session_id, str) or not session_id:
            raise HTTPException(status_code=400, detail="session_id required")
        if not isinstance(message, str) or not message.strip():
            raise HTTPException(status_code=400, detail="message required")
        if not engine.ready:
            raise HTTPException(status_code=503, detail=engine.error)
        session = sessions.get(session_id)
        try:
            reply = chat_turn(engine, session, message)
        except LlmClientError as err:
            raise HTTPException(status_code=502, detail=str(err)) from err
        return {"reply": reply}

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
