"""Forgery Prompt Learner, byte-exact prompt assembly, a toy decoder-only
language model with LoRA adapters, the token cross-entropy loss, the
prompt-tuning step, and the alternating-dataset schedule.

The LM is byte-level: vocabulary = 256 bytes plus <img>, </img> and <eos>
specials, so template fidelity is testable byte for byte. The base LM and
the visual projector are frozen; tuning touches exactly the FPL parameters
(E_base included) and the LoRA adapters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kfd import KfdOutput
from .numnn.layers import (Conv2d, Linear, bilinear_resize,
                           bilinear_resize_backward, relu, relu_backward)
from .numnn.params import Adam, ParamStore
from .simulate import QUESTION_TAIL, TASK_SENTENCE, kfd_result_sentence

VOCAB_SIZE = 259
IMG_TOKEN = 256      # "<Img>"
IMG_END_TOKEN = 257  # "</Img>"
EOS_TOKEN = 258

PROMPT_PREFIX = "###Human: "
PROMPT_SUFFIX = " ###Assistant:"


# ---------------------------------------------------------------------------
# Configs


@dataclass
class FplConfig:
    n1: int = 4          # E_base rows
    n2: int = 4          # E_loc rows (from the segmentation map)
    n3: int = 4          # E_cons rows (from the consistency maps)
    n_v: int = 4         # E_visual rows
    c_emb: int = 64
    seed: int = 0

    @property
    def n_f(self) -> int:
        # row-preserving fusion: [E_base; E_loc; E_cons; E_cls] -> E_forgery
        return self.n1 + self.n2 + self.n3 + 1


@dataclass
class LoraConfig:
    r: int = 32
    alpha: int = 32
    dropout: float = 0.1


@dataclass
class LmConfig:
    c_emb: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    d_ff: int = 256
    context: int = 512
    vocab: int = VOCAB_SIZE
    seed: int = 0


# ---------------------------------------------------------------------------
# Tokenization and prompt sequence


def tokenize_bytes(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def detokenize_bytes(tokens: list[int]) -> str:
    return bytes(t for t in tokens if t < 256).decode("utf-8", errors="replace")


def count_text_tokens(text: str) -> int:
    """Token count of rendered prompt text, with the image markers counting
    as one special token each."""
    n = 0
    body = text
    for marker in ("<Img>", "</Img>"):
        n += body.count(marker)
        body = body.replace(marker, "")
    return n + len(body.encode("utf-8"))


@dataclass
class PromptSequence:
    text: str
    rows: np.ndarray                       # (T, C_emb)
    segment_spans: list[tuple[str, int, int]]  # (name, start, length)

    def span(self, name: str) -> tuple[int, int]:
        for n, start, length in self.segment_spans:
            if n == name:
                return start, length
        raise KeyError(name)


# ---------------------------------------------------------------------------
# LoRA


class LoraLinear:
    """Frozen base Linear plus a trainable low-rank bypass.

    output = base(x) + (alpha/r) * (x @ A^T) @ B^T, with B zero-initialized
    so the adapter is an exact no-op before tuning. Dropout on the adapter
    input is configured but only applied when an RNG is supplied.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, lora: LoraConfig):
        if lora.r > min(d_in, d_out):
            raise ValueError(f"LoRA rank {lora.r} exceeds min dim {min(d_in, d_out)}")
        self.store = store
        self.name = name
        self.lora = lora
        self.base = Linear(store, name, d_in, d_out, rng, trainable=False)
        store.add(f"lora/{name}/a",
                  (rng.standard_normal((lora.r, d_in)) / np.sqrt(lora.r)).astype(np.float32))
        store.add(f"lora/{name}/b", np.zeros((d_out, lora.r), np.float32))
        self._cache = None

    def forward(self, x: np.ndarray, dropout_rng: np.random.Generator | None = None
                ) -> np.ndarray:
        a = self.store[f"lora/{self.name}/a"]
        b = self.store[f"lora/{self.name}/b"]
        xd = x
        mask = None
        if dropout_rng is not None and self.lora.dropout > 0.0:
            keep = 1.0 - self.lora.dropout
            mask = (dropout_rng.random(x.shape) < keep).astype(np.float32) / keep
            xd = x * mask
        low = xd @ a.T
        y = self.base.forward(x) + (self.lora.alpha / self.lora.r) * (low @ b.T)
        self._cache = (xd, low, mask)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xd, low, mask = self._cache
        a = self.store[f"lora/{self.name}/a"]
        b = self.store[f"lora/{self.name}/b"]
        scale = self.lora.alpha / self.lora.r
        dlow = scale * (dy @ b)
        d_out, d_in = dy.shape[-1], xd.shape[-1]
        self.store.accumulate_grad(
            f"lora/{self.name}/b",
            scale * (dy.reshape(-1, d_out).T @ low.reshape(-1, self.lora.r)))
        self.store.accumulate_grad(
            f"lora/{self.name}/a",
            dlow.reshape(-1, self.lora.r).T @ xd.reshape(-1, d_in))
        dx_adapter = dlow @ a
        if mask is not None:
            dx_adapter = dx_adapter * mask
        return self.base.backward(dy) + dx_adapter


# ---------------------------------------------------------------------------
# Toy decoder-only LM


def _softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


class _Attention:
    def __init__(self, store: ParamStore, name: str, cfg: LmConfig,
                 rng: np.random.Generator, lora: LoraConfig):
        c = cfg.c_emb
        self.cfg = cfg
        self.q = LoraLinear(store, f"{name}/q", c, c, rng, lora)
        self.k = LoraLinear(store, f"{name}/k", c, c, rng, lora)
        self.v = LoraLinear(store, f"{name}/v", c, c, rng, lora)
        self.o = LoraLinear(store, f"{name}/o", c, c, rng, lora)
        self._cache = None

    def _split(self, x: np.ndarray) -> np.ndarray:
        t = x.shape[0]
        h, dh = self.cfg.n_heads, self.cfg.c_emb // self.cfg.n_heads
        return x.reshape(t, h, dh).transpose(1, 0, 2)  # (H, T, dh)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        h, t, dh = x.shape
        return x.transpose(1, 0, 2).reshape(t, h * dh)

    def forward(self, x: np.ndarray, rng=None) -> np.ndarray:
        t = x.shape[0]
        dh = self.cfg.c_emb // self.cfg.n_heads
        q = self._split(self.q.forward(x, rng))
        k = self._split(self.k.forward(x, rng))
        v = self._split(self.v.forward(x, rng))
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
        # fixed linear relative-position bias (geometric per-head slopes,
        # last head unbiased): gives most heads a built-in recency horizon
        # so local addressing does not have to be learned from the frozen
        # position table, while the zero-slope head can read the distant
        # prompt-embedding rows without a distance penalty
        idx = np.arange(t, dtype=np.float32)
        dist = idx[:, None] - idx[None, :]
        slopes = 2.0 ** (-(8.0 / self.cfg.n_heads)
                         * np.arange(1, self.cfg.n_heads + 1, dtype=np.float32))
        slopes[-1] = 0.0
        scores = scores - slopes[:, None, None] * dist
        mask = np.triu(np.full((t, t), -1e9, np.float32), k=1)
        p = _softmax(scores + mask)
        ctx = p @ v
        y = self.o.forward(self._merge(ctx), rng)
        self._cache = (q, k, v, p)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        q, k, v, p = self._cache
        dh = self.cfg.c_emb // self.cfg.n_heads
        dctx = self._split(self.o.backward(dy))
        dp = dctx @ v.transpose(0, 2, 1)
        dv = p.transpose(0, 2, 1) @ dctx
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        ds = ds / np.sqrt(dh)
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        dx = self.q.backward(self._merge(dq))
        dx += self.k.backward(self._merge(dk))
        dx += self.v.backward(self._merge(dv))
        return dx


class _Block:
    def __init__(self, store: ParamStore, name: str, cfg: LmConfig,
                 rng: np.random.Generator, lora: LoraConfig):
        self.attn = _Attention(store, f"{name}/attn", cfg, rng, lora)
        self.ff1 = Linear(store, f"{name}/ff1", cfg.c_emb, cfg.d_ff, rng, trainable=False)
        self.ff2 = Linear(store, f"{name}/ff2", cfg.d_ff, cfg.c_emb, rng, trainable=False)
        self._h1 = None

    def forward(self, x: np.ndarray, rng=None) -> np.ndarray:
        x = x + self.attn.forward(x, rng)
        h1 = self.ff1.forward(x)
        self._h1 = h1
        return x + self.ff2.forward(relu(h1))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dh = relu_backward(self.ff2.backward(dy), self._h1)
        dx = dy + self.ff1.backward(dh)
        dx = dx + self.attn.backward(dx)
        return dx


class ToyLm:
    """Byte-level frozen decoder LM: token+position embeddings, 2 causal
    attention blocks with residuals, tied output head."""

    def __init__(self, store: ParamStore | None = None,
                 config: LmConfig | None = None,
                 lora: LoraConfig | None = None):
        self.config = config or LmConfig()
        self.lora = lora or LoraConfig()
        self.store = store if store is not None else ParamStore()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed + 7_000)
        # embedding scale chosen so the tied head can produce confident
        # logits without the residual stream having to grow very large,
        # and the positional signal is as strong as the token signal
        self.store.add("lm/emb",
                       (rng.standard_normal((cfg.vocab, cfg.c_emb)) * 0.24).astype(np.float32),
                       trainable=False)
        self.store.add("lm/pos",
                       (rng.standard_normal((cfg.context, cfg.c_emb)) * 0.24).astype(np.float32),
                       trainable=False)
        self.blocks = [_Block(self.store, f"lm/b{i}", cfg, rng, self.lora)
                       for i in range(cfg.n_blocks)]
        self._cache_t = None

    def embed_tokens(self, tokens: list[int]) -> np.ndarray:
        emb = self.store["lm/emb"]
        return emb[np.asarray(tokens, np.int64)].copy()

    def forward(self, rows: np.ndarray, rng=None) -> np.ndarray:
        """(T, C_emb) -> causal logits (T, vocab)."""
        t = rows.shape[0]
        if t > self.config.context:
            raise ValueError(f"sequence length {t} exceeds context {self.config.context}")
        x = rows + self.store["lm/pos"][:t]
        for block in self.blocks:
            x = block.forward(x, rng)
        self._cache_t = (t, x)
        return x @ self.store["lm/emb"].T

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """dLoss/dlogits -> dLoss/drows (LoRA grads accumulated)."""
        t, x = self._cache_t
        emb = self.store["lm/emb"]
        self.store.accumulate_grad("lm/emb", dlogits.T @ x)
        dx = dlogits @ emb
        for block in reversed(self.blocks):
            dx = block.backward(dx)
        self.store.accumulate_grad("lm/pos",
                                   np.pad(dx, ((0, self.config.context - t), (0, 0))))
        return dx

    def greedy_decode(self, prompt_rows: np.ndarray, max_tokens: int = 128
                      ) -> list[int]:
        rows = prompt_rows
        out: list[int] = []
        for _ in range(max_tokens):
            if rows.shape[0] >= self.config.context:
                break
            logits = self.forward(rows)
            tok = int(np.argmax(logits[-1]))
            if tok == EOS_TOKEN:
                break
            out.append(tok)
            rows = np.concatenate([rows, self.embed_tokens([tok])], axis=0)
        return out


def loss_llm(logits: np.ndarray, targets: list[int]):
    """Eq.-5 style mean token cross-entropy over the answer span.

    logits: (L, vocab) — one row per answer position; targets: L token ids.
    Returns (loss, dlogits) with dlogits scaled for the mean.
    """
    if len(targets) == 0:
        raise ValueError("empty answer span")
    if logits.shape[0] != len(targets):
        raise ValueError(f"{logits.shape[0]} logit rows vs {len(targets)} targets")
    t = np.asarray(targets, np.int64)
    x = logits.astype(np.float64)
    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    losses = lse - x[np.arange(len(t)), t]
    p = np.exp(x - lse[:, None])
    dlogits = p
    dlogits[np.arange(len(t)), t] -= 1.0
    dlogits /= len(t)
    return float(losses.mean()), dlogits.astype(np.float32)


# ---------------------------------------------------------------------------
# Forgery Prompt Learner


class ForgeryPromptLearner:
    """Maps a KfdOutput into E_forgery = fuse([E_base; E_loc; E_cons; E_cls])."""

    def __init__(self, store: ParamStore, config: FplConfig | None = None):
        self.config = config or FplConfig()
        cfg = self.config
        self.store = store
        rng = np.random.default_rng(cfg.seed + 9_000)
        store.add("fpl/e_base",
                  (rng.standard_normal((cfg.n1, cfg.c_emb)) * 0.05).astype(np.float32))
        # net A: segmentation map 224x224 -> n2 x C_emb
        self.a_convs = [Conv2d(store, "fpl/a_c1", 1, 4, 3, 2, rng),
                        Conv2d(store, "fpl/a_c2", 4, 8, 3, 2, rng),
                        Conv2d(store, "fpl/a_c3", 8, 8, 3, 2, rng),
                        Conv2d(store, "fpl/a_c4", 8, 8, 3, 2, rng)]
        self.a_fc = Linear(store, "fpl/a_fc", 14 * 14 * 8, cfg.n2 * cfg.c_emb, rng)
        # net B: consistency maps (resized to 28x28, channel-concatenated)
        self.b_convs = [Conv2d(store, "fpl/b_c1", 6, 8, 3, 2, rng),
                        Conv2d(store, "fpl/b_c2", 8, 16, 3, 2, rng)]
        self.b_fc = Linear(store, "fpl/b_fc", 7 * 7 * 16, cfg.n3 * cfg.c_emb, rng)
        self.cls_fc = Linear(store, "fpl/cls_fc", 1, cfg.c_emb, rng)
        # row-axis 1-D fusion conv (kernel 3, row dimension as height)
        self.fuse = Conv2d(store, "fpl/fuse", cfg.c_emb, cfg.c_emb, 3, 1, rng)
        # per-row learnable gain on L2-normalized rows: keeps prompt rows at
        # a controlled magnitude regardless of the input map statistics; a
        # large initial gain makes the rows salient attention keys so the
        # value-path gradient through them does not vanish at the start
        store.add("fpl/gain", np.full((cfg.n_f, 1), 5.0, np.float32))

    def forward(self, kfd_out: KfdOutput):
        cfg = self.config
        seg = np.asarray(kfd_out.seg_map,
                         np.result_type(kfd_out.seg_map, np.float32))
        if seg.shape != (224, 224):
            raise ValueError(f"expected 224x224 segmentation map, got {seg.shape}")
        maps = kfd_out.stack.rho_text
        cache: dict = {}

        x = seg[None, :, :, None]
        a_pre = []
        for conv in self.a_convs:
            x = conv.forward(x)
            a_pre.append(x)
            x = relu(x)
        a_flat = x.reshape(1, -1)
        e_loc = self.a_fc.forward(a_flat).reshape(cfg.n2, cfg.c_emb)

        resized = [bilinear_resize(m[None], (28, 28)) for m in maps]
        b_in = np.concatenate(resized, axis=-1)
        if b_in.shape[-1] != 6:
            raise ValueError(f"expected 6 consistency channels, got {b_in.shape[-1]}")
        y = b_in
        b_pre = []
        for conv in self.b_convs:
            y = conv.forward(y)
            b_pre.append(y)
            y = relu(y)
        b_flat = y.reshape(1, -1)
        e_cons = self.b_fc.forward(b_flat).reshape(cfg.n3, cfg.c_emb)

        e_cls = self.cls_fc.forward(np.array([[kfd_out.score]], seg.dtype))

        stacked = np.concatenate(
            [self.store["fpl/e_base"], e_loc, e_cons, e_cls], axis=0)
        fused = self.fuse.forward(stacked[None, :, None, :])
        raw = fused[0, :, 0, :]
        norms = np.linalg.norm(raw, axis=1, keepdims=True) + 1e-6
        unit = raw / norms
        e_forgery = self.store["fpl/gain"] * unit

        cache.update(a_pre=a_pre, a_flat_shape=x.shape, b_pre=b_pre,
                     b_flat_shape=y.shape, raw=raw, norms=norms, unit=unit)
        return e_forgery, cache

    def backward(self, d_forgery: np.ndarray, cache) -> None:
        cfg = self.config
        raw, norms, unit = cache["raw"], cache["norms"], cache["unit"]
        gain = self.store["fpl/gain"]
        self.store.accumulate_grad(
            "fpl/gain", (d_forgery * unit).sum(axis=1, keepdims=True))
        dunit = d_forgery * gain
        draw = (dunit - unit * (dunit * unit).sum(axis=1, keepdims=True)) / norms
        dstacked = self.fuse.backward(draw[None, :, None, :])[0, :, 0, :]
        self.store.accumulate_grad("fpl/e_base", dstacked[: cfg.n1])
        d_loc = dstacked[cfg.n1 : cfg.n1 + cfg.n2]
        d_cons = dstacked[cfg.n1 + cfg.n2 : cfg.n1 + cfg.n2 + cfg.n3]
        d_cls = dstacked[cfg.n1 + cfg.n2 + cfg.n3 :]

        self.cls_fc.backward(d_cls)

        dy = self.b_fc.backward(d_cons.reshape(1, -1)).reshape(cache["b_flat_shape"])
        for conv, pre in zip(reversed(self.b_convs), reversed(cache["b_pre"])):
            dy = conv.backward(relu_backward(dy, pre))
        # gradient w.r.t. the consistency maps is not propagated further:
        # the KFD weights are frozen during LLM tuning

        dx = self.a_fc.backward(d_loc.reshape(1, -1)).reshape(cache["a_flat_shape"])
        for conv, pre in zip(reversed(self.a_convs), reversed(cache["a_pre"])):
            dx = conv.backward(relu_backward(dx, pre))


class VisualProjector:
    """Frozen toy stand-in for the pretrained visual projector: global-pools
    the deepest encoder tap and expands it into n_v embedding rows."""

    def __init__(self, store: ParamStore, config: FplConfig | None = None,
                 d_tap: int = 128):
        self.config = config or FplConfig()
        rng = np.random.default_rng(self.config.seed + 11_000)
        self.proj = Linear(store, "vproj/fc", d_tap,
                           self.config.n_v * self.config.c_emb, rng, trainable=False)

    def forward(self, deepest_tap: np.ndarray) -> np.ndarray:
        pooled = np.asarray(deepest_tap, np.float32).mean(axis=(0, 1))[None]
        rows = self.proj.forward(pooled).reshape(self.config.n_v, self.config.c_emb)
        norms = np.linalg.norm(rows, axis=1, keepdims=True) + 1e-6
        return (2.0 * rows / norms).astype(np.float32)


# ---------------------------------------------------------------------------
# Prompt assembly


def render_prompt_text(kfd_score: float, task_sentence: str = TASK_SENTENCE) -> str:
    """Paper template with [Task description][KFD result] substituted
    literally (no separator, exactly as the placeholders abut)."""
    return (f"{PROMPT_PREFIX}<Img></Img>{task_sentence}"
            f"{kfd_result_sentence(kfd_score)} {QUESTION_TAIL}{PROMPT_SUFFIX}")


def assemble_prompt(lm: ToyLm, e_visual: np.ndarray, e_forgery: np.ndarray,
                    kfd_score: float, task_sentence: str = TASK_SENTENCE
                    ) -> PromptSequence:
    c_emb = lm.config.c_emb
    for name, mat in (("E_visual", e_visual), ("E_forgery", e_forgery)):
        if mat.ndim != 2 or mat.shape[1] != c_emb:
            raise ValueError(f"{name} must be (n, {c_emb}), got {mat.shape}")
    text = render_prompt_text(kfd_score, task_sentence)
    prefix_tokens = tokenize_bytes(PROMPT_PREFIX) + [IMG_TOKEN]
    mid_tokens = [IMG_END_TOKEN]
    suffix_text = (f"{task_sentence}{kfd_result_sentence(kfd_score)} "
                   f"{QUESTION_TAIL}{PROMPT_SUFFIX}")
    suffix_tokens = tokenize_bytes(suffix_text)

    segments = [
        ("prefix", lm.embed_tokens(prefix_tokens)),
        ("e_visual", np.asarray(e_visual)),
        ("img_end", lm.embed_tokens(mid_tokens)),
        ("e_forgery", np.asarray(e_forgery)),
        ("suffix", lm.embed_tokens(suffix_tokens)),
    ]
    spans = []
    rows = []
    pos = 0
    for name, mat in segments:
        spans.append((name, pos, mat.shape[0]))
        rows.append(mat)
        pos += mat.shape[0]
    return PromptSequence(text=text, rows=np.concatenate(rows, axis=0),
                          segment_spans=spans)


# ---------------------------------------------------------------------------
# Tuning


@dataclass
class TuneResult:
    loss: float
    answer_tokens: list[int]


class LlmTuner:
    """Prompt tuning driver: FPL + E_base + LoRA train; base LM, visual
    projector and the KFD model stay frozen."""

    def __init__(self, kfd_model, fpl_config: FplConfig | None = None,
                 lm_config: LmConfig | None = None,
                 lora: LoraConfig | None = None,
                 lr: float = 1e-3, weight_decay: float = 0.0):
        self.kfd_model = kfd_model
        self.store = ParamStore()
        self.lm = ToyLm(self.store, lm_config, lora)
        self.fpl = ForgeryPromptLearner(self.store, fpl_config)
        self.projector = VisualProjector(self.store, fpl_config)
        self.optimizer = Adam(lr=lr, weight_decay=weight_decay)

    # -- prompt construction -------------------------------------------------

    def build_prompt(self, image: np.ndarray, kfd_out: KfdOutput | None = None):
        if kfd_out is None:
            kfd_out = self.kfd_model.infer(image)
        taps = self.kfd_model.stem.forward_batch(image[None])
        e_visual = self.projector.forward(taps[-1][0])
        e_forgery, fpl_cache = self.fpl.forward(kfd_out)
        prompt = assemble_prompt(self.lm, e_visual, e_forgery, kfd_out.score)
        return prompt, fpl_cache, kfd_out

    # -- training steps -------------------------------------------------------

    def _loss_and_grads(self, prompt: PromptSequence, answer: str,
                        fpl_cache=None) -> float:
        targets = tokenize_bytes(answer) + [EOS_TOKEN]
        rows = np.concatenate(
            [prompt.rows, self.lm.embed_tokens(targets[:-1])], axis=0)
        logits = self.lm.forward(rows)
        p = prompt.rows.shape[0]
        span = logits[p - 1 : p - 1 + len(targets)]
        loss, dspan = loss_llm(span, targets)
        dlogits = np.zeros_like(logits)
        dlogits[p - 1 : p - 1 + len(targets)] = dspan
        drows = self.lm.backward(dlogits)
        if fpl_cache is not None:
            start, length = prompt.span("e_forgery")
            self.fpl.backward(drows[start : start + length], fpl_cache)
        return loss

    def tune_step(self, sample, kfd_out: KfdOutput | None = None) -> TuneResult:
        """One batch-1 prompt-tuning step on a SimulatedSample."""
        self.store.zero_grad()
        prompt, fpl_cache, kfd_out = self.build_prompt(sample.image, kfd_out)
        loss = self._loss_and_grads(prompt, sample.qa.answer, fpl_cache)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite LLM tuning loss: {loss}")
        self.optimizer.step(self.store)
        return TuneResult(loss, tokenize_bytes(sample.qa.answer) + [EOS_TOKEN])

    def tune_text_step(self, question: str, answer: str) -> TuneResult:
        """Text-only step (VQA source): plain template without image rows."""
        self.store.zero_grad()
        tokens = tokenize_bytes(f"{PROMPT_PREFIX}{question}{PROMPT_SUFFIX}")
        prompt = PromptSequence(text="", rows=self.lm.embed_tokens(tokens),
                                segment_spans=[("suffix", 0, len(tokens))])
        loss = self._loss_and_grads(prompt, answer)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite LLM tuning loss: {loss}")
        self.optimizer.step(self.store)
        return TuneResult(loss, tokenize_bytes(answer) + [EOS_TOKEN])

    # -- inference -------------------------------------------------------------

    def answer(self, image: np.ndarray, kfd_out: KfdOutput | None = None,
               max_tokens: int = 128) -> str:
        prompt, _, _ = self.build_prompt(image, kfd_out)
        return detokenize_bytes(self.lm.greedy_decode(prompt.rows, max_tokens))


def alternating_schedule(deepfake_set: list, vqa_set: list, steps: int,
                         seed: int = 0):
    """Yield (source, sample) strictly alternating D, V, D, V, ... with a
    seeded deterministic order, cycling each set as needed."""
    if not deepfake_set or not vqa_set:
        raise ValueError("both datasets must be non-empty")
    rng = np.random.default_rng(seed)
    d_order = rng.permutation(len(deepfake_set))
    v_order = rng.permutation(len(vqa_set))
    di = vi = 0
    for step in range(steps):
        if step % 2 == 0:
            yield "deepfake", deepfake_set[int(d_order[di % len(d_order)])]
            di += 1
        else:
            yield "vqa", vqa_set[int(v_order[vi % len(v_order)])]
            vi += 1
