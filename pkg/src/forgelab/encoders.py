"""Toy multimodal encoders and the offline feature cache.

The image encoder is a frozen seeded convolutional stem producing three
feature taps (28x28x32, 14x14x64, 7x7x128); the text
encoder is a seeded hashed character-trigram projection. Both stand in
for the frozen pretrained backbones of the full-scale system; externally
computed features can be injected through the FGFC cache files.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .numnn.layers import Conv2d, kaiming_uniform, relu
from .numnn.params import ParamStore

IMAGE_SIZE = 224
TAP_SHAPES = ((28, 28, 32), (14, 14, 64), (7, 7, 128))
DEFAULT_TAP_IDS = (16, 24, 32)  # tap-index concept inherited from the full-scale encoder
C_TEXT = 64

REAL_DESCRIPTIONS = [
    "natural light and shadow transitions",
    "natural eye reflections",
    "natural appearance",
    "natural skin tones and color variations",
    "realistic reflections in their eyes",
    "naturally textured skin",
    "fine hair near the eyebrows and forehead",
    "realistic texture",
    "natural sparkle in their eyes",
    "natural highlights on the bridge of the nose",
    "natural skin texture",
    "natural skin folds around the eyes",
    "natural light sources",
    "smooth yet textured skin on the forehead",
    "skin texture is detailed and realistic",
    "real",
]

FAKE_DESCRIPTIONS = [
    "unnatural blending edges",
    "inconsistent head poses",
    "noticeable blending artifacts",
    "mismatched skin texture",
    "unnatural reflections",
    "unnatural looking hairlines",
    "misaligned facial features",
    "digital artifacts visible",
    "strange light flares around the lips",
    "jawline appears overly smooth",
    "distorted shadows",
    "over-sharpened or exaggerated facial features",
    "distorted edges around the face",
    "fake",
]


@dataclass
class DescriptionBank:
    real_descriptions: list[str] = field(default_factory=lambda: list(REAL_DESCRIPTIONS))
    fake_descriptions: list[str] = field(default_factory=lambda: list(FAKE_DESCRIPTIONS))

    def __post_init__(self):
        if not self.real_descriptions or not self.fake_descriptions:
            raise ValueError("description bank lists must be non-empty")


@dataclass
class EncoderTaps:
    """Per-tap feature maps; each (H_i, W_i, C_i), resolutions non-increasing."""

    taps: list[np.ndarray]
    tap_ids: tuple[int, ...] = DEFAULT_TAP_IDS


# 3x3 primitive kernels for the structured stem filters
_LP = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], np.float32) / 16.0
_HP = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], np.float32) / 4.0
_DX = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], np.float32) / 8.0
_DY = _DX.T.copy()


class ToyImageEncoder:
    """Frozen seeded convolutional stem with three feature taps.

    The filters are structured rather than purely random: each stage carries
    low-passed brightness/chroma channels, +/- high-pass and gradient pairs
    (rectified into magnitudes by the inter-stage ReLUs) and low-pass chains
    that aggregate those magnitudes into local texture-energy maps, alongside
    seeded random channels for generic content. This mirrors the oriented-
    edge/color-opponent filters that pretrained backbones learn in their
    early layers and keeps local texture statistics linearly readable in the
    taps. Stem parameters are registered with trainable=False so optimizer
    steps can never touch them.
    """

    def __init__(self, store: ParamStore, seed: int = 2024, prefix: str = "stem"):
        rng = np.random.default_rng(seed)
        mk = lambda name, ci, co: Conv2d(store, f"{prefix}/{name}", ci, co, 3, 2, rng,
                                         trainable=False)
        self.convs = [mk("c1", 3, 8), mk("c2", 8, 16), mk("c3", 16, 32),
                      mk("c4", 32, 64), mk("c5", 64, 128)]
        self._structure_weights(store, prefix, rng)

    @staticmethod
    def _structure_weights(store: ParamStore, prefix: str,
                           rng: np.random.Generator) -> None:
        """Overwrite the random init of the leading channels with wired
        filters; trailing channels keep their Kaiming init. gain amplifies
        fine texture so its rectified energy is not dwarfed by brightness."""
        gain = 4.0

        def put(name, out_ch, kernel, in_weights):
            w = store.params[f"{prefix}/{name}/w"]
            w[:, :, :, out_ch] = 0.0
            for c, s in in_weights:
                w[:, :, c, out_ch] += kernel * s

        # c1: brightness/chroma low-pass plus +/- high-pass and gradient pairs
        lum = [(0, 1 / 3), (1, 1 / 3), (2, 1 / 3)]
        put("c1", 0, _LP, lum)
        put("c1", 1, _LP, [(0, 0.5), (2, -0.5)])
        for ch, kern in ((2, _HP), (4, _DX), (6, _DY)):
            put("c1", ch, kern * gain, lum)
            put("c1", ch + 1, -kern * gain, lum)
        # c2: carry brightness/chroma, pool rectified pairs into energies,
        # open a +/- medium-frequency band on the downsampled brightness
        put("c2", 0, _LP, [(0, 1.0)])
        put("c2", 1, _LP, [(1, 1.0)])
        put("c2", 2, _LP, [(2, 1.0), (3, 1.0)])
        put("c2", 3, _LP, [(4, 0.5), (5, 0.5), (6, 0.5), (7, 0.5)])
        for ch, kern in ((4, _HP), (6, _DX), (8, _DY)):
            put("c2", ch, kern * gain, [(0, 1.0)])
            put("c2", ch + 1, -kern * gain, [(0, 1.0)])
        # c3 (tap 0): brightness, chroma, fine/medium energies, coarse +/- band
        put("c3", 0, _LP, [(0, 1.0)])
        put("c3", 1, _LP, [(1, 1.0)])
        put("c3", 2, _LP, [(2, 1.0)])
        put("c3", 3, _LP, [(3, 1.0)])
        put("c3", 4, _LP, [(4, 1.0), (5, 1.0)])
        put("c3", 5, _LP, [(6, 0.5), (7, 0.5), (8, 0.5), (9, 0.5)])
        put("c3", 6, _HP * gain, [(0, 1.0)])
        put("c3", 7, -_HP * gain, [(0, 1.0)])
        # c4/c5 (taps 1, 2): low-pass pass-through of the structured block
        for name in ("c4", "c5"):
            for ch in range(8):
                put(name, ch, _LP, [(ch, 1.0)])
        # seeded jitter keeps the stem non-degenerate without erasing structure
        for name in ("c1", "c2", "c3", "c4", "c5"):
            w = store.params[f"{prefix}/{name}/w"]
            w += rng.normal(0.0, 0.01, w.shape).astype(np.float32)

    def forward_batch(self, images: np.ndarray) -> list[np.ndarray]:
        """(N, 224, 224, 3) in [0,1] -> [(N,28,28,32), (N,14,14,64), (N,7,7,128)]."""
        if images.ndim != 4 or images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValueError(f"expected (N,{IMAGE_SIZE},{IMAGE_SIZE},3), got {images.shape}")
        x = images.astype(np.float32)
        taps = []
        for i, conv in enumerate(self.convs):
            x = conv.forward(x)
            if i < len(self.convs) - 1:
                x = relu(x)
            if i >= 2:
                taps.append(x)
        return taps

    def encode_image(self, image: np.ndarray) -> EncoderTaps:
        out = self.forward_batch(image[None])
        return EncoderTaps([t[0] for t in out])


class ToyTextEncoder:
    """Seeded hashed bag-of-character-trigrams projected to C_text dims.

    The hash (blake2b) and the seeded projection are both deterministic, so
    equal strings always map to bit-equal unit-norm embeddings.
    """

    def __init__(self, c_text: int = C_TEXT, n_buckets: int = 512, seed: int = 77):
        self.c_text = c_text
        self.n_buckets = n_buckets
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((n_buckets, c_text)).astype(np.float32)

    def _bucket(self, trigram: bytes) -> int:
        digest = hashlib.blake2b(trigram, digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.n_buckets

    def encode_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode an empty string")
        data = text.encode("utf-8")
        padded = b"\x00" + data + b"\x00"
        counts = np.zeros(self.n_buckets, np.float32)
        for i in range(len(padded) - 2):
            counts[self._bucket(padded[i : i + 3])] += 1.0
        vec = counts @ self.projection
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("degenerate text embedding")
        return (vec / norm).astype(np.float32)


# ---------------------------------------------------------------------------
# Feature cache (FGFC)

CACHE_MAGIC = b"FGFC"
CACHE_VERSION = 1


class FeatureCacheError(Exception):
    pass


def save_feature_cache(taps: EncoderTaps, path) -> None:
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<II", CACHE_VERSION, len(taps.taps)))
        for t in taps.taps:
            t = np.ascontiguousarray(t, dtype="<f4")
            if t.ndim != 3:
                raise FeatureCacheError(f"tap must be (H,W,C), got {t.shape}")
            f.write(struct.pack("<III", *t.shape))
            f.write(t.tobytes())


def load_feature_cache(path, expected_taps: int | None = None) -> EncoderTaps:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CACHE_MAGIC:
            raise FeatureCacheError(f"bad magic {magic!r} at offset 0")
        head = f.read(8)
        if len(head) != 8:
            raise FeatureCacheError(f"truncated header at offset {f.tell()}")
        version, n_taps = struct.unpack("<II", head)
        if version != CACHE_VERSION:
            raise FeatureCacheError(f"unsupported cache version {version}")
        if expected_taps is not None and n_taps != expected_taps:
            raise FeatureCacheError(
                f"tap-count mismatch: cache has {n_taps}, model expects {expected_taps}")
        taps = []
        for k in range(n_taps):
            dims = f.read(12)
            if len(dims) != 12:
                raise FeatureCacheError(f"truncated tap header at offset {f.tell()}")
            h, w, c = struct.unpack("<III", dims)
            payload = f.read(4 * h * w * c)
            if len(payload) != 4 * h * w * c:
                raise FeatureCacheError(f"truncated tap {k} payload at offset {f.tell()}")
            taps.append(np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy())
    return EncoderTaps(taps)
