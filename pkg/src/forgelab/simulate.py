"""Self-blended forgery simulation and QA-pair generation.

A real 224x224 face image plus landmarks is turned into (blended image,
ground-truth mask, region list, label, question, answer). A procedural
toy-face generator with exact synthetic landmarks is included so the whole
pipeline runs with zero external data.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import grey_dilation

from . import geometry
from .blending import BlendRequest, build_soft_mask, mask_blend, poisson_blend
from .geometry import ForgeryRegion, GeometryError, LandmarkSet

IMAGE_SIZE = 224

TASK_SENTENCE = (
    "This is a facial image designed for deepfake detection, and it should not "
    "exhibit any localized color discrepancies or evident signs of splicing."
)
QUESTION_TAIL = "Is this a deepfake image?"
REAL_ANSWER = "No. This is a real image."


def kfd_result_sentence(score: float) -> str:
    return f"According to KFD prediction, the forgery score is {score:.2f}."


@dataclass
class QAPair:
    question: str
    answer: str
    kfd_score: float | None = None


@dataclass
class SimulateConfig:
    n_regions_max: int = 3          # forgery region count upper bound
    p_real: float = 0.5             # probability of emitting the untouched real image
    blur_sigma: float = 2.0
    mask_dilation: int = 10         # binary-mask dilation radius in pixels
    intensity_range: tuple[float, float] = (0.35, 0.65)
    use_poisson: bool = False       # optional Poisson refinement of the blend
    gt_threshold: float = 0.01      # soft-mask binarization for the ground truth


@dataclass
class SimulatedSample:
    image: np.ndarray               # (224, 224, 3) in [0, 1]
    gt_mask: np.ndarray             # (224, 224) in {0, 1}
    label: int                      # 0 real, 1 fake
    regions: list[ForgeryRegion]
    qa: QAPair
    seed: int
    reference: np.ndarray | None = field(default=None, repr=False)  # training-only pristine pair


def make_qa_pair(label: int, regions: list[ForgeryRegion],
                 kfd_score: float | None = None) -> QAPair:
    if label == 1 and not regions:
        raise ValueError("fake sample requires at least one forgery region")
    parts = [TASK_SENTENCE]
    if kfd_score is not None:
        parts.append(kfd_result_sentence(kfd_score))
    question = " ".join(parts) + " " + QUESTION_TAIL
    if label == 0:
        answer = REAL_ANSWER
    else:
        names = " and ".join(r.display_name for r in regions)
        answer = f"Yes. This is a deepfake image, and the artifact is at the {names} of the image."
    return QAPair(question=question, answer=answer, kfd_score=kfd_score)


def simulate_forgery(real_image: np.ndarray, landmarks: LandmarkSet,
                     config: SimulateConfig, seed: int) -> SimulatedSample:
    """Blend an affine-warped copy of the image into itself over selected
    landmark regions (fake branch) or pass the image through (real branch)."""
    img = np.asarray(real_image, np.float32)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE}x3 image, got {img.shape}")
    rng = np.random.default_rng(seed)

    if rng.random() < config.p_real:
        qa = make_qa_pair(0, [])
        ref = _mild_augment(img, rng)
        return SimulatedSample(img.copy(), np.zeros((IMAGE_SIZE, IMAGE_SIZE), np.float32),
                               0, [], qa, seed, reference=ref)

    last_err: Exception | None = None
    for _ in range(5):
        regions = geometry.select_regions(landmarks, config.n_regions_max, rng)
        pts = np.vstack([landmarks.region_points(r) for r in regions])
        try:
            hull = geometry.convex_hull(pts)
        except GeometryError as err:
            last_err = err
            continue
        binary = geometry.rasterize_hull(hull, IMAGE_SIZE, IMAGE_SIZE)
        if binary.sum() < 1:
            last_err = GeometryError("hull rasterized to an empty mask")
            continue
        if config.mask_dilation > 0:
            # dilate so small landmark hulls (a single eye is under 1% of the
            # image) still cover a workable blend area
            r = config.mask_dilation
            binary = grey_dilation(binary, size=(2 * r + 1, 2 * r + 1))
        intensity = float(rng.uniform(*config.intensity_range))
        soft = build_soft_mask(binary, config.blur_sigma, intensity)
        params = geometry.sample_affine_jitter(rng, IMAGE_SIZE, IMAGE_SIZE)
        warped = geometry.affine_warp(img, params)
        request = BlendRequest(background=img, foreground=warped, mask=soft)
        blended = mask_blend(request)
        if config.use_poisson:
            blended = poisson_blend(BlendRequest(img, blended, (soft >= 0.5).astype(np.float32)))
        gt = (soft >= config.gt_threshold).astype(np.float32)
        qa = make_qa_pair(1, regions)
        return SimulatedSample(blended, gt, 1, regions, qa, seed, reference=img.copy())
    raise GeometryError(f"forgery simulation failed after 5 attempts: {last_err}")


def _mild_augment(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Reference pair for real samples: small brightness jitter, clamped."""
    gain = np.float32(rng.uniform(0.98, 1.02))
    return np.clip(img * gain, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Toy face generator


def _ellipse(h: int, w: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    return (((xs + 0.5 - cx) / rx) ** 2 + ((ys + 0.5 - cy) / ry) ** 2 <= 1.0)


def generate_toy_face(seed: int, size: int = IMAGE_SIZE
                      ) -> tuple[np.ndarray, LandmarkSet]:
    """Procedurally drawn face with seeded color jitter and exact landmarks."""
    rng = np.random.default_rng(seed)
    s = size / 224.0
    cx = 112.0 * s + rng.uniform(-4, 4) * s
    cy = 118.0 * s + rng.uniform(-4, 4) * s
    rx = (62.0 + rng.uniform(-4, 4)) * s
    ry = (80.0 + rng.uniform(-4, 4)) * s

    img = np.empty((size, size, 3), np.float32)
    bg_color = rng.uniform(0.25, 0.45, size=3)
    img[:] = bg_color
    # soft vertical background gradient
    img += np.linspace(-0.05, 0.05, size, dtype=np.float32)[:, None, None]

    skin = np.array([0.70, 0.56, 0.46]) + rng.uniform(-0.06, 0.06, size=3)
    face = _ellipse(size, size, cx, cy, rx, ry)
    img[face] = skin

    eye_dx, eye_dy = 26.0 * s, 22.0 * s
    eye_rx, eye_ry = 10.0 * s, 5.0 * s
    iris = np.array([0.25, 0.22, 0.20]) + rng.uniform(0, 0.08, size=3)
    for sx in (-1, 1):
        ex = cx + sx * eye_dx
        ey = cy - eye_dy
        img[_ellipse(size, size, ex, ey, eye_rx, eye_ry)] = (0.80, 0.80, 0.78)
        img[_ellipse(size, size, ex, ey, eye_rx * 0.45, eye_ry * 0.9)] = iris
        brow = _ellipse(size, size, ex, ey - 12.0 * s, eye_rx * 1.4, 2.5 * s)
        img[brow] = (0.30, 0.24, 0.18)

    nose_shade = skin * 0.88
    img[_ellipse(size, size, cx, cy + 2.0 * s, 6.0 * s, 16.0 * s)] = nose_shade
    img[_ellipse(size, size, cx, cy + 12.0 * s, 10.0 * s, 4.0 * s)] = skin * 0.8

    lip = np.array([0.62, 0.30, 0.32]) + rng.uniform(-0.05, 0.05, size=3)
    mouth_cy = cy + 38.0 * s
    img[_ellipse(size, size, cx, mouth_cy, 20.0 * s, 9.0 * s)] = lip
    img[_ellipse(size, size, cx, mouth_cy, 12.0 * s, 3.0 * s)] = lip * 0.75

    # full-frame fine skin texture: two crossed sinusoids with fixed frequency
    # and orientation (seeded phases only), so every real frame carries the
    # same uniform micro-texture amplitude. The blend's misaligned ghost copy
    # interferes with it and locally attenuates it, which is the detectable
    # artifact; keeping frequency fixed keeps the energy baseline comparable
    # across frames.
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    th = 0.35  # fixed tilt, incommensurate with the pixel grid
    u = xs * np.cos(th) + ys * np.sin(th)
    v = -xs * np.sin(th) + ys * np.cos(th)
    tex = np.sin(2.0 * np.pi * u / (4.2 * s) + rng.uniform(0, 2 * np.pi)) \
        + np.sin(2.0 * np.pi * v / (4.7 * s) + rng.uniform(0, 2 * np.pi))
    tex = (0.07 * tex).astype(np.float32)
    img += tex[:, :, None] * np.array([1.0, 0.9, 0.8], np.float32)

    # seeded texture noise keeps encoder features non-degenerate
    img += rng.normal(0.0, 0.005, size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    pts = np.zeros((68, 2), np.float32)
    # jaw 0-16: lower half of the face ellipse, left to right
    t = np.linspace(0, 1, 17)
    ang = np.pi - t * np.pi  # pi .. 0 through the bottom (y grows downward)
    pts[0:17, 0] = cx - rx * np.cos(ang)
    pts[0:17, 1] = cy + ry * np.sin(ang)
    # brows 17-21 (image left), 22-26 (image right)
    for base, sx in ((17, -1), (22, 1)):
        bx = cx + sx * eye_dx
        pts[base : base + 5, 0] = np.linspace(bx - 14 * s, bx + 14 * s, 5)
        pts[base : base + 5, 1] = cy - eye_dy - 12.0 * s
    # nose 27-30 bridge, 31-35 nostril row
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(cy - 20 * s, cy + 6 * s, 4)
    pts[31:36, 0] = np.linspace(cx - 10 * s, cx + 10 * s, 5)
    pts[31:36, 1] = cy + 12.0 * s
    # eyes 36-41 (image left), 42-47 (image right)
    for base, sx in ((36, -1), (42, 1)):
        ex = cx + sx * eye_dx
        a = np.linspace(0, 2 * np.pi, 6, endpoint=False)
        pts[base : base + 6, 0] = ex + eye_rx * np.cos(a)
        pts[base : base + 6, 1] = cy - eye_dy + eye_ry * np.sin(a)
    # mouth: outer 48-59, inner 60-67
    a = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60, 0] = cx + 20 * s * np.cos(a)
    pts[48:60, 1] = mouth_cy + 9 * s * np.sin(a)
    a = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[60:68, 0] = cx + 12 * s * np.cos(a)
    pts[60:68, 1] = mouth_cy + 3 * s * np.sin(a)

    pts[:, 0] = np.clip(pts[:, 0], 0, size - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0, size - 1)
    return img, LandmarkSet(pts, size, size)


# ---------------------------------------------------------------------------
# Dataset persistence


def save_png(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    return (arr.astype(np.float32) / 255.0)


def sample_seed(base_seed: int, index: int) -> int:
    return (int(base_seed) * 1_000_003 + index) % (2**63)


def build_dataset(image_dir: str | None, landmark_dir: str | None, out_dir: str,
                  count: int, seed: int, config: SimulateConfig | None = None,
                  toy_sources: int = 0) -> list[dict]:
    """Generate `count` samples into out_dir and write manifest.jsonl.

    With toy_sources > 0 the procedural face generator supplies the source
    images (round-robin); otherwise sources come from image_dir with landmark
    sidecars of the same stem in landmark_dir.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    config = config or SimulateConfig()
    os.makedirs(out_dir, exist_ok=True)

    sources: list[tuple[str, object]] = []
    if toy_sources > 0:
        for i in range(toy_sources):
            sources.append((f"toy-{i}", sample_seed(seed, 10_000_000 + i)))
    else:
        names = sorted(n for n in os.listdir(image_dir) if n.lower().endswith(".png"))
        if not names:
            raise FileNotFoundError(f"no .png files in {image_dir}")
        for n in names:
            sources.append((os.path.join(image_dir, n), None))

    manifest: list[dict] = []
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w") as mf:
        for i in range(count):
            src_name, src_seed = sources[i % len(sources)]
            sid = f"{i:06d}"
            entry: dict = {"id": sid, "seed": sample_seed(seed, i)}
            try:
                if src_seed is not None:
                    img, lms = generate_toy_face(src_seed)
                else:
                    img = load_png(src_name)
                    stem = os.path.splitext(os.path.basename(src_name))[0]
                    lms = geometry.load_landmarks(
                        os.path.join(landmark_dir, stem + ".json"),
                        img.shape[0], img.shape[1])
                sample = simulate_forgery(img, lms, config, entry["seed"])
            except Exception as err:  # per-file failure recorded, run continues
                entry["error"] = f"{type(err).__name__}: {err}"
                manifest.append(entry)
                mf.write(json.dumps(entry) + "\n")
                continue
            # paths are stored relative to the manifest so two runs with the
            # same seed produce byte-identical manifests wherever they land
            image_name = f"{sid}_image.png"
            mask_name = f"{sid}_mask.png"
            save_png(sample.image, os.path.join(out_dir, image_name))
            save_png(sample.gt_mask, os.path.join(out_dir, mask_name))
            entry.update({
                "image_path": image_name,
                "mask_path": mask_name,
                "label": sample.label,
                "regions": [r.display_name for r in sample.regions],
                "question": sample.qa.question,
                "answer": sample.qa.answer,
            })
            manifest.append(entry)
            mf.write(json.dumps(entry) + "\n")
    return manifest
