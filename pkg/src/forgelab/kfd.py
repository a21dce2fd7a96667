"""Knowledge-guided Forgery Detector.

Pipeline: frozen toy encoder taps -> per-tap linear projections ->
L2-normalized pixel features dotted with the (real, fake) text-bank rows
(consistency maps) -> three-branch Forgery Locator (segmentation) and
Forgery Classifier (forgery score). Losses: per-sample Dice on the
segmentation (text branch plus lambda-weighted reference branch) and
binary cross-entropy on the score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import C_TEXT, DescriptionBank, TAP_SHAPES, ToyImageEncoder, ToyTextEncoder
from .numnn.layers import (
    Conv2d,
    Linear,
    bilinear_resize,
    bilinear_resize_backward,
    global_avg_pool,
    global_avg_pool_backward,
    l2_normalize,
    l2_normalize_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)
from .numnn.params import Adam, ParamStore

IMAGE_SIZE = 224


@dataclass
class KfdConfig:
    lam: float = 1.0                 # weight of the reference Dice term
    c_text: int = C_TEXT
    branch_width: int = 8            # locator branch channels
    fuse_width: int = 8              # locator fusion channels
    fuse_hw: int = 56                # fusion resolution
    cls_width: int = 8               # classifier branch channels
    fc_width: int = 32               # classifier hidden width
    dice_eps: float = 1.0
    seed: int = 0


@dataclass
class ConsistencyStack:
    rho_text: list[np.ndarray]                # l maps (H_i, W_i, 2)
    rho_ref: list[np.ndarray] | None = None   # l maps (H_i, W_i, 1), training only


@dataclass
class KfdOutput:
    seg_map: np.ndarray   # (224, 224) in (0, 1)
    score: float          # in (0, 1)
    stack: ConsistencyStack = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# Losses


def dice_loss(pred: np.ndarray, gt: np.ndarray, eps: float = 1.0):
    """Per-sample smoothed Dice loss over (N, H, W); returns (losses, dpred)."""
    p = pred.astype(np.float64)
    q = gt.astype(np.float64)
    inter = (p * q).sum(axis=(1, 2))
    tot = p.sum(axis=(1, 2)) + q.sum(axis=(1, 2))
    losses = 1.0 - (2.0 * inter + eps) / (tot + eps)
    denom = (tot + eps)[:, None, None]
    dpred = -(2.0 * q * denom - (2.0 * inter + eps)[:, None, None]) / (denom**2)
    return losses, dpred.astype(np.float32)


def bce_loss(scores: np.ndarray, labels: np.ndarray):
    """Elementwise binary cross-entropy on clamped scores; returns
    (losses, dlogits) where dlogits is the gradient w.r.t. the sigmoid
    pre-activation (score - label)."""
    s = np.clip(scores.astype(np.float64), 1e-7, 1.0 - 1e-7)
    c = labels.astype(np.float64)
    losses = -(c * np.log(s) + (1.0 - c) * np.log(1.0 - s))
    dlogits = (s - c).astype(np.float32)
    return losses, dlogits


# ---------------------------------------------------------------------------
# Reference similarity (constant w.r.t. trainables: taps come from the
# frozen stem)


def reference_similarity(taps: list[np.ndarray], ref_taps: list[np.ndarray]
                         ) -> list[np.ndarray]:
    """Per-tap per-pixel cosine similarity across channels; zero-norm -> 0."""
    out = []
    for t, r in zip(taps, ref_taps):
        if t.shape != r.shape:
            raise ValueError(f"tap shape {t.shape} != reference tap shape {r.shape}")
        num = np.sum(t.astype(np.float64) * r, axis=-1)
        na = np.sqrt(np.sum(t.astype(np.float64) ** 2, axis=-1))
        nb = np.sqrt(np.sum(r.astype(np.float64) ** 2, axis=-1))
        denom = na * nb
        cos = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
        out.append(cos[..., None].astype(t.dtype))
    return out


class KfdModel:
    """Trainable projections, text offset, locator and classifier on top of
    the frozen toy encoder."""

    def __init__(self, config: KfdConfig | None = None,
                 bank: DescriptionBank | None = None,
                 text_encoder: ToyTextEncoder | None = None):
        self.config = config or KfdConfig()
        cfg = self.config
        self.store = ParamStore()
        rng = np.random.default_rng(cfg.seed)
        self.stem = ToyImageEncoder(self.store, seed=cfg.seed + 2024)
        self.text_encoder = text_encoder or ToyTextEncoder(c_text=cfg.c_text)
        self.bank = bank or DescriptionBank()

        real_rows = np.stack([self.text_encoder.encode_text(d)
                              for d in self.bank.real_descriptions])
        fake_rows = np.stack([self.text_encoder.encode_text(d)
                              for d in self.bank.fake_descriptions])
        # per-class mean of description embeddings; the learnable offset is
        # added on top and the rows are renormalized before use
        self.text_base = np.stack([real_rows.mean(axis=0), fake_rows.mean(axis=0)])
        self.store.add("text/offset", np.zeros((2, cfg.c_text), np.float32))

        self.projections = [
            Linear(self.store, f"proj/{i}", TAP_SHAPES[i][2], cfg.c_text, rng)
            for i in range(len(TAP_SHAPES))
        ]
        bw = cfg.branch_width
        self.loc_down = [Conv2d(self.store, f"loc/down{i}", 2, bw, 3, 2, rng)
                         for i in range(3)]
        self.loc_up = [Conv2d(self.store, f"loc/up{i}", bw, bw, 3, 1, rng)
                       for i in range(3)]
        self.loc_fuse1 = Conv2d(self.store, "loc/fuse1", 3 * bw, cfg.fuse_width, 3, 1, rng)
        self.loc_fuse2 = Conv2d(self.store, "loc/fuse2", cfg.fuse_width, 1, 3, 1, rng)
        # Recall-biased start: a positive output bias keeps early predictions
        # non-empty. With a zero bias the dominant background gradients push
        # the sigmoid into saturation and Dice gradients at true-mask pixels
        # vanish, which is an irreversible all-empty collapse.
        self.store.params["loc/fuse2/b"][:] = 2.0
        cw = cfg.cls_width
        self.cls_conv = [Conv2d(self.store, f"cls/conv{i}", 2, cw, 3, 1, rng)
                         for i in range(3)]
        self.cls_fc1 = Linear(self.store, "cls/fc1", 3 * cw, cfg.fc_width, rng)
        self.cls_fc2 = Linear(self.store, "cls/fc2", cfg.fc_width, 1, rng)

    # -- text bank ---------------------------------------------------------

    def text_rows(self):
        eff = self.text_base + self.store["text/offset"]
        rows, norms = l2_normalize(eff)
        return rows, (rows, norms)

    def text_rows_backward(self, drows, cache):
        rows, norms = cache
        deff = l2_normalize_backward(drows, rows, norms)
        self.store.accumulate_grad("text/offset", deff)

    # -- consistency maps (Eq. 1 analogue) ----------------------------------

    def consistency_maps(self, taps: list[np.ndarray]):
        """taps: per-tap (N, H, W, C_i). Returns (rhos, cache); each rho is
        (N, H, W, 2) of normalized dot products, bounded to [-1, 1]."""
        rows, rows_cache = self.text_rows()
        rhos, caches = [], []
        for proj, tap in zip(self.projections, taps):
            feat = proj.forward(tap)
            pix, norm = l2_normalize(feat)
            rho = pix @ rows.T
            rhos.append(rho.astype(pix.dtype))
            caches.append((pix, norm))
        return rhos, (rows, rows_cache, caches, taps)

    def consistency_backward(self, drhos: list[np.ndarray], cache) -> None:
        rows, rows_cache, caches, _taps = cache
        drows_total = np.zeros_like(rows)
        # projections cache their own inputs; walk in reverse for symmetry
        for proj, drho, (pix, norm) in zip(self.projections, drhos, caches):
            dpix = drho @ rows
            drows_total += np.einsum("nhwk,nhwc->kc", drho, pix).astype(np.float32)
            dfeat = l2_normalize_backward(dpix, pix, norm)
            proj.backward(dfeat)
        self.text_rows_backward(drows_total, rows_cache)

    # -- forgery locator -----------------------------------------------------

    def locate(self, maps: list[np.ndarray]):
        """maps: 3 tensors (N, H_i, W_i, C). Returns (seg (N,224,224), cache)."""
        if len(maps) != 3:
            raise ValueError(f"locator expects 3 branch maps, got {len(maps)}")
        cfg = self.config
        branch_out, caches = [], []
        for i, m in enumerate(maps):
            d = self.loc_down[i].forward(m)
            dr = relu(d)
            up = bilinear_resize(dr, (2 * d.shape[1], 2 * d.shape[2]))
            u = self.loc_up[i].forward(up)
            ur = relu(u)
            rs = bilinear_resize(ur, (cfg.fuse_hw, cfg.fuse_hw))
            branch_out.append(rs)
            caches.append((d, dr.shape[1:3], up.shape, u, ur.shape[1:3]))
        cat = np.concatenate(branch_out, axis=-1)
        f1 = self.loc_fuse1.forward(cat)
        f1r = relu(f1)
        logits = self.loc_fuse2.forward(f1r)
        prob = sigmoid(logits)
        seg = bilinear_resize(prob, (IMAGE_SIZE, IMAGE_SIZE))[..., 0]
        return seg, (caches, f1, prob, branch_out)

    def locate_backward(self, dseg: np.ndarray, cache) -> list[np.ndarray]:
        caches, f1, prob, branch_out = cache
        cfg = self.config
        dprob = bilinear_resize_backward(dseg[..., None], (cfg.fuse_hw, cfg.fuse_hw))
        dlogits = sigmoid_backward(dprob, prob)
        df1r = self.loc_fuse2.backward(dlogits)
        df1 = relu_backward(df1r, f1)
        dcat = self.loc_fuse1.backward(df1)
        bw = cfg.branch_width
        dmaps = []
        for i in reversed(range(3)):
            drs = dcat[..., i * bw : (i + 1) * bw]
            d, dr_hw, up_shape, u, ur_hw = caches[i]
            dur = bilinear_resize_backward(drs, ur_hw)
            du = relu_backward(dur, u)
            dup = self.loc_up[i].backward(du)
            ddr = bilinear_resize_backward(dup, dr_hw)
            dd = relu_backward(ddr, d)
            dmaps.append(self.loc_down[i].backward(dd))
        dmaps.reverse()
        return dmaps

    # -- forgery classifier ---------------------------------------------------

    def classify(self, maps: list[np.ndarray]):
        """Returns (scores (N,), logits (N,), cache)."""
        if len(maps) != 3:
            raise ValueError(f"classifier expects 3 branch maps, got {len(maps)}")
        feats, caches = [], []
        for i, m in enumerate(maps):
            c = self.cls_conv[i].forward(m)
            cr = relu(c)
            feats.append(global_avg_pool(cr))
            caches.append((c, cr.shape))
        cat = np.concatenate(feats, axis=-1)
        h = self.cls_fc1.forward(cat)
        hr = relu(h)
        logits = self.cls_fc2.forward(hr)[:, 0]
        scores = sigmoid(logits)
        return scores, logits, (caches, h)

    def classify_backward(self, dlogits: np.ndarray, cache) -> list[np.ndarray]:
        caches, h = cache
        dhr = self.cls_fc2.backward(dlogits[:, None])
        dh = relu_backward(dhr, h)
        dcat = self.cls_fc1.backward(dh)
        cw = self.config.cls_width
        dmaps = []
        for i in reversed(range(3)):
            dpool = dcat[:, i * cw : (i + 1) * cw]
            c, cr_shape = caches[i]
            dcr = global_avg_pool_backward(dpool, cr_shape)
            dc = relu_backward(dcr, c)
            dmaps.append(self.cls_conv[i].backward(dc))
        dmaps.reverse()
        return dmaps

    # -- losses (Eq. 3 / Eq. 4 analogues) --------------------------------------

    def loss_localization(self, seg_text, seg_ref, gt, lam: float | None = None):
        lam = self.config.lam if lam is None else lam
        l_text, _ = dice_loss(seg_text, gt, self.config.dice_eps)
        total = l_text.copy()
        if seg_ref is not None and lam != 0.0:
            l_ref, _ = dice_loss(seg_ref, gt, self.config.dice_eps)
            total = total + lam * l_ref
        return total

    # -- inference --------------------------------------------------------------

    def infer(self, image: np.ndarray) -> KfdOutput:
        """Inference path; takes no reference input by construction."""
        taps = self.stem.forward_batch(image[None])
        return self.infer_from_taps(taps)

    def infer_from_taps(self, taps: list[np.ndarray]) -> KfdOutput:
        rhos, _ = self.consistency_maps(taps)
        seg, _ = self.locate(rhos)
        scores, _, _ = self.classify(rhos)
        return KfdOutput(seg_map=seg[0], score=float(scores[0]),
                         stack=ConsistencyStack([r[0] for r in rhos]))


def precompute_taps(model: KfdModel, images: np.ndarray, chunk: int = 16
                    ) -> list[np.ndarray]:
    """Run the frozen stem once over a stack of images, in chunks."""
    parts = [model.stem.forward_batch(images[i : i + chunk])
             for i in range(0, len(images), chunk)]
    return [np.concatenate([p[t] for p in parts]) for t in range(len(parts[0]))]


def train_kfd(model: KfdModel, samples, steps: int, batch_size: int = 16,
              lr: float = 1e-4, weight_decay: float = 1e-5, seed: int = 0,
              log_every: int = 0) -> list[dict[str, float]]:
    """Train on a list of SimulatedSamples; stem taps are cached up front
    (the stem is frozen, so this is exact). Returns per-step loss records."""
    images = np.stack([s.image for s in samples])
    refs = np.stack([s.reference if s.reference is not None else s.image
                     for s in samples])
    gts = np.stack([s.gt_mask for s in samples])
    labels = np.array([s.label for s in samples], np.float32)
    taps = precompute_taps(model, images)
    rtaps = precompute_taps(model, refs)
    opt = Adam(lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    history = []
    for step in range(steps):
        idx = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
        out = kfd_train_step(
            model, opt,
            [t[idx] for t in taps], [t[idx] for t in rtaps],
            gts[idx], labels[idx])
        out["step"] = step
        history.append(out)
        if log_every and step % log_every == 0:
            print(f"step {step}: total {out['total']:.4f} "
                  f"(loc {out['l_loc']:.4f}, cls {out['l_cls']:.4f})")
    return history


def kfd_train_step(model: KfdModel, optimizer: Adam,
                   taps: list[np.ndarray], ref_taps: list[np.ndarray] | None,
                   gt_masks: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    """One batched train step on precomputed (frozen) stem taps.

    taps/ref_taps: per-tap (N, H_i, W_i, C_i); gt_masks (N, 224, 224);
    labels (N,). Returns loss components averaged over the batch.
    """
    cfg = model.config
    n = gt_masks.shape[0]
    model.store.zero_grad()

    l_ref_mean = 0.0
    if ref_taps is not None and cfg.lam != 0.0:
        rho_ref = reference_similarity(taps, ref_taps)
        # locator consumes 2-channel maps; the 1-channel reference map is
        # duplicated so both branches share weights
        ref_maps = [np.repeat(r, 2, axis=-1) for r in rho_ref]
        seg_ref, loc_cache = model.locate(ref_maps)
        l_ref, dref = dice_loss(seg_ref, gt_masks, cfg.dice_eps)
        l_ref_mean = float(l_ref.mean())
        model.locate_backward(dref * np.float32(cfg.lam / n), loc_cache)

    rhos, cons_cache = model.consistency_maps(taps)
    seg_text, loc_cache = model.locate(rhos)
    l_loc, dtext = dice_loss(seg_text, gt_masks, cfg.dice_eps)
    scores, logits, cls_cache = model.classify(rhos)
    l_cls, dlogits = bce_loss(scores, labels)

    dmaps_loc = model.locate_backward(dtext / np.float32(n), loc_cache)
    dmaps_cls = model.classify_backward(dlogits / np.float32(n), cls_cache)
    drhos = [a + b for a, b in zip(dmaps_loc, dmaps_cls)]
    model.consistency_backward(drhos, cons_cache)

    total = float(l_loc.mean()) + cfg.lam * l_ref_mean + float(l_cls.mean())
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite training loss: {total}")
    optimizer.step(model.store)
    return {
        "l_loc": float(l_loc.mean()) + cfg.lam * l_ref_mean,
        "l_cls": float(l_cls.mean()),
        "total": total,
    }
