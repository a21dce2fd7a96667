"""Central finite-difference gradient checking.

Compares the analytic gradients accumulated in a ParamStore against
central differences of a loss closure. Loss closures should reduce in
float64 so the h=1e-3 stencil stays above float32 rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class GradCheckReport:
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in sorted(self.per_param.items())]
        lines.append(f"max relative error: {self.max_rel_error:.3e}")
        return "\n".join(lines)


def grad_check(store: ParamStore, loss_fn, backward_fn, h: float = 1e-3,
               max_entries_per_param: int = 8, rng: np.random.Generator | None = None,
               names: list[str] | None = None) -> GradCheckReport:
    """Check analytic grads of trainable params against central differences.

    loss_fn() -> scalar recomputes the forward pass from current params;
    backward_fn() populates store.grads (zeroing first is its job or ours).
    For large tensors a random subset of entries is probed.
    """
    rng = rng or np.random.default_rng(0)
    store.zero_grad()
    base = float(loss_fn())
    if not np.isfinite(base):
        raise FloatingPointError(f"non-finite loss in gradient check: {base}")
    backward_fn()

    report = GradCheckReport()
    check_names = names if names is not None else store.trainable_names()
    for name in check_names:
        p = store.params[name]
        g = store.grads[name]
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        n = flat.size
        idxs = np.arange(n) if n <= max_entries_per_param else rng.choice(
            n, size=max_entries_per_param, replace=False)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn())
            flat[i] = orig - h
            lm = float(loss_fn())
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            an = float(gflat[i])
            denom = max(abs(fd), abs(an), 1e-4)
            worst = max(worst, abs(fd - an) / denom)
        report.per_param[name] = worst
    return report
