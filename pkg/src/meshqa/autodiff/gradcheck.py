"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    errors: list[float] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e) and e < self.tol for e in self.errors)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Max abs difference scaled by the larger gradient magnitude of the two.

    The scale never drops below ``floor``: gradients that are exactly zero (a key bias
    under softmax, say) would otherwise be judged against pure rounding noise.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    diff = np.abs(analytic - numeric).max(initial=0.0)
    return float(diff / scale)


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = 1e-4,
               step: float = 1e-6, max_entries: int | None = 64,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare ``backward`` against central differences for every ``requires_grad`` input.

    ``fn`` must return a scalar. For large inputs only ``max_entries`` randomly chosen
    coordinates are perturbed; the analytic gradient is compared on those coordinates.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    report = GradCheckReport(tol=tol)
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            coords = rng.choice(n, size=max_entries, replace=False)
        else:
            coords = np.arange(n)
        numeric = np.empty(len(coords))
        for k, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            plus = float(fn(*inputs).data)
            flat[i] = orig - step
            minus = float(fn(*inputs).data)
            flat[i] = orig
            numeric[k] = (plus - minus) / (2 * step)
        report.errors.append(relative_error(analytic.reshape(-1)[coords], numeric))
    return report
