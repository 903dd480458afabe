"""MAE, pairwise rank hinge and their weighted sum, on ``(B,)`` prediction arrays."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _targets(q: Tensor, target) -> np.ndarray:
    t = np.asarray(target, dtype=q.data.dtype).reshape(-1)
    if q.shape != t.shape:
        raise ValueError(f"prediction/target length mismatch: {q.shape[0]} vs {t.shape[0]}")
    if t.size < 1:
        raise ValueError("empty batch")
    return t


def mae_loss(q: Tensor, target) -> Tensor:
    t = _targets(q, target)
    return ad.mean(ad.abs_(ad.sub(q, Tensor(t))))


def ordered_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return i, j


def rank_loss(q: Tensor, target) -> Tensor:
    """Mean over ordered pairs ``i != j`` of ``max(0, |t_i - t_j| - e_ij (q_i - q_j))``,
    ``e_ij = +1`` if ``t_i >= t_j`` else ``-1``."""
    t = _targets(q, target)
    if t.size < 2:
        raise ValueError("rank loss needs a batch of at least 2")
    i, j = ordered_pairs(t.size)
    sign = np.where(t[i] >= t[j], 1.0, -1.0).astype(t.dtype)
    margin = np.abs(t[i] - t[j])
    diff = ad.sub(ad.gather_rows(q, i), ad.gather_rows(q, j))
    hinge = ad.relu(ad.sub(Tensor(margin), ad.mul(Tensor(sign), diff)))
    return ad.mean(hinge)


def total_loss(q: Tensor, target, lam: float = 1.0) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(L, L_mae, L_rank)`` with ``L = L_mae + lam * L_rank``."""
    mae = mae_loss(q, target)
    rank = rank_loss(q, target)
    return ad.add(mae, ad.scale(rank, lam)), mae, rank
