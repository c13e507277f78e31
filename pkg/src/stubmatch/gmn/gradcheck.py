"""Finite-difference validation of the hand-derived backward pass."""

from __future__ import annotations

import numpy as np

from ..callgraph import FeatureStats
from .network import pair_gradients, pair_loss, cosine_similarity, embed_pair
from .params import GmnParams
from .training import PairSample

__all__ = ["gradient_check"]


def _loss_at(flat: np.ndarray, template: GmnParams, pair: PairSample, stats: FeatureStats, margin: float, form: str) -> float:
    params = template.with_flat(flat)
    ea, eb = embed_pair(pair.a, pair.b, params, stats)
    return pair_loss(cosine_similarity(ea, eb), pair.label, margin, form)


def gradient_check(
    params: GmnParams,
    pair: PairSample,
    margin: float | None = None,
    eps: float = 1e-5,
    stats: FeatureStats | None = None,
    fraction: float = 0.01,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    on a random ``fraction`` of the parameters.

    Meaningful away from the hinge kink; on the flat side both gradients
    are zero and the error is 0.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    if stats is None:
        raise ValueError("feature stats are required")
    cfg = params.config
    margin = cfg.margin if margin is None else margin
    form = cfg.loss_form
    _, _, grads = pair_gradients(pair.a, pair.b, pair.label, params, stats, margin, form)
    analytic = np.concatenate([grads[name].ravel() for name in params.arrays])
    flat = params.flatten()
    rng = np.random.default_rng(seed)
    n_probe = max(1, int(fraction * flat.size))
    indices = rng.choice(flat.size, size=n_probe, replace=False)
    worst = 0.0
    for idx in indices:
        saved = flat[idx]
        flat[idx] = saved + eps
        up = _loss_at(flat, params, pair, stats, margin, form)
        flat[idx] = saved - eps
        down = _loss_at(flat, params, pair, stats, margin, form)
        flat[idx] = saved
        numeric = (up - down) / (2.0 * eps)
        denom = max(abs(analytic[idx]) + abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[idx] - numeric) / denom)
    return worst
