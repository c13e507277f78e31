"""Pair sampling and gradient-descent training of the matching network.

Pairs are labeled +1 when both graphs carry the same packer label and -1
otherwise.  Each epoch draws a fresh seeded pair sample, so reruns with
the same seed reproduce the trained weights byte for byte.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..callgraph import FeatureStats
from ..errors import TrainingError
from ..stub import StubGraph
from .config import GmnConfig
from .network import pair_gradients
from .params import GmnParams, zero_like

__all__ = ["PairSample", "sample_pairs", "train", "fine_tune", "TrainResult"]

FINE_TUNE_EPOCHS = 10


@dataclass(frozen=True)
class PairSample:
    a: StubGraph
    b: StubGraph
    label: int  # +1 same packer, -1 otherwise

    def __post_init__(self) -> None:
        same = (
            self.a.meta.packer_label is not None
            and self.a.meta.packer_label == self.b.meta.packer_label
        )
        if self.label != (1 if same else -1):
            raise TrainingError("pair label contradicts the packer labels")


def _by_packer(dataset: Sequence[StubGraph]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, g in enumerate(dataset):
        if g.meta.packer_label is None:
            raise TrainingError(f"{g.meta.sample_id}: unlabeled graph in training set")
        groups[g.meta.packer_label].append(i)
    return dict(sorted(groups.items()))


def sample_pairs(
    dataset: Sequence[StubGraph],
    count: int,
    balance: float = 0.5,
    seed: int = 0,
) -> list[PairSample]:
    """Draw ``count`` labeled pairs, a fraction ``balance`` of them positive.

    Reproducible for a given seed; never pairs a graph with itself.
    """
    if not 0 <= balance <= 1:
        raise TrainingError("balance must lie in [0, 1]")
    groups = _by_packer(dataset)
    packers = list(groups)
    pos_eligible = [p for p in packers if len(groups[p]) >= 2]
    n_pos = round(count * balance)
    n_neg = count - n_pos
    if n_pos > 0 and not pos_eligible:
        raise TrainingError("positive pairs need a packer with at least two graphs")
    if n_neg > 0 and len(packers) < 2:
        raise TrainingError("negative pairs need at least two packers")
    rng = np.random.default_rng(seed)
    pairs: list[PairSample] = []
    for _ in range(n_pos):
        packer = pos_eligible[rng.integers(len(pos_eligible))]
        i, j = rng.choice(len(groups[packer]), size=2, replace=False)
        pairs.append(PairSample(dataset[groups[packer][i]], dataset[groups[packer][j]], 1))
    for _ in range(n_neg):
        pi, pj = rng.choice(len(packers), size=2, replace=False)
        gi = groups[packers[pi]][rng.integers(len(groups[packers[pi]]))]
        gj = groups[packers[pj]][rng.integers(len(groups[packers[pj]]))]
        pairs.append(PairSample(dataset[gi], dataset[gj], -1))
    return pairs


class _Adam:
    """Per-parameter adaptive steps; stabler than plain SGD on the hinge."""

    def __init__(self, params: GmnParams, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zero_like(params)
        self.v = zero_like(params)

    def step(self, params: GmnParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, arr in params.arrays.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            arr -= self.lr * (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)


@dataclass
class TrainResult:
    params: GmnParams
    epoch_losses: list[float]


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, epoch]).generate_state(1)[0])


def _run_epochs(
    params: GmnParams,
    dataset: Sequence[StubGraph],
    config: GmnConfig,
    stats: FeatureStats,
    epochs: int,
    seed: int,
) -> TrainResult:
    n_batches = max(1, -(-4 * len(dataset) // config.batch_pairs))
    opt = _Adam(params, config.learning_rate)
    epoch_losses: list[float] = []
    for epoch in range(epochs):
        pairs = sample_pairs(
            dataset, n_batches * config.batch_pairs, balance=0.5, seed=_epoch_seed(seed, epoch)
        )
        total = 0.0
        for batch_idx in range(n_batches):
            batch = pairs[batch_idx * config.batch_pairs : (batch_idx + 1) * config.batch_pairs]
            grads = zero_like(params)
            batch_loss = 0.0
            for pair in batch:
                loss, _, g = pair_gradients(pair.a, pair.b, pair.label, params, stats)
                batch_loss += loss
                for name in grads:
                    grads[name] += g[name]
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise TrainingError(f"loss diverged at epoch {epoch}, batch {batch_idx}")
            for name in grads:
                grads[name] /= len(batch)
            opt.step(params, grads)
            total += batch_loss
        epoch_losses.append(total / n_batches)
    return TrainResult(params, epoch_losses)


def train(dataset: Sequence[StubGraph], config: GmnConfig, stats: FeatureStats) -> TrainResult:
    """Train from scratch; deterministic in (dataset, config, stats)."""
    groups = _by_packer(dataset)
    if len(groups) < 2:
        raise TrainingError("training needs graphs from at least two packers")
    params = GmnParams.initialize(config)
    return _run_epochs(params, dataset, config, stats, config.epochs, config.seed)


def fine_tune(
    params: GmnParams,
    new_graphs: Sequence[StubGraph],
    old_sample: Sequence[StubGraph],
    config: GmnConfig,
    stats: FeatureStats,
    epochs: int = FINE_TUNE_EPOCHS,
) -> TrainResult:
    """Continue descent from existing weights on new-packer pairs mixed
    with a sample of the old material."""
    if not new_graphs:
        raise TrainingError("fine-tuning needs at least one new graph")
    if not old_sample:
        raise TrainingError("fine-tuning needs a sample of previously known graphs")
    labels = {g.meta.packer_label for g in new_graphs}
    if len(labels) != 1:
        raise TrainingError("new graphs must share a single packer label")
    combined = list(new_graphs) + list(old_sample)
    if len(_by_packer(combined)) < 2:
        raise TrainingError("fine-tuning needs at least two packers overall")
    # distinct stream from initial training: offset keeps pair draws fresh
    return _run_epochs(params.copy(), combined, config, stats, epochs, config.seed ^ 0x5EED)
