"""Supervised training of the selection network.

The loss is the summed per-port binary cross-entropy between the sigmoid
scores and the 0/1 label mask,

    L = -sum_{b,u,m} w p log p_hat + (1 - p) log(1 - p_hat),

reported per sample and minimized with adaptive-moment steps.  Logits feed
the numerically safe fused form, which is the same quantity without the
overflow at saturated sigmoids.  The positive-label weight w defaults to
the negative/positive count ratio of the training labels: only T of M
ports per block are selected, and without the reweighting the abundant
zeros dominate the gradient and the scores never sharpen enough for
reliable top-T decisions.

Given a seed the run is reproducible on CPU: torch's global generator
drives init and dropout, a numpy generator drives the split and the
per-epoch shuffles, and no nondeterministic kernels are involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from dljps.data import DatasetDims, Record, split_records, stack_inputs, \
    stack_labels
from dljps.errors import TrainingError
from dljps.model import DlConfig, PortNet


@dataclass(frozen=True)
class TrainResult:
    model: PortNet
    losses: list[float]          # per-epoch mean of per-sample summed BCE
    train_ids: list[int]
    test_ids: list[int]


def _epoch_batches(n: int, batch_size: int,
                   rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def train_model(records: list[Record], dims: DatasetDims,
                cfg: DlConfig | None = None, seed: int = 0,
                split: bool = True) -> TrainResult:
    """Fit the network on the given records.

    With split=True the records are shuffled into train/test sides at the
    configured ratio and only the train side is fitted; the held-out ids
    land in the result (and the saved manifest) so later predictions can
    target exactly the data the model never saw.  split=False fits on
    everything, which is what memorization checks want.
    """
    cfg = cfg or DlConfig()
    cfg.validate()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    if split:
        train_recs, test_recs = split_records(records, cfg.split_ratio, rng)
    else:
        train_recs, test_recs = list(records), []

    x = torch.from_numpy(stack_inputs(train_recs, cfg.normalization))
    y = torch.from_numpy(stack_labels(train_recs))
    if cfg.pos_weight == "auto":
        positives = y.sum().item()
        if positives == 0:
            raise TrainingError(
                "training labels have no selected ports, so the automatic "
                "positive weight is undefined; fix the data or set a "
                "numeric pos_weight"
            )
        pos_weight = torch.tensor((y.numel() - positives) / positives)
    else:
        pos_weight = torch.tensor(float(cfg.pos_weight))
    model = PortNet(dims, cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        model.train()
        epoch_rng = np.random.default_rng((seed, epoch))
        total = 0.0
        for batch in _epoch_batches(len(train_recs), cfg.batch_size,
                                    epoch_rng):
            idx = torch.from_numpy(batch)
            optimizer.zero_grad()
            logits = model(x[idx])
            loss = torch.nn.functional.binary_cross_entropy_with_logits(
                logits, y[idx], reduction="sum",
                pos_weight=pos_weight) / len(batch)
            if not math.isfinite(loss.item()):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}; inputs or learning "
                    "rate are out of range"
                )
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        losses.append(total / len(train_recs))
    model.eval()
    return TrainResult(model=model, losses=losses,
                       train_ids=[r.ident for r in train_recs],
                       test_ids=[r.ident for r in test_recs])
