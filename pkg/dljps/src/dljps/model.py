"""The selection network and its on-disk artifact format.

The network maps a (B*M, U) matrix of normalized average port powers to
U*B*M sigmoid scores arranged as U x B blocks of M per-port binary
classifiers: score (u, b, m) is the model's belief that BS b should serve
user u on port m.  Three 3x3 convolutions (16, 16, 8 kernels, each with
batch normalization) read the power matrix as a one-channel image, a
reconstruction step flattens the feature maps, and two 1024-unit rectified
layers with dropout feed the output block.

Artifacts are deliberately framework-neutral: weights go into a .npz
archive of named arrays and everything else (dimensions, hyperparameters,
the train/test id split, weight shapes) into a JSON manifest, so another
tool can check compatibility or audit the split without importing torch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from dljps.data import DatasetDims
from dljps.errors import ModelError

WEIGHTS_NAME = "weights.npz"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DlConfig:
    """Architecture and training hyperparameters."""

    conv_channels: tuple[int, int, int] = (16, 16, 8)
    kernel_size: int = 3
    hidden: tuple[int, int] = (1024, 1024)
    lr: float = 1e-3
    dropout: float = 0.2
    batch_size: int = 50
    epochs: int = 100
    split_ratio: int = 4
    normalization: str = "max"
    # selected ports are a small minority of the outputs (P*B of U*B*M), so
    # by default positive labels are upweighted to parity with negatives;
    # "auto" reads the ratio off the training labels, a float fixes it, and
    # 1.0 turns balancing off
    pos_weight: float | str = "auto"

    def validate(self) -> None:
        numbers = (*self.conv_channels, self.kernel_size, *self.hidden,
                   self.lr, self.batch_size, self.epochs, self.split_ratio)
        if any(v <= 0 for v in numbers):
            raise ModelError("all hyperparameters must be positive")
        if not 0 <= self.dropout < 1:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.normalization not in ("max", "none"):
            raise ModelError(f"unknown normalization {self.normalization!r}")
        if self.pos_weight != "auto":
            try:
                ok = float(self.pos_weight) > 0
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise ModelError(
                    f"pos_weight must be 'auto' or a positive number, "
                    f"got {self.pos_weight!r}"
                )


class PortNet(nn.Module):
    """Convolutional scorer for per-(user, BS, port) selection decisions."""

    def __init__(self, dims: DatasetDims, cfg: DlConfig | None = None):
        super().__init__()
        cfg = cfg or DlConfig()
        cfg.validate()
        self.dims = dims
        self.cfg = cfg
        pad = cfg.kernel_size // 2
        chans = (1, *cfg.conv_channels)
        conv = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            conv += [
                nn.Conv2d(c_in, c_out, cfg.kernel_size, padding=pad),
                nn.BatchNorm2d(c_out),
                nn.ReLU(),
            ]
        self.features = nn.Sequential(*conv)
        flat = cfg.conv_channels[-1] * dims.stack * dims.n_users
        widths = (flat, *cfg.hidden)
        dense = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            dense += [nn.Linear(w_in, w_out), nn.ReLU(),
                      nn.Dropout(cfg.dropout)]
        dense.append(nn.Linear(widths[-1], dims.n_outputs))
        self.classifier = nn.Sequential(*dense)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(n, 1, B*M, U) inputs to (n, U, B, M) pre-sigmoid logits."""
        out = self.classifier(self.features(x).flatten(1))
        return out.view(-1, self.dims.n_users, self.dims.n_bs,
                        self.dims.n_ports)

    @torch.no_grad()
    def scores(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Sigmoid selection scores, batched, as a (n, U, B, M) array."""
        self.eval()
        chunks = []
        for start in range(0, len(x), batch_size):
            t = torch.from_numpy(np.ascontiguousarray(
                x[start:start + batch_size], dtype=np.float32))
            chunks.append(torch.sigmoid(self(t)).numpy())
        return np.concatenate(chunks, axis=0)


def save_model(out_dir: str | Path, model: PortNet, seed: int,
               train_ids: list[int], test_ids: list[int],
               losses: list[float]) -> tuple[Path, Path]:
    """Write weights.npz plus manifest.json; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    weights_path = out_dir / WEIGHTS_NAME
    np.savez(weights_path, **state)
    manifest = {
        "format_version": 1,
        "n_bs": model.dims.n_bs,
        "n_ports": model.dims.n_ports,
        "n_users": model.dims.n_users,
        "config": asdict(model.cfg),
        "seed": int(seed),
        "train_ids": [int(i) for i in train_ids],
        "test_ids": [int(i) for i in test_ids],
        "final_loss": losses[-1] if losses else None,
        "weights_file": WEIGHTS_NAME,
        "weights": {k: list(v.shape) for k, v in state.items()},
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return weights_path, manifest_path


def load_manifest(model_dir: str | Path) -> dict:
    path = Path(model_dir) / MANIFEST_NAME
    if not path.exists():
        raise ModelError(f"no {MANIFEST_NAME} in {Path(model_dir)}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path} is not valid JSON: {exc}") from exc
    for key in ("n_bs", "n_ports", "n_users", "config", "weights_file"):
        if key not in manifest:
            raise ModelError(f"{path} is missing field {key!r}")
    return manifest


def load_model(model_dir: str | Path) -> tuple[PortNet, dict]:
    """Rebuild a saved network; returns (model in eval mode, manifest)."""
    model_dir = Path(model_dir)
    manifest = load_manifest(model_dir)
    dims = DatasetDims(int(manifest["n_bs"]), int(manifest["n_ports"]),
                       int(manifest["n_users"]))
    raw = dict(manifest["config"])
    for key in ("conv_channels", "hidden"):
        raw[key] = tuple(raw[key])
    cfg = DlConfig(**raw)
    model = PortNet(dims, cfg)
    with np.load(model_dir / manifest["weights_file"]) as archive:
        state = {k: torch.from_numpy(archive[k]) for k in archive.files}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ModelError(f"weights do not fit the manifest shape: {exc}") from exc
    model.eval()
    return model, manifest
