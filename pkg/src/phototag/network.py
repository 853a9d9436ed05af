"""Trainable networks assembled from a layer plan, plus the training loop.

Training follows the reference methodology: SGD with momentum 0.9, weight
decay 0.0005 (conv/fc weights only, not batchnorm affine), learning rate
divided by a fixed factor on a fixed epoch schedule, random 10-view crop
augmentation, batchnorm after every conv and hidden fc, dropout on hidden
fc layers. Checkpoints reload to bit-identical subsequent training in single
precision given the same seed.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import Geometry, HeadConfig, LayerPlan, expand_layers, parse_arch_file
from .complexity import count_complexity
from . import tensor as T


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    base_lr: float = 0.01
    lr_decay_factor: float = 10.0  # divide-by
    lr_decay_every: int = 20
    total_epochs: int = 90
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0
    base_size: int = 256  # images arrive rescaled to this
    crop_size: int = 221

    def __post_init__(self):
        for name in ("batch_size", "base_lr", "lr_decay_factor", "lr_decay_every",
                     "total_epochs", "momentum", "weight_decay", "base_size", "crop_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1 or self.lr_decay_every < 1:
            raise ValueError("batch_size and lr_decay_every must be >= 1")


def lr_at(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.base_lr / config.lr_decay_factor ** (epoch // config.lr_decay_every)


# ---------------------------------------------------------------------------
# Network

class Network:
    """A layer plan bound to parameters and batchnorm state."""

    def __init__(self, plan: LayerPlan, head: HeadConfig, arch_text: str = ""):
        self.plan = plan
        self.head = head
        self.arch_text = arch_text
        self.params: dict[str, T.Parameter] = {}
        self.bn_states: dict[int, T.BatchNormState] = {}
        self._layer_param: dict[int, tuple] = {}

    @property
    def parameters(self) -> list[T.Parameter]:
        return list(self.params.values())

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> T.Tensor:
        t = x if isinstance(x, T.Tensor) else T.Tensor(np.ascontiguousarray(x))
        for i, layer in enumerate(self.plan):
            if layer.kind == "conv":
                t = T.conv2d(t, self._layer_param[i][0], layer.stride, layer.padding)
            elif layer.kind == "batchnorm":
                gamma, beta = self._layer_param[i]
                t = T.batch_norm(t, gamma, beta, self.bn_states[i], training)
            elif layer.kind == "relu":
                t = T.relu(t)
            elif layer.kind == "pool":
                t = T.max_pool(t, layer.kh, layer.stride)
            elif layer.kind == "spp":
                t = T.spp(t, layer.spp_levels)
            elif layer.kind == "fc":
                t = T.fully_connected(t, self._layer_param[i][0])
            elif layer.kind == "dropout":
                if training and layer.dropout_rate > 0.0:
                    if rng is None:
                        raise ValueError("training forward with dropout needs an rng")
                    t = T.dropout(t, layer.dropout_rate, rng, training=True)
            else:
                raise AssertionError(f"unknown layer kind {layer.kind}")
        return t

    def predict(self, x) -> np.ndarray:
        return self.forward(x, training=False).data

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


def build_network(plan: LayerPlan, head: HeadConfig, init_seed: int = 0) -> Network:
    """Initialize parameters: zero-mean Gaussian with variance 2/fan_in for
    conv and fc weights, gamma=1 beta=0 for batchnorm."""
    fc_rows = [l for l in plan if l.kind == "fc"]
    if not fc_rows or fc_rows[-1].out_channels != head.num_classes:
        raise ValueError("plan/head dimension mismatch: final fc does not match num_classes")
    if tuple(l.out_channels for l in fc_rows[:-1]) != tuple(head.hidden_fc_widths):
        raise ValueError("plan/head dimension mismatch: hidden fc widths differ")

    rng = np.random.default_rng(init_seed)
    net = Network(plan, head)
    for i, layer in enumerate(plan):
        if layer.kind == "conv":
            fan_in = layer.kh * layer.kw * layer.in_channels
            w = rng.standard_normal((layer.out_channels, layer.in_channels, layer.kh, layer.kw))
            p = T.Parameter((w * np.sqrt(2.0 / fan_in)).astype(np.float32), name=f"layer{i}.conv.weight")
            net.params[p.name] = p
            net._layer_param[i] = (p,)
        elif layer.kind == "fc":
            fan_in = layer.in_channels
            w = rng.standard_normal((layer.out_channels, layer.in_channels))
            p = T.Parameter((w * np.sqrt(2.0 / fan_in)).astype(np.float32), name=f"layer{i}.fc.weight")
            net.params[p.name] = p
            net._layer_param[i] = (p,)
        elif layer.kind == "batchnorm":
            gamma = T.Parameter(np.ones(layer.out_channels, dtype=np.float32), name=f"layer{i}.batchnorm.gamma", weight_decay=False)
            beta = T.Parameter(np.zeros(layer.out_channels, dtype=np.float32), name=f"layer{i}.batchnorm.beta", weight_decay=False)
            net.params[gamma.name] = gamma
            net.params[beta.name] = beta
            net._layer_param[i] = (gamma, beta)
            net.bn_states[i] = T.BatchNormState(layer.out_channels)
    return net


def sgd_step(network: Network, config: TrainConfig, epoch: int):
    """v <- momentum*v + grad + weight_decay*w ;  w <- w - lr(epoch)*v."""
    lr = np.float32(lr_at(config, epoch))
    m = np.float32(config.momentum)
    for p in network.params.values():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = p.momentum
        v *= m
        v += g
        if config.weight_decay and p.weight_decay:
            v += np.float32(config.weight_decay) * p.data
        p.data -= lr * v
        if not np.all(np.isfinite(p.data)):
            raise T.NonFiniteError(f"non-finite update in {p.name}")


# ---------------------------------------------------------------------------
# Augmentation: 10 views of a rescaled base image

VIEW_COUNT = 10


def augment_view(image: np.ndarray, view: int, crop_h: int, crop_w: int) -> np.ndarray:
    """View 0 is the center crop, 1-4 the corners, 5-9 their horizontal flips."""
    h, w = image.shape[:2]
    if crop_h > h or crop_w > w:
        raise ValueError(f"crop {crop_h}x{crop_w} larger than image {h}x{w}")
    offsets = [
        ((h - crop_h) // 2, (w - crop_w) // 2),
        (0, 0),
        (0, w - crop_w),
        (h - crop_h, 0),
        (h - crop_h, w - crop_w),
    ]
    base = view % 5
    r, c = offsets[base]
    out = image[r : r + crop_h, c : c + crop_w]
    if view >= 5:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(image: np.ndarray, mode: str, rng: np.random.Generator | None = None,
            crop_h: int = 221, crop_w: int = 221) -> np.ndarray:
    if mode == "test":
        return augment_view(image, 0, crop_h, crop_w)
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode augmentation needs an rng")
        return augment_view(image, int(rng.integers(VIEW_COUNT)), crop_h, crop_w)
    raise ValueError("mode must be 'train' or 'test'")


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_VERSION = 1
_MAGIC = "phototag-checkpoint"


def _tensor_directory(network: Network) -> list[tuple[str, np.ndarray]]:
    entries = []
    for name, p in network.params.items():
        entries.append((name, p.data))
        entries.append((name + ".momentum", p.momentum))
    for i, state in network.bn_states.items():
        entries.append((f"layer{i}.batchnorm.running_mean", state.running_mean))
        entries.append((f"layer{i}.batchnorm.running_var", state.running_var))
    return entries


def save_checkpoint(path, network: Network, config: TrainConfig | None, epoch: int,
                    rng: np.random.Generator | None = None):
    entries = _tensor_directory(network)
    directory = []
    offset = 0
    for name, arr in entries:
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = {
        "magic": _MAGIC,
        "format_version": CHECKPOINT_VERSION,
        "arch": network.arch_text,
        "head": dataclasses.asdict(network.head),
        "train": dataclasses.asdict(config) if config else None,
        "epoch": epoch,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "tensors": directory,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, input_geometry: Geometry):
    """Rebuild the network and its full training state from a container file.

    Returns (network, train_config_or_None, epoch, rng_state_or_None).
    """
    with open(path, "rb") as f:
        header_line = f.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("magic") != _MAGIC:
            raise ValueError("not a checkpoint file")
        if header["format_version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint written by a future format version {header['format_version']}")
        payload = f.read()

    head = HeadConfig(
        spp_levels=tuple(header["head"]["spp_levels"]),
        hidden_fc_widths=tuple(header["head"]["hidden_fc_widths"]),
        dropout_rate=header["head"]["dropout_rate"],
        num_classes=header["head"]["num_classes"],
    )
    spec = parse_arch_file(header["arch"])
    plan = expand_layers(spec, input_geometry, head)
    net = build_network(plan, head, init_seed=0)
    net.arch_text = header["arch"]

    by_name = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload[start : start + size * 4], dtype="<f4").reshape(shape).copy()
        by_name[entry["name"]] = arr

    for name, p in net.params.items():
        p.data = by_name[name]
        p._momentum = by_name[name + ".momentum"]
    for i, state in net.bn_states.items():
        state.running_mean = by_name[f"layer{i}.batchnorm.running_mean"]
        state.running_var = by_name[f"layer{i}.batchnorm.running_var"]

    config = TrainConfig(**header["train"]) if header["train"] else None
    return net, config, header["epoch"], header.get("rng_state")


# ---------------------------------------------------------------------------
# Training

@dataclass
class ArrayDataset:
    """In-memory dataset: images are [N, H, W, C] float32 at the augmentation
    base size; labels are per-image sets of tag indices."""

    images: np.ndarray
    labels: list[frozenset[int]]

    def __len__(self):
        return len(self.labels)


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_val_map: list[float] = field(default_factory=list)
    epochs_run: int = 0
    avg_tags_per_image: float = 0.0
    seconds: float = 0.0


def _to_nchw(batch_hwc: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch_hwc.transpose(0, 3, 1, 2), dtype=np.float32)


def train(network: Network, dataset: ArrayDataset, loss_fn, config: TrainConfig,
          out_dir=None, eval_fn=None, start_epoch: int = 0, log=None) -> TrainResult:
    """Run the epoch loop: shuffled mini-batches, random-view augmentation,
    per-sample loss through `loss_fn(logits_row, labels, rng) -> (loss, grad,
    chosen)`, SGD update per batch, checkpoint per epoch.

    Shuffling, view choice, dropout, and target sampling all derive from one
    generator seeded with (config.seed, epoch), which is what makes a resumed
    run bit-identical to an uninterrupted one.
    """
    t0 = time.monotonic()
    result = TrainResult()
    usable = [i for i in range(len(dataset)) if len(dataset.labels[i]) > 0]
    result.avg_tags_per_image = (
        sum(len(dataset.labels[i]) for i in usable) / len(usable) if usable else 0.0
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    crop = config.crop_size
    for epoch in range(start_epoch, config.total_epochs):
        rng = np.random.default_rng((config.seed, epoch))
        order = rng.permutation(len(usable))
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, len(order), config.batch_size):
            idx = [usable[j] for j in order[lo : lo + config.batch_size]]
            views = np.stack([augment(dataset.images[i], "train", rng, crop, crop) for i in idx])
            x = _to_nchw(views)
            logits = network.forward(x, training=True, rng=rng)
            grads = np.zeros_like(logits.data)
            batch_loss = 0.0
            for row, i in enumerate(idx):
                loss, grad, _ = loss_fn(logits.data[row], dataset.labels[i], rng)
                batch_loss += loss
                grads[row] = grad
            if not np.isfinite(batch_loss):
                raise T.NonFiniteError(
                    f"non-finite training loss at epoch {epoch}, batch {lo // config.batch_size}"
                )
            network.zero_grads()
            logits.backward(grads / len(idx))
            sgd_step(network, config, epoch)
            epoch_loss += batch_loss
            seen += len(idx)
        mean_loss = epoch_loss / max(seen, 1)
        result.epoch_losses.append(mean_loss)
        if eval_fn is not None:
            result.epoch_val_map.append(float(eval_fn(network)))
        if log:
            val = f" val_map={result.epoch_val_map[-1]:.4f}" if eval_fn else ""
            log(f"epoch {epoch}: lr={lr_at(config, epoch):.5f} loss={mean_loss:.4f}{val}")
        if out_dir is not None:
            save_checkpoint(out_dir / f"epoch_{epoch:04d}.ckpt", network, config, epoch + 1, rng)
        result.epochs_run = epoch + 1 - start_epoch
    result.seconds = time.monotonic() - t0
    return result


def consistency_check(network: Network) -> bool:
    """Built-network parameter count must equal the analyzer's count."""
    return network.param_count == count_complexity(network.plan).total_params
