"""Synthetic multilabel shapes corpus and on-disk dataset loading.

The shapes corpus is the desk-scale stand-in for a large photo corpus: eight
geometric classes drawn in random colors, sizes, and positions, one to three
per image, with the label set listing the classes present. Missing-label
noise is simulated by independently deleting positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import ArrayDataset

SHAPE_CLASSES = ("disk", "ring", "square", "triangle", "plus", "cross", "stripes", "diamond")


def _shape_mask(kind: str, h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "square":
        return (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    if kind == "triangle":
        return (dy >= -r) & (dy <= r * 0.8) & (np.abs(dx) <= (dy + r) * 0.55)
    if kind == "plus":
        return ((np.abs(dx) <= r / 3) & (np.abs(dy) <= r)) | ((np.abs(dy) <= r / 3) & (np.abs(dx) <= r))
    if kind == "cross":
        u = (dx + dy) / np.sqrt(2)
        v = (dx - dy) / np.sqrt(2)
        return ((np.abs(u) <= r / 3) & (np.abs(v) <= r)) | ((np.abs(v) <= r / 3) & (np.abs(u) <= r))
    if kind == "stripes":
        inside = (np.abs(dy) <= r * 0.9) & (np.abs(dx) <= r * 0.9)
        return inside & ((np.floor(dy / 4.0).astype(int) % 2) == 0)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    raise ValueError(f"unknown shape {kind}")


def render_shapes_image(classes, rng: np.random.Generator, size: int = 74) -> np.ndarray:
    """One float32 RGB image at the augmentation base size.

    Each shape lands in its own quadrant (with jitter) so shapes never bury
    one another; labels therefore reflect what is visible.
    """
    img = rng.uniform(0.0, 0.2, size=(size, size, 3)).astype(np.float32)
    quadrants = rng.permutation(4)[: len(classes)]
    for cls, quad in zip(classes, quadrants):
        r = rng.uniform(11.0, 16.0)
        qy, qx = divmod(int(quad), 2)
        cy = size * 0.25 + qy * size * 0.5 + rng.uniform(-3, 3)
        cx = size * 0.25 + qx * size * 0.5 + rng.uniform(-3, 3)
        color = rng.uniform(0.6, 1.0, size=3).astype(np.float32)
        mask = _shape_mask(SHAPE_CLASSES[cls], size, size, cy, cx, r)
        img[mask] = color
    return img


def make_shapes_corpus(n: int, seed: int, size: int = 74,
                       drop_label_rate: float = 0.0) -> ArrayDataset:
    """Generate n images; each holds 1-3 distinct shape classes.

    drop_label_rate independently deletes each positive from the *label set
    only* (the shapes stay in the pixels), modeling missing-label noise.
    """
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng((seed, 1))  # images identical across drop rates
    images = np.empty((n, size, size, 3), dtype=np.float32)
    labels: list[frozenset[int]] = []
    for i in range(n):
        count = rng.choice([1, 2, 3], p=[0.5, 0.3, 0.2])
        classes = rng.choice(len(SHAPE_CLASSES), size=count, replace=False)
        images[i] = render_shapes_image(classes, rng, size)
        kept = [int(c) for c in classes if drop_label_rate == 0.0 or drop_rng.random() >= drop_label_rate]
        labels.append(frozenset(kept))
    return ArrayDataset(images, labels)


# ---------------------------------------------------------------------------
# On-disk layout: an .npz of images keyed by photo id plus a labels TSV of
# "photo_id<TAB>tag,tag,..." lines.

def save_dataset(dir_path, dataset: ArrayDataset, vocab: list[str], prefix: str = "img"):
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    ids = [f"{prefix}{i:06d}" for i in range(len(dataset))]
    np.savez_compressed(dir_path / "images.npz", **{pid: dataset.images[i] for i, pid in enumerate(ids)})
    with open(dir_path / "labels.tsv", "w", encoding="utf-8") as f:
        for i, pid in enumerate(ids):
            tags = ",".join(vocab[j] for j in sorted(dataset.labels[i]))
            f.write(f"{pid}\t{tags}\n")
    with open(dir_path / "vocab.txt", "w", encoding="utf-8") as f:
        f.writelines(t + "\n" for t in vocab)


def load_dataset(dir_path) -> tuple[ArrayDataset, list[str], list[str]]:
    """Returns (dataset, vocab, photo_ids); label order follows the TSV."""
    dir_path = Path(dir_path)
    vocab = [l.strip() for l in open(dir_path / "vocab.txt", encoding="utf-8") if l.strip()]
    index = {t: i for i, t in enumerate(vocab)}
    with np.load(dir_path / "images.npz") as z:
        rows = []
        ids = []
        labels = []
        with open(dir_path / "labels.tsv", encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                pid, _, tag_field = line.partition("\t")
                ids.append(pid)
                rows.append(z[pid])
                tags = [t for t in tag_field.split(",") if t]
                labels.append(frozenset(index[t] for t in tags))
    return ArrayDataset(np.stack(rows), labels), vocab, ids
