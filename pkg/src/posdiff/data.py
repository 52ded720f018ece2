"""Deterministic desk-scale datasets: procedural images, token sequences, image folders."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

KINDS = ("procedural-image", "image-dir", "synthetic-sequence")
SPLITS = ("train", "val", "test")
MIN_IMAGE_SIZE = 64


@dataclass
class DatasetSpec:
    kind: str = "procedural-image"
    count: int = 2000
    splits: tuple = (0.8, 0.1, 0.1)
    seed: int = 0
    image_size: int = 96
    puzzle_sizes: tuple = (3, 4)
    k_min: int = 3
    k_max: int = 8
    vocab: int = 512
    tokens_per_element: int = 4
    source_dir: Optional[str] = None

    def __post_init__(self):
        self.splits = tuple(float(s) for s in self.splits)
        self.puzzle_sizes = tuple(int(n) for n in self.puzzle_sizes)
        if self.kind not in KINDS:
            raise ValueError(f"dataset kind must be one of {KINDS}, got {self.kind!r}")
        if len(self.splits) != 3 or min(self.splits) < 0 or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {self.splits}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.kind == "image-dir" and not self.source_dir:
            raise ValueError("image-dir datasets need source_dir")
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError(f"need 2 <= k_min <= k_max, got {self.k_min}, {self.k_max}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = list(self.splits)
        d["puzzle_sizes"] = list(self.puzzle_sizes)
        return d


@dataclass
class Entry:
    id: str
    split: str
    seed: int
    params: dict = field(default_factory=dict)


@dataclass
class Dataset:
    spec: DatasetSpec
    entries: list
    items: dict  # id -> uint8 image (H, W, 3) or list of token arrays

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "entries": [asdict(e) for e in self.entries],
        }


def item_seed(seed: int, index: int) -> int:
    """Per-item seed derived from the dataset seed; independent of generation order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def assign_splits(count: int, fractions, seed: int) -> list:
    """Split label for each index; sizes are rounded, the remainder goes to test."""
    n_train = int(round(fractions[0] * count))
    n_val = min(int(round(fractions[1] * count)), count - n_train)
    labels = np.array(["test"] * count, dtype=object)
    order = np.random.default_rng([seed, 7919]).permutation(count)
    labels[order[:n_train]] = "train"
    labels[order[n_train:n_train + n_val]] = "val"
    return labels.tolist()


def gen_procedural_image(seed: int, size: int = 96) -> np.ndarray:
    """RGB uint8 image: a tilted global colour ramp overlaid with random shapes.

    The ramp direction stays within +/-30 degrees of a fixed orientation, so
    every image shares a coarse layout (like aligned faces) while the shapes
    and stripes make individual patches distinguishable.
    """
    if size < MIN_IMAGE_SIZE:
        raise ValueError(f"procedural images need size >= {MIN_IMAGE_SIZE}, got {size}")
    rng = np.random.default_rng(seed)
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    v, u = np.meshgrid(coords, coords, indexing="ij")  # u: x (columns), v: y (rows)

    theta = rng.uniform(-np.pi / 6, np.pi / 6)
    along = u * np.cos(theta) + v * np.sin(theta)
    across = -u * np.sin(theta) + v * np.cos(theta)
    diag = (along + across) / np.sqrt(2.0)
    img = np.empty((size, size, 3))
    for c, ramp in enumerate((along, across, diag)):
        img[..., c] = 0.5 + rng.uniform(0.18, 0.3) * ramp + rng.uniform(-0.08, 0.08)

    freq = rng.uniform(3, 9)
    phase = rng.uniform(0, 2 * np.pi)
    stripe_dir = rng.uniform(0, np.pi)
    stripes = np.sin(freq * np.pi * (u * np.cos(stripe_dir) + v * np.sin(stripe_dir)) + phase)
    img += 0.05 * stripes[..., None] * rng.uniform(-1, 1, size=3)

    rows, cols = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(8, 15)):
        cy, cx = rng.uniform(0, size, size=2)
        radius = rng.uniform(0.05, 0.16) * size
        if rng.random() < 0.5:
            inside = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2
        else:
            inside = (np.abs(rows - cy) <= radius) & (np.abs(cols - cx) <= radius * rng.uniform(0.4, 1.0))
        color = rng.uniform(0, 1, size=3)
        alpha = rng.uniform(0.3, 0.6)
        img[inside] = (1 - alpha) * img[inside] + alpha * color

    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def gen_synthetic_sequence(seed: int, K: int, vocab: int = 512, tokens_per_element: int = 4) -> list:
    """``K`` token arrays in true order, chained by shared link tokens.

    Element ``i`` starts with link ``i`` and ends with link ``i + 1``; the
    links are distinct and drawn in increasing id order from ``[K, vocab/2)``,
    fillers from the upper half. No token id below ``K`` ever appears, so no
    element carries an index token; its rank follows only from comparing its
    links with the other elements' (shared links, smaller ids first).
    """
    if K < 2:
        raise ValueError(f"sequences need K >= 2, got {K}")
    if tokens_per_element < 2:
        raise ValueError("elements need room for two link tokens")
    n_links = vocab // 2
    if n_links - K < K + 1 or vocab - n_links < 1:
        raise ValueError(f"vocabulary of {vocab} is too small for K={K}")
    rng = np.random.default_rng(seed)
    links = K + np.sort(rng.choice(n_links - K, size=K + 1, replace=False))
    fillers = rng.integers(n_links, vocab, size=(K, tokens_per_element - 2))
    return [
        np.concatenate([[links[i]], fillers[i], [links[i + 1]]]).astype(np.int64)
        for i in range(K)
    ]


def chain_order(elements) -> list:
    """Recover the true order by following the link tokens (generator-side oracle)."""
    heads = {int(e[0]): i for i, e in enumerate(elements)}
    tails = {int(e[-1]) for e in elements}
    start = [i for i, e in enumerate(elements) if int(e[0]) not in tails]
    if len(start) != 1:
        raise ValueError("elements do not form a single chain")
    order = [start[0]]
    while len(order) < len(elements):
        nxt = heads.get(int(elements[order[-1]][-1]))
        if nxt is None:
            raise ValueError("chain is broken")
        order.append(nxt)
    return order


def _entries(spec: DatasetSpec, count: int, params_fn) -> list:
    labels = assign_splits(count, spec.splits, spec.seed)
    return [
        Entry(id=f"{i:06d}", split=labels[i], seed=item_seed(spec.seed, i), params=params_fn(i))
        for i in range(count)
    ]


def generate(spec: DatasetSpec) -> Dataset:
    """Build the dataset described by ``spec`` entirely in memory."""
    if spec.kind == "image-dir":
        return load_image_dir(spec.source_dir, spec)
    if spec.kind == "procedural-image":
        entries = _entries(spec, spec.count, lambda i: {"size": spec.image_size})
        items = {e.id: gen_procedural_image(e.seed, spec.image_size) for e in entries}
        return Dataset(spec, entries, items)

    def seq_params(i):
        K = int(np.random.default_rng([spec.seed, i, 1]).integers(spec.k_min, spec.k_max + 1))
        return {"K": K, "vocab": spec.vocab, "tokens_per_element": spec.tokens_per_element}

    entries = _entries(spec, spec.count, seq_params)
    items = {
        e.id: gen_synthetic_sequence(e.seed, e.params["K"], spec.vocab, spec.tokens_per_element)
        for e in entries
    }
    return Dataset(spec, entries, items)


def center_crop_box(width: int, height: int) -> tuple:
    """(left, top, right, bottom) of the largest centred square."""
    side = min(width, height)
    left = (width - side) // 2
    top = (height - side) // 2
    return left, top, left + side, top + side


def load_image_dir(path, spec: Optional[DatasetSpec] = None) -> Dataset:
    """Read every PNG under ``path`` in name order, centre-cropped to a square."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png") if path.is_dir() else []
    images = {}
    for p in files:
        try:
            with Image.open(p) as im:
                im = im.convert("RGB")
                im = im.crop(center_crop_box(*im.size))
                if spec is not None and spec.image_size:
                    if min(im.size) < spec.image_size:
                        raise ValueError(f"{im.size[0]}px is below the requested {spec.image_size}px")
                    if im.size[0] != spec.image_size:
                        im = im.resize((spec.image_size, spec.image_size), Image.BILINEAR)
                images[p.stem] = np.asarray(im, dtype=np.uint8).copy()
        except Exception as exc:  # noqa: BLE001 - any decoding failure skips the file
            logger.warning("skipping unreadable image %s: %s", p, exc)
    if not images:
        raise ValueError(f"no readable PNG images in {path}")

    if spec is None:
        spec = DatasetSpec(kind="image-dir", count=len(images), source_dir=str(path), image_size=0)
    ids = list(images)
    labels = assign_splits(len(ids), spec.splits, spec.seed)
    entries = [Entry(id=i, split=labels[k], seed=item_seed(spec.seed, k), params={}) for k, i in enumerate(ids)]
    return Dataset(spec, entries, images)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write ``manifest.json`` plus PNG images or ``sequences.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset.spec.kind == "synthetic-sequence":
        with open(out / "sequences.jsonl", "w") as fh:
            for e in dataset.entries:
                elements = [[int(t) for t in el] for el in dataset.items[e.id]]
                fh.write(json.dumps({"id": e.id, "elements": elements}) + "\n")
    else:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for e in dataset.entries:
            Image.fromarray(dataset.items[e.id]).save(img_dir / f"{e.id}.png")
    (out / "manifest.json").write_text(json.dumps(dataset.manifest(), indent=2, sort_keys=True) + "\n")
    return out


def read_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {path}")
    manifest = json.loads(manifest_path.read_text())
    spec_d = dict(manifest["spec"])
    spec = DatasetSpec(**spec_d)
    entries = [Entry(**e) for e in manifest["entries"]]
    items = {}
    if spec.kind == "synthetic-sequence":
        with open(path / "sequences.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                items[rec["id"]] = [np.asarray(el, dtype=np.int64) for el in rec["elements"]]
    else:
        for e in entries:
            with Image.open(path / "images" / f"{e.id}.png") as im:
                items[e.id] = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    missing = [e.id for e in entries if e.id not in items]
    if missing:
        raise ValueError(f"dataset is missing {len(missing)} items, e.g. {missing[0]}")
    return Dataset(spec, entries, items)
