"""Bi-temporal image pairs: manifest loading, synthetic generation, batching.

Disk layout (mirrored by the synthetic generator):

    <root>/A/<id>.png        first-date image, 8-bit RGB
    <root>/B/<id>.png        second-date image, 8-bit RGB
    <root>/label/<id>.png    single-channel 8-bit mask, raw class indices
    <root>/manifest.json     {"num_classes": N, "class_names": [...],
                              "splits": {"train": [...], "val": [...], "test": [...]}}

Class 0 is the unchanged background; change classes are 1..N.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidArg, LabelOutOfRange, MissingFile, ShapeMismatch

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")


@dataclass
class ImagePair:
    image_t1: np.ndarray          # (H, W, 3) float32 in [0, 1]
    image_t2: np.ndarray
    mask: np.ndarray | None       # (H, W) int64, values 0..N
    sample_id: str


@dataclass
class DatasetManifest:
    root: Path
    split: str
    num_classes: int
    class_names: list
    entries: list
    labeled: bool

    def paths(self, sample_id):
        a = self.root / "A" / f"{sample_id}.png"
        b = self.root / "B" / f"{sample_id}.png"
        label = self.root / "label" / f"{sample_id}.png" if self.labeled else None
        return a, b, label

    def __len__(self):
        return len(self.entries)


@dataclass
class Batch:
    t1: torch.Tensor              # (B, 3, H, W) float32
    t2: torch.Tensor
    masks: torch.Tensor | None    # (B, H, W) int64
    sample_ids: list


def write_manifest(root, num_classes, class_names, splits):
    payload = {
        "num_classes": int(num_classes),
        "class_names": list(class_names),
        "splits": {k: list(v) for k, v in splits.items()},
    }
    with open(Path(root) / MANIFEST_NAME, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _png_size(path):
    with Image.open(path) as im:
        return im.size  # (W, H)


def load_manifest(root, split, require_labels=None):
    """Read and validate the manifest for one split.

    Labels are required for train/val; the test split is treated as labeled
    only when label files exist (override with ``require_labels``).
    """
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingFile(str(manifest_path))
    with open(manifest_path) as fh:
        payload = json.load(fh)

    if split not in payload.get("splits", {}):
        raise InvalidArg(f"split {split!r} not present in manifest")
    num_classes = int(payload["num_classes"])
    class_names = list(payload["class_names"])
    if num_classes < 1:
        raise InvalidArg("num_classes must be >= 1")
    if len(class_names) != num_classes:
        raise InvalidArg("class_names length must equal num_classes")
    entries = [str(e) for e in payload["splits"][split]]

    if require_labels is None:
        if split == "test":
            require_labels = bool(entries) and (root / "label" / f"{entries[0]}.png").is_file()
        else:
            require_labels = True

    for sid in entries:
        a = root / "A" / f"{sid}.png"
        b = root / "B" / f"{sid}.png"
        for p in (a, b):
            if not p.is_file():
                raise MissingFile(f"{sid}: {p}")
        if _png_size(a) != _png_size(b):
            raise ShapeMismatch(f"{sid}: A is {_png_size(a)}, B is {_png_size(b)}")
        if require_labels:
            lab = root / "label" / f"{sid}.png"
            if not lab.is_file():
                raise MissingFile(f"{sid}: {lab}")
            if _png_size(lab) != _png_size(a):
                raise ShapeMismatch(f"{sid}: label is {_png_size(lab)}, image is {_png_size(a)}")
            mask = np.asarray(Image.open(lab))
            if mask.size and int(mask.max()) > num_classes:
                raise LabelOutOfRange(
                    f"{sid}: mask holds value {int(mask.max())} > {num_classes}"
                )

    return DatasetManifest(root=root, split=split, num_classes=num_classes,
                           class_names=class_names, entries=entries,
                           labeled=require_labels)


def load_pair(manifest: DatasetManifest, sample_id) -> ImagePair:
    a, b, label = manifest.paths(sample_id)
    t1 = np.asarray(Image.open(a).convert("RGB"), dtype=np.float32) / 255.0
    t2 = np.asarray(Image.open(b).convert("RGB"), dtype=np.float32) / 255.0
    mask = None
    if label is not None:
        mask = np.asarray(Image.open(label), dtype=np.int64)
    return ImagePair(image_t1=t1, image_t2=t2, mask=mask, sample_id=sample_id)


# --- augmentation ------------------------------------------------------------

def apply_dihedral(arr, code):
    """Apply one of the 8 flip/right-angle-rotation transforms to (H,W,...) data."""
    if code >= 4:
        arr = arr[:, ::-1]
    arr = np.rot90(arr, k=code % 4, axes=(0, 1))
    return np.ascontiguousarray(arr)


def _augment_pair(pair: ImagePair, code) -> ImagePair:
    mask = apply_dihedral(pair.mask, code) if pair.mask is not None else None
    return ImagePair(
        image_t1=apply_dihedral(pair.image_t1, code),
        image_t2=apply_dihedral(pair.image_t2, code),
        mask=mask,
        sample_id=pair.sample_id,
    )


def make_batches(manifest: DatasetManifest, batch_size, augment=False, seed=0,
                 shuffle=None, mean=None, std=None):
    """Yield Batch objects for one pass over a split.

    Identical arguments produce a byte-identical stream: sample order and the
    per-sample augmentation draws both derive from ``seed`` alone. One dihedral
    transform is applied jointly to t1, t2 and the mask. ``mean``/``std`` are
    per-channel standardization constants applied after the [0, 1] scaling.
    """
    if batch_size < 1:
        raise InvalidArg("batch_size must be >= 1")
    if shuffle is None:
        shuffle = augment
    rng = np.random.default_rng(seed)
    order = np.arange(len(manifest.entries))
    if shuffle:
        order = rng.permutation(order)

    mean_arr = None if mean is None else np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
    std_arr = None if std is None else np.asarray(std, dtype=np.float32).reshape(3, 1, 1)

    for start in range(0, len(order), batch_size):
        chunk = [manifest.entries[i] for i in order[start:start + batch_size]]
        t1s, t2s, masks = [], [], []
        for sid in chunk:
            pair = load_pair(manifest, sid)
            if augment:
                pair = _augment_pair(pair, int(rng.integers(8)))
            t1s.append(pair.image_t1.transpose(2, 0, 1))
            t2s.append(pair.image_t2.transpose(2, 0, 1))
            if pair.mask is not None:
                masks.append(pair.mask)
        t1 = np.stack(t1s)
        t2 = np.stack(t2s)
        if mean_arr is not None:
            t1 = (t1 - mean_arr) / std_arr
            t2 = (t2 - mean_arr) / std_arr
        yield Batch(
            t1=torch.from_numpy(t1),
            t2=torch.from_numpy(t2),
            masks=torch.from_numpy(np.stack(masks)) if masks else None,
            sample_ids=chunk,
        )


# --- synthetic dataset -------------------------------------------------------

_PALETTE = [
    (0.85, 0.20, 0.20),
    (0.20, 0.75, 0.25),
    (0.20, 0.35, 0.90),
    (0.92, 0.80, 0.15),
    (0.75, 0.20, 0.80),
    (0.10, 0.80, 0.80),
    (0.95, 0.55, 0.10),
    (0.55, 0.35, 0.15),
]


def _smooth_background(rng, size):
    coarse = rng.uniform(0.25, 0.75, size=(8, 8, 3))
    img = Image.fromarray(np.round(coarse * 255).astype(np.uint8), "RGB")
    img = img.resize((size, size), Image.BILINEAR)
    field = np.asarray(img, dtype=np.float64) / 255.0
    field += rng.normal(0.0, 0.02, size=field.shape)
    return np.clip(field, 0.0, 1.0)


def _class_texture(cls, size, rng):
    base = np.array(_PALETTE[(cls - 1) % len(_PALETTE)])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    # stripe orientation and frequency vary by class so classes stay separable
    phase = (yy if cls % 2 else xx) + (cls % 3) * (yy + xx) / 2.0
    stripes = 0.10 * np.sin(2.0 * np.pi * phase * (cls + 2) / size)
    tex = base[None, None, :] + stripes[:, :, None]
    tex += rng.normal(0.0, 0.03, size=tex.shape)
    return np.clip(tex, 0.0, 1.0)


def _random_region(rng, size):
    hh = int(size * rng.uniform(0.15, 0.32))
    ww = int(size * rng.uniform(0.15, 0.32))
    hh, ww = max(hh, 2), max(ww, 2)
    y0 = int(rng.integers(0, size - hh + 1))
    x0 = int(rng.integers(0, size - ww + 1))
    region = np.zeros((size, size), dtype=bool)
    if rng.integers(2) == 0:
        region[y0:y0 + hh, x0:x0 + ww] = True
    else:
        cy, cx = y0 + hh / 2.0, x0 + ww / 2.0
        yy, xx = np.mgrid[0:size, 0:size]
        region = ((yy - cy) / (hh / 2.0)) ** 2 + ((xx - cx) / (ww / 2.0)) ** 2 <= 1.0
    return region


def _to_png_bytes(float_img):
    return np.round(np.clip(float_img, 0.0, 1.0) * 255.0).astype(np.uint8)


def synth_dataset(root, seed, count, size, num_classes, class_names=None) -> DatasetManifest:
    """Write a deterministic synthetic dataset and return its train manifest.

    The second-date image equals the first except inside randomly placed
    rectangles and ellipses, each filled with a class-specific texture and
    labeled accordingly. Identical arguments give byte-identical files. The
    generated samples are listed under all three splits (these sets exist for
    smoke tests, not for measuring generalization).
    """
    if count < 1:
        raise InvalidArg("count must be >= 1")
    if size < 8:
        raise InvalidArg("size must be >= 8")
    if num_classes < 1:
        raise InvalidArg("num_classes must be >= 1")
    if class_names is None:
        class_names = [f"change_{c}" for c in range(1, num_classes + 1)]
    if len(class_names) != num_classes:
        raise InvalidArg("class_names length must equal num_classes")

    root = Path(root)
    for sub in ("A", "B", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    ids = [f"s{i:04d}" for i in range(count)]
    for sid in ids:
        t1 = _smooth_background(rng, size)
        t2 = t1.copy()
        mask = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 4))):
            cls = int(rng.integers(1, num_classes + 1))
            region = _random_region(rng, size)
            texture = _class_texture(cls, size, rng)
            t2[region] = texture[region]
            mask[region] = cls
        Image.fromarray(_to_png_bytes(t1), "RGB").save(root / "A" / f"{sid}.png")
        Image.fromarray(_to_png_bytes(t2), "RGB").save(root / "B" / f"{sid}.png")
        Image.fromarray(mask, "L").save(root / "label" / f"{sid}.png")

    write_manifest(root, num_classes, class_names,
                   {"train": ids, "val": ids, "test": ids})
    return load_manifest(root, "train")
