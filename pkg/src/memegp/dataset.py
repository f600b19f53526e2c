"""Dataset handling: portable graymap loading, seeded stratified splits, and
a synthetic separable dataset for desk-scale experiments.

On-disk layout is two class subdirectories of ``.pgm`` files (binary P5 or
ASCII P2); class labels 0/1 follow the lexicographic order of the directory
names. Pixels are normalized to [0, 1] by the file's declared maximum value.
Images within one dataset may have different dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClassError, FormatError, TooFewItemsError
from .util import round_half_up


@dataclass
class LabeledDataset:
    items: list[tuple[np.ndarray, int]]
    name: str
    class_names: tuple[str, str]


@dataclass(frozen=True)
class SplitSpec:
    shuffle_seed: int = 0
    train_fraction: float = 0.5
    stratified: bool = True


def _read_header_tokens(data: bytes, path, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers after the magic number,
    skipping '#' comments. Returns the values and the offset one whitespace
    byte past the last one (start of a P5 raster)."""
    values: list[int] = []
    i = 2  # past the magic
    n = len(data)
    while len(values) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        token = data[i:j]
        if not token.isdigit():
            raise FormatError(f"{path}: bad header token {token!r}")
        values.append(int(token))
        i = j
    if i >= n:
        raise FormatError(f"{path}: truncated header")
    return values, i + 1  # skip the single whitespace after maxval


def load_pgm(path) -> tuple[np.ndarray, int]:
    """Load one graymap as a float64 array in [0, 1]; also returns the
    file's declared maximum value (its bit depth)."""
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 graymap (magic {magic!r})")
    (width, height, maxval), offset = _read_header_tokens(data, path, 3)
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise FormatError(f"{path}: bad dimensions or maxval")
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else np.uint8
        count = width * height
        try:
            raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        except ValueError:
            raise FormatError(f"{path}: truncated raster") from None
    else:
        try:
            raster = np.array(data[offset - 1 :].split(), dtype=np.int64)
        except ValueError:
            raise FormatError(f"{path}: non-numeric ASCII raster") from None
        if raster.size != width * height:
            raise FormatError(f"{path}: expected {width * height} samples, got {raster.size}")
    if raster.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds declared maxval")
    img = raster.astype(np.float64).reshape(height, width) / maxval
    return img, maxval


def save_pgm(path, img: np.ndarray):
    """Write a [0, 1] image as an 8-bit binary graymap."""
    path = Path(path)
    quantized = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + quantized.tobytes())


def load_dir(path) -> LabeledDataset:
    """Load a two-class dataset from ``<path>/<class0>/*.pgm`` and
    ``<path>/<class1>/*.pgm`` (classes in lexicographic directory order)."""
    root = Path(path)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) != 2:
        raise EmptyClassError(
            f"{root}: expected exactly two class subdirectories, found {len(class_dirs)}"
        )
    items: list[tuple[np.ndarray, int]] = []
    seen_maxval = None
    for label, class_dir in enumerate(class_dirs):
        files = sorted(class_dir.glob("*.pgm"))
        if not files:
            raise EmptyClassError(f"{class_dir}: no .pgm images")
        for f in files:
            img, maxval = load_pgm(f)
            if seen_maxval is None:
                seen_maxval = maxval
            elif maxval != seen_maxval:
                raise FormatError(f"{f}: bit depth {maxval} differs from {seen_maxval}")
            items.append((img, label))
    return LabeledDataset(items, root.name, (class_dirs[0].name, class_dirs[1].name))


def save_dir(ds: LabeledDataset, path):
    """Write a dataset in the directory layout that ``load_dir`` reads."""
    root = Path(path)
    counters = [0, 0]
    for img, label in ds.items:
        class_dir = root / ds.class_names[label]
        class_dir.mkdir(parents=True, exist_ok=True)
        save_pgm(class_dir / f"{counters[label]:04d}.pgm", img)
        counters[label] += 1


def split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle, then a (by default stratified) train/test cut.

    The same spec always produces the same membership. Raises
    TooFewItemsError when a class would land empty on either side.
    """
    rng = np.random.default_rng(spec.shuffle_seed)
    order = rng.permutation(len(ds.items))
    shuffled = [ds.items[i] for i in order]
    train_idx: list[int] = []
    test_idx: list[int] = []
    if spec.stratified:
        for label in (0, 1):
            members = [i for i, item in enumerate(shuffled) if item[1] == label]
            k = round_half_up(spec.train_fraction * len(members))
            if k == 0 or k == len(members):
                raise TooFewItemsError(
                    f"class {label}: {len(members)} items cannot split at {spec.train_fraction}"
                )
            train_idx += members[:k]
            test_idx += members[k:]
        train_idx.sort()
        test_idx.sort()
    else:
        k = round_half_up(spec.train_fraction * len(shuffled))
        train_idx = list(range(k))
        test_idx = list(range(k, len(shuffled)))
        for side, name in ((train_idx, "train"), (test_idx, "test")):
            labels = {shuffled[i][1] for i in side}
            if labels != {0, 1}:
                raise TooFewItemsError(f"{name} side is missing a class")
    train = LabeledDataset([shuffled[i] for i in train_idx], f"{ds.name}/train", ds.class_names)
    test = LabeledDataset([shuffled[i] for i in test_idx], f"{ds.name}/test", ds.class_names)
    return train, test


def synth_bright_quadrant(n_per_class: int, side: int, noise: float, rng) -> LabeledDataset:
    """Synthetic separable task: class 0 has a bright top-left quadrant.

    Class 0 images are 0.2 everywhere except a 0.9 top-left quadrant; class
    1 images are 0.2 everywhere. Uniform noise in [-noise, +noise] is added
    and pixels are clipped to [0, 1]. The mean over the top-left quadrant
    separates the classes by construction.
    """
    if side < 8:
        raise ValueError("side must be at least 8")
    if not (0.0 <= noise < 0.3):
        raise ValueError("noise must lie in [0, 0.3)")
    q = side // 2
    items: list[tuple[np.ndarray, int]] = []
    for label in (0, 1):
        for _ in range(n_per_class):
            img = np.full((side, side), 0.2)
            if label == 0:
                img[:q, :q] = 0.9
            img += rng.uniform(-noise, noise, (side, side))
            np.clip(img, 0.0, 1.0, out=img)
            items.append((img, label))
    return LabeledDataset(items, "bright-quadrant", ("class0", "class1"))
