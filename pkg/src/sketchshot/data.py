"""Two-domain labelled image data: synthetic generator, directory loader,
class splits, and episode sampling.

The synthetic generator renders one parameterised shape family per class.
The photo domain fills the shape with a random colour over a textured
background; the sketch domain draws only its jittered outline on white.
Both domains share the class's latent geometry, so cross-domain transfer
is learnable while the rendering styles stay far apart.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .tensor import Array, as_f64

SUPERSAMPLE = 4


class Domain(str, Enum):
    photo = "photo"
    sketch = "sketch"


@dataclass(frozen=True)
class Item:
    image: Array            # (H, W, 3) float64 in [0, 1]
    label: int
    domain: Domain


class Dataset:
    """Immutable collection of labelled two-domain items."""

    def __init__(self, items: list[Item], class_names: list[str], image_shape):
        self.items: tuple[Item, ...] = tuple(items)
        self.class_names: tuple[str, ...] = tuple(class_names)
        self.image_shape = tuple(image_shape)
        index: dict[tuple[int, Domain], list[int]] = {}
        for i, it in enumerate(self.items):
            if not (0 <= it.label < len(self.class_names)):
                raise ValueError(f"item {i} has label {it.label} outside the registry")
            if it.image.shape != self.image_shape:
                raise ValueError(f"item {i} has shape {it.image.shape}, expected {self.image_shape}")
            index.setdefault((it.label, it.domain), []).append(i)
        self._index = {k: tuple(v) for k, v in index.items()}

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def indices_of(self, label: int, domain: Domain) -> tuple[int, ...]:
        return self._index.get((label, domain), ())

    def photo_empty_classes(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.num_classes)
                     if not self.indices_of(c, Domain.photo))


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 20
    per_class_per_domain: int = 80
    image_size: int = 32
    seed: int = 0
    # photo-domain nuisance strength in [0, 1]: background clutter, fill
    # texture, sensor noise; 0 renders clean, easily separable photos
    photo_clutter: float = 1.0


def parse_synthetic_config(path) -> SyntheticSpec:
    """Read a key=value config file into a SyntheticSpec."""
    fields = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        fields[key] = float(value) if key == "photo_clutter" else int(value)
    allowed = {"classes", "per_class_per_domain", "image_size", "seed", "photo_clutter"}
    unknown = set(fields) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return SyntheticSpec(**fields)


KINDS = ("polygon", "star", "burst")
INNER_RATIO = {"star": 0.45, "burst": 0.15}


def _family_params(idx: int) -> dict:
    kind = KINDS[idx % len(KINDS)]
    vertices = 3 + idx // len(KINDS)
    aspect = 0.65 + 0.5 * (((idx * 7919) % 97) / 96.0)
    base_angle = 2.0 * np.pi * (((idx * 104729) % 89) / 89.0)
    return {"kind": kind, "vertices": vertices, "aspect": aspect,
            "base_angle": base_angle, "name": f"{kind}-{vertices:02d}"}


def _shape_points(fam: dict, rng: np.random.Generator, size: int,
                  wobble: float) -> np.ndarray:
    k = fam["vertices"]
    angle = fam["base_angle"] + rng.uniform(-0.35, 0.35)
    radius = 0.38 * size * rng.uniform(0.80, 1.10)
    cx = size / 2.0 + rng.uniform(-0.08, 0.08) * size
    cy = size / 2.0 + rng.uniform(-0.08, 0.08) * size
    if fam["kind"] in INNER_RATIO:
        n = 2 * k
        radii = np.where(np.arange(n) % 2 == 0, radius, INNER_RATIO[fam["kind"]] * radius)
    else:
        n = k
        radii = np.full(n, radius)
    radii = radii * (1.0 + rng.uniform(-wobble, wobble, size=n))
    theta = angle + 2.0 * np.pi * np.arange(n) / n
    xs = cx + radii * np.cos(theta)
    ys = cy + radii * np.sin(theta) * fam["aspect"]
    return np.stack([xs, ys], axis=1)


def _alpha_from_polygon(points: np.ndarray, size: int, outline_only: bool,
                        width: float = 0.0) -> np.ndarray:
    """Anti-aliased coverage mask via supersampled PIL rasterisation."""
    s = SUPERSAMPLE
    canvas = Image.new("L", (size * s, size * s), 0)
    draw = ImageDraw.Draw(canvas)
    pts = [(float(x * s), float(y * s)) for x, y in points]
    if outline_only:
        draw.line(pts + [pts[0]], fill=255, width=max(1, round(width * s)), joint="curve")
    else:
        draw.polygon(pts, fill=255)
    small = canvas.resize((size, size), Image.BILINEAR)
    return np.asarray(small, dtype=np.float64) / 255.0


def _render_photo(fam: dict, rng: np.random.Generator, size: int,
                  clutter: float = 1.0) -> Array:
    points = _shape_points(fam, rng, size, wobble=0.03)
    fill = _alpha_from_polygon(points, size, outline_only=False)[..., None]
    rim = _alpha_from_polygon(points, size, outline_only=True,
                              width=1.5 * size / 32.0)[..., None]
    # cluttered colour background: coarse blobs plus finer grain, so the
    # photo domain carries nuisance structure the sketch domain lacks
    lo = 0.95 - 0.50 * clutter
    coarse = rng.uniform(lo, 0.95, size=(max(2, size // 8), max(2, size // 8), 3))
    blobs = np.asarray(Image.fromarray((coarse * 255).astype(np.uint8)).resize(
        (size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    grain = rng.uniform(1.0 - 0.15 * clutter, 1.0 + 0.15 * clutter, size=(size, size, 1))
    bg = np.clip(blobs * grain, 0.0, 1.0)
    color = rng.uniform(0.10, 0.60, size=3)
    shade = rng.uniform(1.0 - 0.25 * clutter, 1.0 + 0.25 * clutter,
                        size=(size, size, 1))  # uneven fill texture
    img = bg * (1.0 - fill) + np.clip(color * shade, 0.0, 1.0) * fill
    img = img * (1.0 - 0.6 * rim)  # darker contour, as object boundaries have
    img += rng.normal(0.0, 0.02 * clutter, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _render_sketch(fam: dict, rng: np.random.Generator, size: int) -> Array:
    points = _shape_points(fam, rng, size, wobble=0.06)
    width = rng.uniform(1.2, 2.4) * size / 32.0
    alpha = _alpha_from_polygon(points, size, outline_only=True, width=width)[..., None]
    ink = rng.uniform(0.05, 0.30)
    img = np.ones((size, size, 3)) * (1.0 - alpha) + ink * alpha
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic two-domain dataset of rendered shape families."""
    if spec.classes < 10:
        raise ValueError("need at least 10 classes")
    if spec.per_class_per_domain < 30:
        raise ValueError("need at least 30 items per class per domain")
    if spec.image_size < 16:
        raise ValueError("image_size too small to render strokes (min 16)")

    families = [_family_params(i) for i in range(spec.classes)]
    # lexicographic name order defines label indices
    families.sort(key=lambda f: f["name"])
    class_names = [f["name"] for f in families]

    items: list[Item] = []
    for label, fam in enumerate(families):
        for domain_code, domain in ((0, Domain.photo), (1, Domain.sketch)):
            for j in range(spec.per_class_per_domain):
                rng = np.random.default_rng(
                    np.random.SeedSequence((spec.seed, label, domain_code, j)))
                if domain is Domain.photo:
                    img = _render_photo(fam, rng, spec.image_size,
                                        clutter=spec.photo_clutter)
                else:
                    img = _render_sketch(fam, rng, spec.image_size)
                items.append(Item(image=img, label=label, domain=domain))
    shape = (spec.image_size, spec.image_size, 3)
    return Dataset(items, class_names, shape)


def load_directory(path, image_size: int | None = None) -> Dataset:
    """Load root/{photo,sketch}/<class_name>/<files> into a Dataset.

    Class ids follow lexicographic directory-name order. A class present
    in only one domain is kept with a warning.
    """
    root = Path(path)
    names: set[str] = set()
    for domain in Domain:
        ddir = root / domain.value
        if ddir.is_dir():
            names.update(p.name for p in ddir.iterdir() if p.is_dir())
    if not names:
        raise ValueError(f"no classes found under {root}")
    class_names = sorted(names)

    items: list[Item] = []
    shape = None
    for label, name in enumerate(class_names):
        present = []
        for domain in Domain:
            cdir = root / domain.value / name
            files = sorted(p for p in cdir.iterdir() if p.is_file()) if cdir.is_dir() else []
            if files:
                present.append(domain)
            for f in files:
                try:
                    with Image.open(f) as im:
                        im = im.convert("RGB")
                        if image_size is not None:
                            im = im.resize((image_size, image_size), Image.BILINEAR)
                        arr = np.asarray(im, dtype=np.float64) / 255.0
                except (UnidentifiedImageError, OSError) as exc:
                    raise ValueError(f"unreadable image file: {f}") from exc
                if shape is None:
                    shape = arr.shape
                elif arr.shape != shape:
                    raise ValueError(f"image {f} has shape {arr.shape}, expected {shape}; "
                                     f"pass image_size= to resize on load")
                items.append(Item(image=arr, label=label, domain=domain))
        for domain in Domain:
            if domain not in present:
                warnings.warn(f"class '{name}' has no items in the {domain.value} domain")
    return Dataset(items, class_names, shape)


@dataclass(frozen=True)
class ClassSplit:
    base: tuple[int, ...]
    val: tuple[int, ...]
    novel: tuple[int, ...]
    # (class_id, domain) -> {"train"/"val"/"test": item indices} for base classes
    base_items: dict


def split_classes(dataset: Dataset, counts: dict, seed: int) -> ClassSplit:
    """Disjoint base/val/novel class split, plus a 60/20/20 item split
    inside every base class (per domain)."""
    need = counts["base"] + counts["val"] + counts["novel"]
    if need > dataset.num_classes:
        raise ValueError(f"requested {need} classes but dataset has {dataset.num_classes}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.num_classes)
    base = tuple(sorted(int(c) for c in perm[:counts["base"]]))
    val = tuple(sorted(int(c) for c in perm[counts["base"]:counts["base"] + counts["val"]]))
    novel = tuple(sorted(int(c) for c in perm[counts["base"] + counts["val"]:need]))

    base_items = {}
    for c in base:
        for domain in Domain:
            idx = np.array(dataset.indices_of(c, domain), dtype=np.intp)
            idx = idx[rng.permutation(idx.size)]
            n_train = int(0.6 * idx.size)
            n_val = int(0.2 * idx.size)
            base_items[(c, domain)] = {
                "train": tuple(int(i) for i in idx[:n_train]),
                "val": tuple(int(i) for i in idx[n_train:n_train + n_val]),
                "test": tuple(int(i) for i in idx[n_train + n_val:]),
            }
    return ClassSplit(base=base, val=val, novel=novel, base_items=base_items)


@dataclass(frozen=True)
class EpisodePool:
    """Classes eligible for episode sampling and the item indices each
    class may draw from, per domain."""
    classes: tuple[int, ...]
    items: dict  # (class_id, Domain) -> tuple of dataset indices


def novel_pool(dataset: Dataset, split: ClassSplit) -> EpisodePool:
    items = {(c, d): dataset.indices_of(c, d) for c in split.novel for d in Domain}
    return EpisodePool(split.novel, items)


def base_pool(dataset: Dataset, split: ClassSplit, part: str) -> EpisodePool:
    if part not in ("train", "val", "test"):
        raise ValueError(f"unknown base item part {part!r}")
    items = {(c, d): split.base_items[(c, d)][part] for c in split.base for d in Domain}
    return EpisodePool(split.base, items)


@dataclass(frozen=True)
class Episode:
    way_classes: tuple[int, ...]
    support_idx: tuple[int, ...]      # class-major, k per class
    query_idx: tuple[int, ...]        # class-major, q per class
    support: tuple[Item, ...]
    query: tuple[Item, ...]
    k_shot: int
    q_per_class: int

    def support_for(self, way: int) -> tuple[Item, ...]:
        k = self.k_shot
        return self.support[way * k:(way + 1) * k]


def sample_episode(dataset: Dataset, pool: EpisodePool, n_way: int, k_shot: int,
                   q_per_class: int, support_domain: str = "sketch",
                   seed: int | np.random.Generator = 0) -> Episode:
    """Sample an n-way episode: k support items per class, q photo queries
    per class, support and query disjoint by item identity."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n_way > len(pool.classes):
        raise ValueError(f"cannot sample {n_way} ways from {len(pool.classes)} classes")
    ways = tuple(int(c) for c in rng.choice(np.array(pool.classes), size=n_way, replace=False))

    support_idx: list[int] = []
    query_idx: list[int] = []
    for c in ways:
        if support_domain == "mixed":
            domains = [Domain.photo if rng.random() < 0.5 else Domain.sketch
                       for _ in range(k_shot)]
        elif support_domain in ("photo", "sketch"):
            domains = [Domain(support_domain)] * k_shot
        else:
            raise ValueError(f"unknown support domain {support_domain!r}")
        picked: list[int] = []
        for domain in (Domain.photo, Domain.sketch):
            want = sum(1 for d in domains if d is domain)
            if not want:
                continue
            avail = pool.items.get((c, domain), ())
            if len(avail) < want:
                raise ValueError(f"class {c} has only {len(avail)} {domain.value} items, "
                                 f"need {want} for support")
            picked.extend(int(i) for i in rng.choice(np.array(avail), size=want, replace=False))
        support_idx.extend(picked)

        q_avail = [i for i in pool.items.get((c, Domain.photo), ()) if i not in set(picked)]
        if len(q_avail) < q_per_class:
            raise ValueError(f"class {c} has only {len(q_avail)} photo items left for "
                             f"queries, need {q_per_class}")
        query_idx.extend(int(i) for i in rng.choice(np.array(q_avail), size=q_per_class,
                                                    replace=False))

    return Episode(
        way_classes=ways,
        support_idx=tuple(support_idx),
        query_idx=tuple(query_idx),
        support=tuple(dataset.items[i] for i in support_idx),
        query=tuple(dataset.items[i] for i in query_idx),
        k_shot=k_shot,
        q_per_class=q_per_class,
    )
