"""Synthetic datasets with known ground truth, PPM image I/O and the
CSV/JSON dataset manifest."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .models import AttributeSpec, encode_attributes

LABEL_COLUMNS = ("filename", "age_bin", "gender", "ethnicity")


class DatasetError(ValueError):
    pass


# ----------------------------------------------------------------- ring toy


def ring_centers(n_modes, radius):
    ang = 2 * math.pi * np.arange(n_modes) / n_modes
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)


def gen_ring_gaussians(n_modes=8, radius=2.0, sigma=0.05, n_samples=10000, seed=0):
    """Equal-weight Gaussian mixture with centres on a circle.

    Returns (points, mode index per point).
    """
    if n_modes < 2:
        raise ValueError("need at least two modes")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    modes = rng.integers(n_modes, size=n_samples)
    pts = ring_centers(n_modes, radius)[modes] + sigma * rng.standard_normal((n_samples, 2))
    return pts, modes


def mode_coverage(samples, centers, sigma, min_fraction=0.01, n_sigma=3.0):
    """Count modes receiving at least ``min_fraction`` of samples within n_sigma*sigma."""
    samples = np.asarray(samples, dtype=np.float64)
    dist = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=-1)
    hits = (dist <= n_sigma * sigma).sum(axis=0)
    covered = hits >= min_fraction * len(samples)
    return int(covered.sum()), hits


# -------------------------------------------------------------------- PPM I/O


def write_ppm(path, image):
    """Write an HxWx3 uint8 (or [0,1] float) image as binary P6 with maxval 255."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = to_uint8(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def _ppm_tokens(blob, count):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(blob) and chr(blob[pos]).isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not chr(blob[pos]).isspace():
            pos += 1
        if start == pos:
            raise DatasetError("truncated PPM header")
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_ppm(path):
    """Read a binary P6 PPM; returns HxWx3 uint8 (maxval 255) or uint16 data."""
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _ppm_tokens(blob, 4)
    if magic != b"P6":
        raise DatasetError(f"{path}: not a binary PPM")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * 3
    if len(blob) - pos < n * np.dtype(dtype).itemsize:
        raise DatasetError(f"{path}: truncated pixel data")
    data = np.frombuffer(blob, dtype=dtype, count=n, offset=pos)
    return data.reshape(h, w, 3), maxval


def load_image(path):
    img, maxval = read_ppm(path)
    return img.astype(np.float32) / np.float32(maxval)


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------- sprites

PALETTE = np.array(
    [[220, 40, 40], [40, 190, 60], [50, 80, 230], [235, 210, 40], [200, 60, 210]],
    dtype=np.uint8,
)
SHAPES = ("disc", "square")


@dataclass
class SpriteSpec:
    resolution: int = 32
    n_sizes: int = 10
    jitter: int = 0
    n_backgrounds: int = 1

    def __post_init__(self):
        if self.n_sizes < 1 or self.n_backgrounds < 1 or self.jitter < 0:
            raise ValueError("invalid sprite factor counts")
        if self.max_radius() - self.min_radius() < 0.5 * (self.n_sizes - 1):
            raise ValueError(f"resolution {self.resolution} too small for {self.n_sizes} sizes")

    def min_radius(self):
        return max(1.5, self.resolution / 16)

    def max_radius(self):
        return self.resolution / 2 - self.jitter - 1.5

    def radii(self):
        if self.n_sizes == 1:
            return np.array([self.min_radius()])
        return np.linspace(self.min_radius(), self.max_radius(), self.n_sizes)

    def backgrounds(self):
        return np.linspace(20, 110, self.n_backgrounds).round().astype(np.uint8)

    def offsets(self):
        return list(range(-self.jitter, self.jitter + 1))

    @property
    def template_count(self):
        return len(SHAPES) * len(PALETTE) * self.n_sizes * len(self.offsets()) ** 2 * self.n_backgrounds

    def factors(self, template):
        """Decode a template index into (shape, palette, size, dx, dy, background)."""
        dims = (len(SHAPES), len(PALETTE), self.n_sizes, len(self.offsets()), len(self.offsets()), self.n_backgrounds)
        return np.unravel_index(template, dims)

    def labels(self, template):
        shape, palette, size = self.factors(template)[:3]
        return {"age_bin": int(size), "gender": int(shape), "ethnicity": int(palette)}

    def attributes(self):
        return [
            AttributeSpec("gender", "categorical", len(SHAPES)),
            AttributeSpec("ethnicity", "categorical", len(PALETTE)),
            AttributeSpec("age_bin", "quantized", max(self.n_sizes, 2)),
        ]


def render_sprite(spec: SpriteSpec, template):
    shape, palette, size, dx, dy, bg = (int(v) for v in spec.factors(template))
    r = spec.resolution
    off = spec.offsets()
    cx = (r - 1) / 2 + off[dx]
    cy = (r - 1) / 2 + off[dy]
    rad = spec.radii()[size]
    v, u = np.mgrid[0:r, 0:r]
    if SHAPES[shape] == "disc":
        inside = (u - cx) ** 2 + (v - cy) ** 2 <= rad**2
    else:
        inside = (np.abs(u - cx) <= rad) & (np.abs(v - cy) <= rad)
    img = np.empty((r, r, 3), dtype=np.uint8)
    img[...] = spec.backgrounds()[bg]
    img[inside] = PALETTE[palette]
    return img


def render_templates(spec: SpriteSpec):
    return np.stack([render_sprite(spec, t) for t in range(spec.template_count)])


def template_min_distance(spec_or_images):
    """Smallest squared raw-pixel distance between two distinct templates ([0,1] scale)."""
    imgs = spec_or_images
    if isinstance(imgs, SpriteSpec):
        imgs = render_templates(imgs)
    flat = imgs.reshape(len(imgs), -1).astype(np.float64) / 255.0
    sq = (flat * flat).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2 * flat @ flat.T
    np.fill_diagonal(d, np.inf)
    return float(max(d.min(), 0.0))


# -------------------------------------------------------------------- manifest


@dataclass
class DatasetManifest:
    root: str
    image_dir: str = "images"
    labels_csv: str = "labels.csv"
    attributes: list = field(default_factory=list)
    count: int = 0
    resolution: int = 0
    templates_csv: str | None = None
    template_count: int | None = None

    def __post_init__(self):
        self.attributes = [a if isinstance(a, AttributeSpec) else AttributeSpec(**a) for a in self.attributes]

    @property
    def path(self):
        return Path(self.root)

    def save(self):
        doc = asdict(self)
        doc.pop("root")
        (self.path / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, root):
        root = Path(root)
        path = root / "manifest.json" if root.is_dir() else root
        if not path.exists():
            raise FileNotFoundError(f"no manifest at {path}")
        doc = json.loads(path.read_text())
        return cls(root=str(path.parent), **doc)


def gen_sprites(spec: SpriteSpec, n, seed, out_dir):
    """Write ``n`` sprites drawn uniformly over the templates, plus label files."""
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    templates = rng.integers(spec.template_count, size=n)
    cache = {}
    with open(out / "labels.csv", "w", newline="") as lf, open(out / "templates.csv", "w", newline="") as tf:
        lw = csv.writer(lf, lineterminator="\n")
        tw = csv.writer(tf, lineterminator="\n")
        lw.writerow(LABEL_COLUMNS)
        tw.writerow(("filename", "template"))
        for i, t in enumerate(templates):
            t = int(t)
            if t not in cache:
                cache[t] = render_sprite(spec, t)
            name = f"sprite_{i:06d}.ppm"
            write_ppm(img_dir / name, cache[t])
            lab = spec.labels(t)
            lw.writerow((name, lab["age_bin"], lab["gender"], lab["ethnicity"]))
            tw.writerow((name, t))
    manifest = DatasetManifest(
        root=str(out),
        attributes=spec.attributes(),
        count=n,
        resolution=spec.resolution,
        templates_csv="templates.csv",
        template_count=spec.template_count,
    )
    (out / "sprite_spec.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
    manifest.save()
    return manifest


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3) float32 in [0, 1]
    labels: np.ndarray  # (N, n_attributes) int64, manifest attribute order
    attributes: list
    filenames: list
    templates: np.ndarray | None = None

    def __len__(self):
        return len(self.images)

    @property
    def cond(self):
        return encode_attributes(self.attributes, self.labels)

    def subset(self, idx):
        return Dataset(
            self.images[idx],
            self.labels[idx],
            self.attributes,
            [self.filenames[i] for i in idx],
            None if self.templates is None else self.templates[idx],
        )

    def split(self, holdout_fraction, seed=0):
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self))
        n_hold = int(round(holdout_fraction * len(self)))
        return self.subset(np.sort(perm[n_hold:])), self.subset(np.sort(perm[:n_hold]))


def load_dataset(manifest, seed=None):
    """Decode every image of a manifest into memory.

    With a seed the sample order is a seed-determined shuffle; otherwise the
    CSV order is kept.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    root = manifest.path
    labels_path = root / manifest.labels_csv
    if not labels_path.exists():
        raise FileNotFoundError(f"labels file {labels_path} missing")
    names = [a.name for a in manifest.attributes]
    with open(labels_path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "filename" not in reader.fieldnames:
            raise DatasetError(f"{labels_path}: missing header with a filename column")
        missing = [n for n in names if n not in reader.fieldnames]
        if missing:
            raise DatasetError(f"{labels_path}: missing label columns {missing}")
        rows = list(reader)
    images, labels, files = [], [], []
    for lineno, row in enumerate(rows, start=2):
        try:
            lab = [int(row[n]) for n in names]
        except (TypeError, ValueError):
            raise DatasetError(f"{labels_path}:{lineno}: malformed label row") from None
        for a, v in zip(manifest.attributes, lab):
            if not 0 <= v < a.n:
                raise DatasetError(f"{labels_path}:{lineno}: {a.name}={v} outside [0, {a.n})")
        path = root / manifest.image_dir / row["filename"]
        if not path.exists():
            raise FileNotFoundError(f"image {path} listed in labels but missing")
        images.append(load_image(path))
        labels.append(lab)
        files.append(row["filename"])
    templates = None
    if manifest.templates_csv and (root / manifest.templates_csv).exists():
        with open(root / manifest.templates_csv, newline="") as f:
            tmap = {r["filename"]: int(r["template"]) for r in csv.DictReader(f)}
        templates = np.array([tmap.get(fn, -1) for fn in files], dtype=np.int64)
    ds = Dataset(
        np.stack(images) if images else np.zeros((0, manifest.resolution, manifest.resolution, 3), np.float32),
        np.array(labels, dtype=np.int64).reshape(-1, len(names)),
        manifest.attributes,
        files,
        templates,
    )
    if seed is not None:
        ds = ds.subset(np.random.default_rng(seed).permutation(len(ds)))
    return ds


def iterate_minibatches(n, batch_size, rng):
    """Endless stream of index batches drawn from seed-determined epoch shuffles."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start : start + batch_size]
        if n < batch_size:
            yield rng.integers(n, size=batch_size)


def all_templates_distinct(spec: SpriteSpec):
    imgs = render_templates(spec)
    return len({img.tobytes() for img in imgs}) == len(imgs)

