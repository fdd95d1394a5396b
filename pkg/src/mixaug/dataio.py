"""Image codecs, manifests, five-point alignment and the synthetic expression-glyph dataset."""

from __future__ import annotations

import csv
import io
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import Batch, LabeledImage
from .errors import ArgumentError, DegenerateGeometryError, LoadError
from .numerics import Rng

log = logging.getLogger(__name__)

CLASS_NAMES = ("surprised", "fearful", "disgusted", "happy", "sad", "angry", "neutral")

# test-set supports per class (same order as CLASS_NAMES) of the single-label RAF-DB split
RAF_TEST_SUPPORTS = (329, 74, 160, 1185, 478, 162, 680)
IMBALANCE_PROFILES = {"raf": RAF_TEST_SUPPORTS}

# frontal five-point layout (left eye, right eye, nose, left/right mouth corner) on a 112 px frame
FRONTAL_112 = np.array([
    [38.2946, 51.6963],
    [73.5318, 51.5014],
    [56.0252, 71.7366],
    [41.5493, 92.3655],
    [70.7299, 92.2041],
])


def max_workers() -> int:
    env = os.environ.get("MIXAUG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer MIXAUG_THREADS=%r", env)
    return os.cpu_count() or 1


# ---- geometry -------------------------------------------------------------

@dataclass(frozen=True)
class Landmarks5:
    points: np.ndarray  # 5 x 2, (x, y) pixels

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(5, 2)
        if not np.all(np.isfinite(pts)):
            raise ArgumentError("landmarks must be finite")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class AlignmentTemplate:
    points: np.ndarray  # 5 x 2 in the output frame
    size: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(5, 2)
        if self.size <= 0 or np.any(pts < 0) or np.any(pts >= self.size):
            raise ArgumentError(f"template points must lie in [0, {self.size})")
        object.__setattr__(self, "points", pts)

    @classmethod
    def frontal(cls, size: int = 112) -> "AlignmentTemplate":
        return cls(FRONTAL_112 * (size / 112.0), size)


def solve_affine(src: Landmarks5 | np.ndarray, template: AlignmentTemplate | np.ndarray) -> np.ndarray:
    """Least-squares 2x3 affine taking ``src`` points onto the template points (normal equations)."""
    s = src.points if isinstance(src, Landmarks5) else np.asarray(src, dtype=np.float64)
    t = template.points if isinstance(template, AlignmentTemplate) else np.asarray(template, dtype=np.float64)
    centered = s - s.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1e-9:
        raise DegenerateGeometryError("landmarks are collinear; affine alignment is undetermined")
    design = np.hstack([s, np.ones((s.shape[0], 1))])  # N x 3
    normal = design.T @ design
    rhs = design.T @ t  # 3 x 2
    coef = np.linalg.solve(normal, rhs)
    return coef.T.copy()


def apply_affine(A: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ A[:, :2].T + A[:, 2]


def _sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at real (x, y) pixel coordinates; outside the image reads as 0."""
    h, w, c = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape + (c,))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += (wx * wy * ok)[..., None] * vals
    return out


def warp_affine(img, A: np.ndarray, out_size: int) -> np.ndarray:
    """Resample ``img`` so that output pixel p shows input pixel A^-1 p."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    A = np.asarray(A, dtype=np.float64)
    M = A[:, :2]
    inv = np.linalg.inv(M)
    gy, gx = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    dst = np.stack([gx - A[0, 2], gy - A[1, 2]], axis=-1)
    src = dst @ inv.T
    out = _sample_bilinear(img, src[..., 0], src[..., 1])
    return out[..., 0] if squeeze else out


def resize_bilinear(img, target) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping; ``target`` is S or (H, W)."""
    th, tw = (target, target) if np.isscalar(target) else target
    if th <= 0 or tw <= 0:
        raise ArgumentError(f"resize target must be positive, got {target}")
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w, _ = img.shape
    if (h, w) == (th, tw):
        out = img.copy()
        return out[..., 0] if squeeze else out
    ys = np.clip((np.arange(th) + 0.5) * h / th - 0.5, 0, h - 1)
    xs = np.clip((np.arange(tw) + 0.5) * w / tw - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[..., 0] if squeeze else out


def normalize(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def quantize(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


# ---- codecs ---------------------------------------------------------------

def write_pnm(path, pixels: np.ndarray) -> None:
    """Write uint8 H x W (x 1|3) pixels as binary PGM (P5) or PPM (P6)."""
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        raise ArgumentError("write_pnm expects uint8 pixels")
    if px.ndim == 2:
        px = px[..., None]
    h, w, c = px.shape
    if c not in (1, 3):
        raise ArgumentError(f"NetPBM needs 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + px.tobytes())


def _pnm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("header ended early")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1  # one whitespace byte before the raster


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary P5/P6 (maxval 255) into a uint8 H x W x C array."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported NetPBM magic {magic!r}")
    (w, h, maxval), pos = _pnm_tokens(data, 3)
    if maxval != 255 or w <= 0 or h <= 0:
        raise ValueError(f"unsupported header: {w}x{h}, maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    raster = data[pos:pos + w * h * c]
    if len(raster) != w * h * c:
        raise ValueError("raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, c).copy()


def read_pnm(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


RAW_MAGIC = b"MXT1"


def raw_tensor_bytes(arr) -> bytes:
    a = np.asarray(arr, dtype="<f8")
    return RAW_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + a.tobytes()


def decode_raw_tensor(data: bytes) -> np.ndarray:
    if data[:4] != RAW_MAGIC:
        raise ValueError("bad raw tensor magic")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    n = int(np.prod(shape))
    if len(data) != off + 8 * n:
        raise ValueError("raw tensor size does not match its extents")
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(np.float64)


def write_raw_tensor(path, arr) -> None:
    Path(path).write_bytes(raw_tensor_bytes(arr))


def read_raw_tensor(path) -> np.ndarray:
    return decode_raw_tensor(Path(path).read_bytes())


# ---- manifests ------------------------------------------------------------

@dataclass
class ManifestRecord:
    path: str
    cls: int
    landmarks: Landmarks5 | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    class_names: tuple[str, ...]
    size: int
    template: AlignmentTemplate
    root: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for r in self.records:
            counts[r.cls] += 1
        return counts


LANDMARK_COLS = [f"{a}{i}" for i in range(1, 6) for a in ("lx", "ly")]


def write_manifest(path, manifest: DatasetManifest) -> None:
    buf = io.StringIO()
    buf.write(f"# k={manifest.num_classes}\n")
    buf.write(f"# size={manifest.size}\n")
    buf.write("# template=" + ",".join(repr(float(v)) for v in manifest.template.points.reshape(-1)) + "\n")
    buf.write("# classes=" + ";".join(manifest.class_names) + "\n")
    with_lm = any(r.landmarks is not None for r in manifest.records)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "class"] + (LANDMARK_COLS if with_lm else []))
    for r in manifest.records:
        row = [r.path, r.cls]
        if with_lm:
            row += [repr(float(v)) for v in r.landmarks.points.reshape(-1)] if r.landmarks else [""] * 10
        writer.writerow(row)
    Path(path).write_text(buf.getvalue())


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise LoadError(f"cannot read manifest {path}: {exc}") from exc
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    try:
        k = int(meta["k"])
        size = int(meta.get("size", 112))
        names = tuple(meta["classes"].split(";")) if "classes" in meta else (
            CLASS_NAMES if k == len(CLASS_NAMES) else tuple(f"class{i}" for i in range(k)))
        if len(names) != k:
            raise ValueError(f"{len(names)} class names for k={k}")
        if "template" in meta:
            template = AlignmentTemplate(np.array([float(v) for v in meta["template"].split(",")]), size)
        else:
            template = AlignmentTemplate.frontal(size)
    except (KeyError, ValueError, ArgumentError) as exc:
        raise LoadError(f"{path}: bad manifest header: {exc}") from exc
    records = []
    if body:
        reader = csv.DictReader(body)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["path", "class"]:
            raise LoadError(f"{path}: CSV header must start with path,class")
        has_lm = all(c in reader.fieldnames for c in LANDMARK_COLS)
        for n, row in enumerate(reader, start=1):
            name = f"{path.name} record {n} ({row.get('path')})"
            try:
                cls = int(row["class"])
                lm = None
                if has_lm and row[LANDMARK_COLS[0]] not in (None, ""):
                    lm = Landmarks5(np.array([float(row[c]) for c in LANDMARK_COLS]))
            except (TypeError, ValueError, ArgumentError) as exc:
                raise LoadError(f"{name}: {exc}") from exc
            if not 0 <= cls < k:
                raise LoadError(f"{name}: class index {cls} outside [0, {k})")
            records.append(ManifestRecord(row["path"], cls, lm))
    return DatasetManifest(records, names, size, template, path.parent)


def one_hot(cls: int, k: int) -> np.ndarray:
    y = np.zeros(k)
    y[cls] = 1.0
    return y


def _decode_image(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:4] == RAW_MAGIC:
        img = decode_raw_tensor(data)
        if img.ndim == 2:
            img = img[..., None]
        if img.ndim != 3 or img.min() < 0 or img.max() > 1:
            raise ValueError("raw tensor images must be H x W x C with values in [0, 1]")
        return img
    return normalize(decode_pnm(data))


def load_record(manifest: DatasetManifest, rec: ManifestRecord, index: int = 0) -> LabeledImage:
    path = manifest.root / rec.path
    try:
        img = _decode_image(path)
        if rec.landmarks is not None:
            A = solve_affine(rec.landmarks, manifest.template)
            img = warp_affine(img, A, manifest.template.size)
        img = resize_bilinear(img, manifest.size)
    except (OSError, ValueError, struct.error) as exc:
        raise LoadError(f"record {index + 1} ({rec.path}): {exc}") from exc
    return LabeledImage(np.clip(img, 0.0, 1.0), one_hot(rec.cls, manifest.num_classes))


def load_dataset(manifest_path, workers: int | None = None) -> list[LabeledImage]:
    """Decode, align (when landmarks are given), resize and normalize every record, in manifest order."""
    manifest = manifest_path if isinstance(manifest_path, DatasetManifest) else read_manifest(manifest_path)
    workers = workers or max_workers()
    jobs = list(enumerate(manifest.records))
    if workers == 1 or len(jobs) < 2:
        return [load_record(manifest, r, i) for i, r in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda j: load_record(manifest, j[1], j[0]), jobs))


def to_batch(items: Sequence[LabeledImage]) -> Batch:
    return Batch.stack(list(items))


# ---- synthetic expression glyphs ------------------------------------------

# per-class schematic: eye openness, brow raise, brow tilt (inner end up +), mouth curve (smile +),
# mouth opening, mouth width, mouth skew
EXPRESSION_SHAPES = {
    "surprised": (1.00, 0.16, 0.00, 0.00, 0.70, 0.35, 0.0),
    "fearful": (0.85, 0.10, 0.55, -0.25, 0.35, 0.65, 0.0),
    "disgusted": (0.35, -0.05, -0.30, -0.45, 0.05, 0.55, 0.45),
    "happy": (0.55, 0.02, 0.00, 0.75, 0.15, 0.80, 0.0),
    "sad": (0.45, 0.00, 0.65, -0.65, 0.00, 0.55, 0.0),
    "angry": (0.45, -0.10, -0.75, -0.20, 0.05, 0.50, 0.0),
    "neutral": (0.55, 0.00, 0.00, 0.00, 0.00, 0.60, 0.0),
}
SHAPE_JITTER = np.array([0.18, 0.06, 0.30, 0.30, 0.15, 0.10, 0.25])

# canonical landmark positions (y up, face spans roughly [-1, 1])
CANONICAL_LANDMARKS = np.array([[-0.36, 0.22], [0.36, 0.22], [0.0, -0.12], [-0.30, -0.45], [0.30, -0.45]])
FACE_SCALE = 0.42  # canonical unit -> fraction of image size


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 7
    per_class: int = 200
    size: int = 32
    seed: int = 0
    noise_sigma: float = 0.05
    max_rotation_deg: float = 15.0
    max_shift: float = 0.10
    jitter: float = 1.0
    proportions: tuple[float, ...] | None = None


def _class_shapes(k: int) -> np.ndarray:
    base = np.array(list(EXPRESSION_SHAPES.values()))
    if k <= len(base):
        return base[:k]
    rng = Rng(12345)
    extra = base.mean(axis=0) + (rng.uniform((k - len(base), base.shape[1])) - 0.5) * 2 * SHAPE_JITTER * 2
    return np.vstack([base, extra])


def _ellipse(cx, cy, rx, ry, n=20):
    t = np.linspace(0, 2 * np.pi, n + 1)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _quad(p0, p1, p2, n=10):
    t = np.linspace(0, 1, n)[:, None]
    return (1 - t) ** 2 * np.asarray(p0) + 2 * (1 - t) * t * np.asarray(p1) + t ** 2 * np.asarray(p2)


def _glyph_strokes(shape):
    eye, brow_raise, brow_tilt, curve, opening, width, skew = shape
    strokes = [_ellipse(0, 0, 0.88, 1.0, 28)]
    for side in (-1, 1):
        cx = side * 0.36
        strokes.append(_ellipse(cx, 0.22, 0.16, max(0.02, 0.11 * eye), 12))
        by = 0.48 + brow_raise
        strokes.append(np.array([[side * 0.12, by + 0.08 * brow_tilt], [side * 0.56, by - 0.08 * brow_tilt]]))
    strokes.append(np.array([[0.0, 0.10], [-0.06, -0.12], [0.06, -0.12]]))
    half = max(0.1, width) / 2
    left = (-half, -0.45 + 0.10 * skew)
    right = (half, -0.45 - 0.10 * skew)
    strokes.append(_quad(left, (0.0, -0.45 - 0.28 * curve), right))
    if opening > 0.08:
        strokes.append(_quad(left, (0.0, -0.45 - 0.28 * curve - 0.45 * opening), right))
    return strokes


def _segments(strokes):
    return np.concatenate([np.stack([s[:-1], s[1:]], axis=1) for s in strokes], axis=0)


def render_glyph(shape, size: int, angle: float = 0.0, shift=(0.0, 0.0), scale: float = 1.0,
                 thickness: float = 1.1):
    """Anti-aliased line drawing of one schematic face; returns (image in [0,1], 5 landmark pixels)."""
    segs = _segments(_glyph_strokes(shape))
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    unit = FACE_SCALE * size * scale

    def to_px(p):
        q = p @ rot.T
        return np.stack([size / 2 + shift[0] * size + unit * q[..., 0],
                         size / 2 + shift[1] * size - unit * q[..., 1]], axis=-1) - 0.5

    a = to_px(segs[:, 0])
    b = to_px(segs[:, 1])
    gy, gx = np.mgrid[0:size, 0:size].astype(np.float64)
    p = np.stack([gx.ravel(), gy.ravel()], axis=1)[:, None, :]
    ab = (b - a)[None]
    ap = p - a[None]
    t = np.clip((ap * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-12), 0, 1)
    d = np.linalg.norm(ap - t[..., None] * ab, axis=-1).min(axis=1)
    ink = np.clip(0.5 * thickness + 0.5 - d, 0.0, 1.0).reshape(size, size)
    img = 0.15 + 0.75 * ink
    return img, to_px(CANONICAL_LANDMARKS)


def allocate_counts(total: int, proportions: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``total`` into integer counts following ``proportions``."""
    p = np.asarray(proportions, dtype=np.float64)
    if np.any(p < 0) or p.sum() <= 0:
        raise ArgumentError("proportions must be non-negative with a positive sum")
    exact = total * p / p.sum()
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts.tolist()


def _split_counts(cfg: SynthConfig) -> tuple[list[int], list[int]]:
    if cfg.classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {cfg.classes}")
    if cfg.per_class < 2:
        raise ArgumentError(f"need at least 2 samples per class, got {cfg.per_class}")
    if cfg.size < 4:
        raise ArgumentError(f"image size must be at least 4, got {cfg.size}")
    props = cfg.proportions or (1.0,) * cfg.classes
    if len(props) != cfg.classes:
        raise ArgumentError(f"{len(props)} proportions given for {cfg.classes} classes")
    train_total = cfg.per_class * cfg.classes
    train = allocate_counts(train_total, props)
    evals = allocate_counts(train_total // 4, props)
    return train, evals


def _render_sample(cfg: SynthConfig, shapes: np.ndarray, cls: int, index: int):
    rng = Rng(cfg.seed).spawn(index)
    shape = shapes[cls] + cfg.jitter * SHAPE_JITTER * rng.normal(shapes.shape[1])
    angle = np.deg2rad(cfg.max_rotation_deg) * (2 * rng.uniform() - 1)
    shift = cfg.max_shift * (2 * rng.uniform(2) - 1)
    scale = 1.0 + 0.08 * (2 * rng.uniform() - 1)
    img, lm = render_glyph(shape, cfg.size, angle, shift, scale)
    img = img + cfg.noise_sigma * rng.normal(img.shape)
    return quantize(np.clip(img, 0.0, 1.0))[..., None], lm


def synthetic_samples(cfg: SynthConfig):
    """Yield (split, cls, uint8 image, landmarks) in canonical order: train then eval, class-major."""
    shapes = _class_shapes(cfg.classes)
    train, evals = _split_counts(cfg)
    index = 0
    out = []
    for split, counts in (("train", train), ("eval", evals)):
        for cls, n in enumerate(counts):
            for _ in range(n):
                out.append((split, cls, index))
                index += 1
    workers = max_workers()

    def job(item):
        split, cls, idx = item
        img, lm = _render_sample(cfg, shapes, cls, idx)
        return split, cls, img, lm

    if workers == 1:
        return [job(it) for it in out]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(job, out))


def synthetic_batches(cfg: SynthConfig) -> tuple[Batch, Batch]:
    """In-memory (train, eval) batches identical to what loading the written dataset yields."""
    samples = synthetic_samples(cfg)
    k = cfg.classes
    parts = {}
    for split in ("train", "eval"):
        rows = [(img, cls) for s, cls, img, _ in samples if s == split]
        images = normalize(np.stack([r[0] for r in rows]))
        labels = np.stack([one_hot(r[1], k) for r in rows])
        parts[split] = Batch(images, labels)
    return parts["train"], parts["eval"]


def class_names_for(k: int) -> tuple[str, ...]:
    return CLASS_NAMES[:k] if k <= len(CLASS_NAMES) else CLASS_NAMES + tuple(
        f"class{i}" for i in range(len(CLASS_NAMES), k))


def generate_synthetic(classes: int = 7, per_class: int = 200, size: int = 32, seed: int = 0,
                       out_dir=None, proportions=None, with_landmarks: bool = False,
                       **overrides) -> tuple[DatasetManifest, DatasetManifest]:
    """Render the glyph dataset under ``out_dir`` and write train.csv / eval.csv manifests.

    ``proportions`` may be a sequence or the name of a profile in IMBALANCE_PROFILES.
    Landmark columns are written only when ``with_landmarks`` is set; loading with
    landmarks aligns every face and so removes the pose variation.
    """
    if isinstance(proportions, str):
        if proportions not in IMBALANCE_PROFILES:
            raise ArgumentError(f"unknown imbalance profile {proportions!r}")
        proportions = IMBALANCE_PROFILES[proportions][:classes]
    cfg = SynthConfig(classes, per_class, size, seed,
                      proportions=tuple(proportions) if proportions is not None else None, **overrides)
    if out_dir is None:
        raise ArgumentError("generate_synthetic needs an output directory")
    out = Path(out_dir)
    names = class_names_for(classes)
    template = AlignmentTemplate(
        np.stack([size / 2 + FACE_SCALE * size * CANONICAL_LANDMARKS[:, 0],
                  size / 2 - FACE_SCALE * size * CANONICAL_LANDMARKS[:, 1]], axis=1) - 0.5, size)
    manifests = {}
    records = {"train": [], "eval": []}
    counters = {"train": 0, "eval": 0}
    for split in records:
        (out / split).mkdir(parents=True, exist_ok=True)
    for split, cls, img, lm in synthetic_samples(cfg):
        rel = f"{split}/{counters[split]:05d}_{names[cls]}.pgm"
        counters[split] += 1
        write_pnm(out / rel, img)
        records[split].append(ManifestRecord(rel, cls, Landmarks5(lm) if with_landmarks else None))
    for split in records:
        manifests[split] = DatasetManifest(records[split], names, size, template, out)
        write_manifest(out / f"{split}.csv", manifests[split])
    return manifests["train"], manifests["eval"]
