import math

import numpy as np
import pytest

from mixaug.dataio import (
    CLASS_NAMES,
    RAF_TEST_SUPPORTS,
    AlignmentTemplate,
    DatasetManifest,
    Landmarks5,
    ManifestRecord,
    SynthConfig,
    allocate_counts,
    apply_affine,
    decode_pnm,
    generate_synthetic,
    load_dataset,
    normalize,
    quantize,
    read_manifest,
    read_pnm,
    read_raw_tensor,
    resize_bilinear,
    solve_affine,
    synthetic_batches,
    warp_affine,
    write_manifest,
    write_pnm,
    write_raw_tensor,
)
from mixaug.errors import ArgumentError, DegenerateGeometryError, LoadError


def similarity(angle_deg, scale, tx, ty, center=(0.0, 0.0)):
    a = math.radians(angle_deg)
    m = scale * np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    c = np.asarray(center)
    t = c - m @ c + np.array([tx, ty])
    return np.hstack([m, t[:, None]])


def compose(a, b):
    """Affine a after b."""
    A = np.vstack([a, [0, 0, 1]])
    B = np.vstack([b, [0, 0, 1]])
    return (A @ B)[:2]


TEMPLATE = AlignmentTemplate.frontal(112)


def test_identity_alignment():
    A = solve_affine(Landmarks5(TEMPLATE.points), TEMPLATE)
    assert np.allclose(A, [[1, 0, 0], [0, 1, 0]], atol=1e-9)


def test_rotation_is_inverted():
    T = similarity(30, 1.0, 0, 0, center=(56, 56))
    src = apply_affine(T, TEMPLATE.points)
    A = solve_affine(Landmarks5(src), TEMPLATE)
    assert np.allclose(compose(A, T), [[1, 0, 0], [0, 1, 0]], atol=1e-6)


def test_scale_two_gives_half():
    A = solve_affine(Landmarks5(2 * TEMPLATE.points), TEMPLATE)
    assert np.allclose(A[:, :2], 0.5 * np.eye(2), atol=1e-6)
    assert np.allclose(A[:, 2], 0, atol=1e-6)


def test_collinear_landmarks_rejected():
    pts = np.stack([np.arange(5.0), 2 * np.arange(5.0) + 1], axis=1)
    with pytest.raises(DegenerateGeometryError):
        solve_affine(Landmarks5(pts), TEMPLATE)


def test_template_bounds():
    with pytest.raises(ArgumentError):
        AlignmentTemplate(np.full((5, 2), 120.0), 112)
    small = AlignmentTemplate.frontal(100)
    assert np.all(small.points < 100)


def test_warp_identity():
    img = np.random.default_rng(0).uniform(size=(9, 9, 3))
    out = warp_affine(img, np.array([[1.0, 0, 0], [0, 1, 0]]), 9)
    assert np.allclose(out, img, atol=1e-9)


def test_warp_translation_moves_impulse():
    img = np.zeros((5, 5, 1))
    img[2, 2] = 1.0
    out = warp_affine(img, np.array([[1.0, 0, 1], [0, 1, 0]]), 5)
    expected = np.zeros((5, 5, 1))
    expected[2, 3] = 1.0
    assert np.allclose(out, expected, atol=1e-12)


def test_warp_zeros():
    out = warp_affine(np.zeros((6, 6, 1)), similarity(20, 1.3, 2, -1), 8)
    assert np.array_equal(out, np.zeros((8, 8, 1)))


def _blobs(points, size, sigma=1.5):
    gy, gx = np.mgrid[0:size, 0:size].astype(float)
    img = np.zeros((size, size))
    for x, y in points:
        img += np.exp(-((gx - x) ** 2 + (gy - y) ** 2) / (2 * sigma ** 2))
    return img[..., None]


def _local_centroid(img, x, y, r=4):
    xi, yi = int(round(x)), int(round(y))
    patch = img[yi - r:yi + r + 1, xi - r:xi + r + 1, 0]
    gy, gx = np.mgrid[yi - r:yi + r + 1, xi - r:xi + r + 1]
    w = patch.sum()
    return (gx * patch).sum() / w, (gy * patch).sum() / w


@pytest.mark.parametrize("seed", range(5))
def test_warp_maps_landmarks_onto_template(seed):
    g = np.random.default_rng(seed)
    template = AlignmentTemplate.frontal(112)
    T = similarity(g.uniform(-25, 25), g.uniform(0.9, 1.2), g.uniform(-6, 6), g.uniform(-6, 6), (56, 56))
    src = apply_affine(T, template.points)
    img = _blobs(src, 128)
    A = solve_affine(Landmarks5(src), template)
    out = warp_affine(img, A, 112)
    for (tx, ty) in template.points:
        cx, cy = _local_centroid(out, tx, ty)
        assert math.hypot(cx - tx, cy - ty) < 0.5


def test_resize_constant():
    out = resize_bilinear(np.full((7, 5, 2), 0.3), 11)
    assert out.shape == (11, 11, 2)
    assert np.allclose(out, 0.3, atol=1e-15)


def test_resize_same_size_identity():
    img = np.random.default_rng(1).uniform(size=(6, 6, 1))
    assert np.allclose(resize_bilinear(img, 6), img, atol=1e-9)


def test_resize_checkerboard_center():
    img = np.array([[1.0, 0.0], [0.0, 1.0]])[..., None]
    out = resize_bilinear(img, 3)
    assert out[1, 1, 0] == pytest.approx(img.mean(), abs=1e-12)


def test_resize_rejects_bad_target():
    with pytest.raises(ArgumentError):
        resize_bilinear(np.zeros((4, 4, 1)), 0)


def test_resize_to_common_face_sizes():
    img = np.random.default_rng(2).uniform(size=(37, 41, 3))
    for s in (100, 112):
        out = resize_bilinear(img, s)
        assert out.shape == (s, s, 3) and out.min() >= 0 and out.max() <= 1


def test_normalize_values():
    assert normalize(np.array([0, 255])).tolist() == [0.0, 1.0]
    assert normalize(np.array([128]))[0] == pytest.approx(0.50196078, abs=1e-8)


def test_quantization_round_trip_bound():
    x = np.linspace(0, 1, 10001)
    assert np.max(np.abs(normalize(quantize(x)) - x)) <= 1 / 510 + 1e-15


def test_pnm_round_trip(tmp_path):
    g = np.random.default_rng(3)
    for c in (1, 3):
        px = g.integers(0, 256, size=(5, 7, c), dtype=np.uint8)
        write_pnm(tmp_path / f"x{c}.pnm", px)
        assert np.array_equal(read_pnm(tmp_path / f"x{c}.pnm"), px)


def test_pnm_header_with_comment():
    raster = bytes(range(6))
    img = decode_pnm(b"P5\n# made by hand\n3 2\n255\n" + raster)
    assert img.shape == (2, 3, 1) and img.reshape(-1).tolist() == list(range(6))


@pytest.mark.parametrize("data", [b"P3\n1 1\n255\n0", b"P5\n2 2\n65535\n" + b"\0" * 8, b"P5\n2 2\n255\n\0"])
def test_pnm_malformed(data):
    with pytest.raises(ValueError):
        decode_pnm(data)


def test_raw_tensor_round_trip(tmp_path):
    x = np.random.default_rng(4).uniform(size=(3, 4, 2))
    write_raw_tensor(tmp_path / "x.tensor", x)
    assert read_raw_tensor(tmp_path / "x.tensor").tobytes() == x.tobytes()


def _manifest(tmp_path, records, k=7, size=16):
    m = DatasetManifest(records, CLASS_NAMES[:k], size, AlignmentTemplate.frontal(size), tmp_path)
    write_manifest(tmp_path / "m.csv", m)
    return tmp_path / "m.csv"


def test_empty_manifest(tmp_path):
    assert load_dataset(_manifest(tmp_path, [])) == []


def test_record_without_landmarks(tmp_path):
    px = np.random.default_rng(5).integers(0, 256, size=(8, 8, 1), dtype=np.uint8)
    write_pnm(tmp_path / "a.pgm", px)
    items = load_dataset(_manifest(tmp_path, [ManifestRecord("a.pgm", 3)], size=8))
    assert np.array_equal(items[0].pixels, px / 255.0)
    assert items[0].label.tolist() == [0, 0, 0, 1, 0, 0, 0]


def test_record_with_landmarks_is_aligned(tmp_path):
    template = AlignmentTemplate.frontal(32)
    T = similarity(12, 1.1, 1.5, -1.0, (16, 16))
    src = apply_affine(T, template.points)
    img = np.clip(_blobs(src, 32), 0, 1)
    write_raw_tensor(tmp_path / "face.tensor", img)
    path = _manifest(tmp_path, [ManifestRecord("face.tensor", 0, Landmarks5(src))], size=32)
    (item,) = load_dataset(path, workers=1)
    expected = warp_affine(img, solve_affine(Landmarks5(src), template), 32)
    assert np.allclose(item.pixels, np.clip(expected, 0, 1), atol=1e-12)


def test_manifest_round_trip(tmp_path):
    recs = [ManifestRecord("a.pgm", 1, Landmarks5(np.arange(10.0) + 3)), ManifestRecord("b.pgm", 6)]
    m = read_manifest(_manifest(tmp_path, recs))
    assert m.class_names == CLASS_NAMES and m.num_classes == 7 and m.size == 16
    assert [r.cls for r in m.records] == [1, 6]
    assert np.array_equal(m.records[0].landmarks.points.reshape(-1), np.arange(10.0) + 3)
    assert m.records[1].landmarks is None


def test_load_errors_name_the_record(tmp_path):
    path = _manifest(tmp_path, [ManifestRecord("missing.pgm", 0)])
    with pytest.raises(LoadError, match="missing.pgm"):
        load_dataset(path, workers=1)
    (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\n\0")
    with pytest.raises(LoadError, match="bad.pgm"):
        load_dataset(_manifest(tmp_path, [ManifestRecord("bad.pgm", 0)]), workers=1)
    text = (tmp_path / "m.csv").read_text().replace("bad.pgm,0", "bad.pgm,9")
    (tmp_path / "m.csv").write_text(text)
    with pytest.raises(LoadError, match="class index 9"):
        read_manifest(tmp_path / "m.csv")


def test_allocate_counts_exact():
    assert allocate_counts(10, [1, 1, 1]) == [4, 3, 3]
    counts = allocate_counts(7 * 200, RAF_TEST_SUPPORTS)
    assert sum(counts) == 1400
    assert counts.index(max(counts)) == CLASS_NAMES.index("happy")
    assert counts.index(min(counts)) == CLASS_NAMES.index("fearful")


def test_generator_split_and_balance(tmp_path):
    train, evals = generate_synthetic(classes=4, per_class=12, size=16, seed=3, out_dir=tmp_path)
    assert train.class_counts() == [12, 12, 12, 12]
    assert evals.class_counts() == [3, 3, 3, 3]
    assert len(train.records) == 4 * len(evals.records)


def test_generator_imbalanced_profile(tmp_path):
    train, evals = generate_synthetic(classes=7, per_class=20, size=16, seed=3, out_dir=tmp_path, proportions="raf")
    assert train.class_counts() == allocate_counts(140, RAF_TEST_SUPPORTS)
    assert evals.class_counts() == allocate_counts(35, RAF_TEST_SUPPORTS)


def test_generator_deterministic(tmp_path):
    generate_synthetic(classes=3, per_class=4, size=16, seed=9, out_dir=tmp_path / "a")
    generate_synthetic(classes=3, per_class=4, size=16, seed=9, out_dir=tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_generator_invalid_args(tmp_path):
    with pytest.raises(ArgumentError):
        generate_synthetic(classes=1, per_class=4, out_dir=tmp_path)
    with pytest.raises(ArgumentError):
        generate_synthetic(classes=3, per_class=1, out_dir=tmp_path)


def test_files_match_in_memory_batches(tmp_path):
    train, evals = generate_synthetic(classes=3, per_class=8, size=16, seed=4, out_dir=tmp_path)
    tr, ev = synthetic_batches(SynthConfig(3, 8, 16, 4))
    loaded = load_dataset(tmp_path / "train.csv")
    assert np.array_equal(np.stack([x.pixels for x in loaded]), tr.images)
    assert np.array_equal(np.stack([x.label for x in loaded]), tr.labels)
    for x in loaded:
        assert x.pixels.min() >= 0 and x.pixels.max() <= 1
        assert sorted(x.label.tolist()) == [0.0, 0.0, 1.0]


def test_generator_landmarks_align_to_template(tmp_path):
    train, _ = generate_synthetic(classes=2, per_class=4, size=32, seed=5, out_dir=tmp_path, with_landmarks=True)
    m = read_manifest(tmp_path / "train.csv")
    for rec in m.records:
        A = solve_affine(rec.landmarks, m.template)
        # pose is a similarity, so the fitted affine is exact
        assert np.allclose(apply_affine(A, rec.landmarks.points), m.template.points, atol=1e-6)
