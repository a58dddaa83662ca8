"""Tests for dataset ingestion (IDX, PGM directories) and synthesis."""

import struct

import numpy as np
import pytest

from redsc.data import (
    Dataset,
    box_downsample,
    load_dataset_npz,
    load_idx,
    load_image_dir,
    read_pgm,
    save_dataset_npz,
    subset_select,
    synth_subspaces,
)
from redsc.errors import ConfigurationError, FormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    path.write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def write_pgm(path, array, comment=None, maxval=255):
    array = np.asarray(array, dtype=np.uint8)
    h, w = array.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment + b"\n"
    header += f"{w} {h}\n{maxval}\n".encode()
    path.write_bytes(header + array.tobytes())


# --- IDX ------------------------------------------------------------------------


def test_idx_roundtrip_exact_pixels(tmp_path):
    images = np.array([[[0, 128], [255, 3]], [[7, 7], [0, 255]]], dtype=np.uint8)
    labels = np.array([4, 1], dtype=np.uint8)
    write_idx_images(tmp_path / "img", images)
    write_idx_labels(tmp_path / "lab", labels)
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert ds.images.shape == (2, 1, 2, 2)
    assert np.array_equal(ds.images[:, 0] * 255.0, images.astype(float))
    assert np.array_equal(ds.labels, [4, 1])


def test_idx_bad_images_magic(tmp_path):
    (tmp_path / "img").write_bytes(struct.pack(">IIII", 0xDEAD, 1, 2, 2) + bytes(4))
    write_idx_labels(tmp_path / "lab", [0])
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_bad_labels_magic(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((1, 2, 2), dtype=np.uint8))
    (tmp_path / "lab").write_bytes(struct.pack(">II", 1234, 1) + bytes(1))
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_truncated_payload_reports_offset(tmp_path):
    # header claims the full 60000-image training set but carries no pixels
    (tmp_path / "img").write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, 60000, 28, 28))
    write_idx_labels(tmp_path / "lab", np.zeros(60000, dtype=np.uint8))
    with pytest.raises(FormatError, match="47040016"):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx_labels(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
    with pytest.raises(FormatError, match="3.*2|2.*3"):
        load_idx(tmp_path / "img", tmp_path / "lab")


# --- subset selection -------------------------------------------------------------


def make_labeled_dataset(counts):
    labels = np.concatenate([[k] * c for k, c in enumerate(counts)])
    rng = np.random.default_rng(0)
    images = rng.uniform(size=(labels.size, 1, 4, 4))
    return Dataset(images=images, labels=labels.astype(int), name="toy")


def test_subset_select_balances_classes():
    ds = make_labeled_dataset([10, 12, 9])
    sub = subset_select(ds, per_class=5, seed=3)
    assert sub.n_images == 15
    assert np.array_equal(np.bincount(sub.labels), [5, 5, 5])


def test_subset_select_deterministic():
    ds = make_labeled_dataset([10, 12, 9])
    a = subset_select(ds, per_class=4, seed=5)
    b = subset_select(ds, per_class=4, seed=5)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)


def test_subset_select_relabels_chosen_classes():
    ds = make_labeled_dataset([5, 5, 5, 5])
    sub = subset_select(ds, per_class=2, classes=[1, 3], seed=0)
    assert set(sub.labels.tolist()) == {0, 1}
    assert sub.n_images == 4


def test_subset_select_rejects_insufficient_class():
    ds = make_labeled_dataset([10, 3])
    with pytest.raises(ConfigurationError, match="class 1"):
        subset_select(ds, per_class=5, seed=0)


def test_subset_select_rejects_empty_request():
    ds = make_labeled_dataset([4, 4])
    with pytest.raises(ConfigurationError):
        subset_select(ds, per_class=0, seed=0)


# --- PGM directory loading ---------------------------------------------------------


def test_read_pgm_with_comment(tmp_path):
    array = np.arange(6, dtype=np.uint8).reshape(2, 3) * 40
    write_pgm(tmp_path / "a.pgm", array, comment=b"created by hand")
    loaded = read_pgm(tmp_path / "a.pgm")
    assert np.allclose(loaded, array / 255.0)


def test_read_pgm_rejects_wide_maxval(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.zeros((2, 2), dtype=np.uint8), maxval=65535)
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "a.pgm")


def test_load_image_dir_classes_and_downsampling(tmp_path):
    rng = np.random.default_rng(1)
    for cls, count in (("subj_a", 2), ("subj_b", 3)):
        d = tmp_path / cls
        d.mkdir()
        for i in range(count):
            write_pgm(d / f"{i}.pgm", rng.integers(0, 256, size=(8, 8)).astype(np.uint8))
    ds = load_image_dir(tmp_path, target_hw=(4, 4))
    assert ds.images.shape == (5, 1, 4, 4)
    assert np.array_equal(ds.labels, [0, 0, 1, 1, 1])


def test_load_image_dir_skips_non_pgm_with_warning(tmp_path):
    d = tmp_path / "only"
    d.mkdir()
    write_pgm(d / "ok.pgm", np.full((4, 4), 100, dtype=np.uint8))
    (d / "junk.txt").write_bytes(b"not an image")
    with pytest.warns(UserWarning, match="junk.txt"):
        ds = load_image_dir(tmp_path, target_hw=(2, 2))
    assert ds.n_images == 1


def test_load_image_dir_rejects_empty_class(tmp_path):
    (tmp_path / "empty_class").mkdir()
    with pytest.raises(ConfigurationError, match="empty_class"):
        load_image_dir(tmp_path, target_hw=(2, 2))


def test_full_resolution_to_target_shape(tmp_path):
    d = tmp_path / "face"
    d.mkdir()
    write_pgm(d / "0.pgm", np.full((192, 168), 80, dtype=np.uint8))
    ds = load_image_dir(tmp_path, target_hw=(48, 42))
    assert ds.images.shape == (1, 1, 48, 42)
    assert np.allclose(ds.images, 80 / 255.0)


def test_box_downsample_checkerboard():
    board = np.indices((4, 4)).sum(axis=0) % 2
    out = box_downsample(board.astype(float), (2, 2))
    assert np.array_equal(out, np.full((2, 2), 0.5))


def test_box_downsample_preserves_constants():
    img = np.full((6, 9), 0.37)
    assert np.allclose(box_downsample(img, (2, 3)), 0.37)


def test_box_downsample_rejects_upsampling():
    with pytest.raises(ConfigurationError):
        box_downsample(np.zeros((4, 4)), (8, 8))


# --- synthetic union of subspaces ---------------------------------------------------


def test_synth_shapes_and_range():
    ds = synth_subspaces(n_subspaces=3, intrinsic_dim=2, image_hw=(6, 6), per_class=10, noise_sigma=0.05, seed=0)
    assert ds.images.shape == (30, 1, 6, 6)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert np.array_equal(np.bincount(ds.labels), [10, 10, 10])
    assert ds.raw_matrix.shape == (36, 30)


def test_synth_noiseless_single_subspace_rank():
    d = 3
    ds = synth_subspaces(n_subspaces=1, intrinsic_dim=d, image_hw=(5, 5), per_class=20, noise_sigma=0.0, seed=1)
    singular_values = np.linalg.svd(ds.raw_matrix, compute_uv=False)
    assert singular_values[d] < 1e-10


def test_synth_deterministic():
    kwargs = dict(n_subspaces=2, intrinsic_dim=2, image_hw=(4, 4), per_class=5, noise_sigma=0.01, seed=9)
    a = synth_subspaces(**kwargs)
    b = synth_subspaces(**kwargs)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.raw_matrix, b.raw_matrix)


def test_synth_rejects_fat_intrinsic_dim():
    with pytest.raises(ConfigurationError):
        synth_subspaces(n_subspaces=2, intrinsic_dim=16, image_hw=(4, 4), per_class=5, noise_sigma=0.0, seed=0)


def test_synth_records_rescale_provenance():
    ds = synth_subspaces(n_subspaces=2, intrinsic_dim=2, image_hw=(4, 4), per_class=5, noise_sigma=0.01, seed=2)
    assert "rescale_offset" in ds.provenance and "rescale_span" in ds.provenance
    rebuilt = (ds.raw_matrix - ds.provenance["rescale_offset"]) / ds.provenance["rescale_span"]
    assert np.allclose(rebuilt.T.reshape(ds.images.shape), ds.images)


# --- dataset container and npz round trip --------------------------------------------


def test_dataset_validation():
    with pytest.raises(ConfigurationError):
        Dataset(images=np.full((2, 1, 2, 2), 1.5), labels=None)  # out of range
    with pytest.raises(ConfigurationError):
        Dataset(images=np.zeros((2, 1, 2, 2)), labels=np.array([0, -1]))  # negative label
    with pytest.raises(ConfigurationError):
        Dataset(images=np.zeros((2, 2, 2)), labels=None)  # wrong rank


def test_dataset_flattened_columns():
    images = np.random.default_rng(3).uniform(size=(4, 1, 2, 3))
    ds = Dataset(images=images, labels=None)
    cols = ds.flattened_columns()
    assert cols.shape == (6, 4)
    assert np.array_equal(cols[:, 2], images[2].reshape(-1))


def test_npz_roundtrip(tmp_path):
    ds = synth_subspaces(n_subspaces=2, intrinsic_dim=2, image_hw=(4, 4), per_class=6, noise_sigma=0.01, seed=4)
    path = tmp_path / "data.npz"
    save_dataset_npz(path, ds)
    back = load_dataset_npz(path)
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.raw_matrix, ds.raw_matrix)
    assert back.name == ds.name
    assert back.provenance["seed"] == 4
