import struct

import numpy as np
import pytest

from ensdef.data import (
    Dataset,
    generate_synthetic,
    load_idx,
    load_prediction_matrix,
    stratified_split,
)
from ensdef.exceptions import (
    BadMagicError,
    ConfigError,
    CountMismatchError,
    DataFormatError,
    TruncatedFileError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def write_idx_pair(tmp_path, pixels, labels, image_magic=IMAGE_MAGIC, label_magic=LABEL_MAGIC, truncate_images=0):
    pixels = np.asarray(pixels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    image_bytes = struct.pack(">IIII", image_magic, count, rows, cols) + pixels.tobytes()
    if truncate_images:
        image_bytes = image_bytes[:-truncate_images]
    label_bytes = struct.pack(">II", label_magic, len(labels)) + bytes(labels)
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    images_path.write_bytes(image_bytes)
    labels_path.write_bytes(label_bytes)
    return images_path, labels_path


def test_idx_round_trip_exact_pixels(tmp_path):
    pixels = np.array([[[0, 128], [255, 3]]], dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [7])
    ds = load_idx(images_path, labels_path)
    assert ds.n == 1 and ds.dim == 4
    assert np.array_equal(ds.X[0], np.array([0, 128, 255, 3]) / 255.0)
    assert ds.y[0] == 7


def test_idx_bad_image_magic(tmp_path):
    pixels = np.zeros((1, 2, 2), dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [0], image_magic=0x00000901)
    with pytest.raises(BadMagicError):
        load_idx(images_path, labels_path)


def test_idx_bad_label_magic(tmp_path):
    pixels = np.zeros((1, 2, 2), dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [0], label_magic=0x00000802)
    with pytest.raises(BadMagicError):
        load_idx(images_path, labels_path)


def test_idx_truncated_images(tmp_path):
    pixels = np.zeros((2, 3, 3), dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [0, 1], truncate_images=5)
    with pytest.raises(TruncatedFileError):
        load_idx(images_path, labels_path)


def test_idx_count_mismatch(tmp_path):
    pixels = np.zeros((2, 2, 2), dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [0, 1, 1])
    with pytest.raises(CountMismatchError):
        load_idx(images_path, labels_path)


def test_synthetic_same_seed_identical():
    a = generate_synthetic(3, 8, 10, 0.1, seed=4)
    b = generate_synthetic(3, 8, 10, 0.1, seed=4)
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.y, b.y)


def test_synthetic_in_unit_box_and_label_range():
    ds = generate_synthetic(5, 12, 20, 0.4, seed=1)
    assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0
    assert set(np.unique(ds.y)) == set(range(5))


def test_synthetic_small_spread_is_linearly_separable():
    from sklearn.linear_model import LogisticRegression

    ds = generate_synthetic(2, 6, 40, 0.01, seed=9)
    clf = LogisticRegression().fit(ds.X, ds.y)
    assert clf.score(ds.X, ds.y) == 1.0


def test_synthetic_zero_per_class_rejected():
    with pytest.raises(ConfigError):
        generate_synthetic(3, 8, 0, 0.1, seed=0)


def test_stratified_split_counts():
    ds = generate_synthetic(4, 6, 25, 0.1, seed=2)
    train_ds, test_ds = stratified_split(ds, 20)
    assert train_ds.n == 80 and test_ds.n == 20
    for k in range(4):
        assert (train_ds.y == k).sum() == 20
        assert (test_ds.y == k).sum() == 5


def write_prediction_csv(path, rows):
    lines = ["example_id,model_id,p_0,p_1,p_2"]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def test_prediction_matrix_round_trip(tmp_path):
    path = tmp_path / "preds.csv"
    write_prediction_csv(
        path,
        [
            ("e1", "m1", 0.7, 0.2, 0.1),
            ("e2", "m1", 0.1, 0.8, 0.1),
            ("e3", "m1", 0.3, 0.3, 0.4),
            ("e1", "m2", 0.5, 0.25, 0.25),
            ("e2", "m2", 0.2, 0.6, 0.2),
            ("e3", "m2", 0.1, 0.2, 0.7),
        ],
    )
    matrix = load_prediction_matrix(path)
    assert matrix.model_ids == ["m1", "m2"]
    assert matrix.example_ids == ["e1", "e2", "e3"]
    assert matrix.probabilities["m1"][0] == pytest.approx([0.7, 0.2, 0.1], rel=0)
    labels = matrix.label_columns()
    assert labels["m1"].tolist() == [0, 1, 2]
    assert labels["m2"].tolist() == [0, 1, 2]


def test_prediction_matrix_accepts_tiny_sum_error_as_is(tmp_path):
    path = tmp_path / "preds.csv"
    write_prediction_csv(path, [("e1", "m1", 0.7, 0.2, 0.1000000001)])
    matrix = load_prediction_matrix(path)
    assert matrix.probabilities["m1"][0][2] == pytest.approx(0.1000000001, rel=0)


def test_prediction_matrix_renormalizes_near_misses(tmp_path):
    path = tmp_path / "preds.csv"
    write_prediction_csv(path, [("e1", "m1", 0.7, 0.2, 0.1005)])
    with pytest.warns(UserWarning):
        matrix = load_prediction_matrix(path)
    assert matrix.probabilities["m1"][0].sum() == pytest.approx(1.0, abs=1e-12)


def test_prediction_matrix_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad_sum.csv"
    write_prediction_csv(path, [("e1", "m1", 0.3, 0.1, 0.1)])
    with pytest.raises(DataFormatError):
        load_prediction_matrix(path)

    path = tmp_path / "negative.csv"
    write_prediction_csv(path, [("e1", "m1", -0.1, 0.6, 0.5)])
    with pytest.raises(DataFormatError):
        load_prediction_matrix(path)

    path = tmp_path / "ragged.csv"
    path.write_text("example_id,model_id,p_0,p_1,p_2\ne1,m1,0.5,0.5\n")
    with pytest.raises(DataFormatError):
        load_prediction_matrix(path)

    path = tmp_path / "misaligned.csv"
    write_prediction_csv(path, [("e1", "m1", 0.5, 0.3, 0.2), ("e2", "m2", 0.5, 0.3, 0.2)])
    with pytest.raises(DataFormatError):
        load_prediction_matrix(path)


def test_dataset_validation():
    with pytest.raises(DataFormatError):
        Dataset(X=np.zeros((3, 2)), y=np.array([0, 1]), n_classes=2)
    with pytest.raises(DataFormatError):
        Dataset(X=np.zeros((2, 2)), y=np.array([0, 5]), n_classes=2)
