"""Data pipeline tests: CSV loading, kind inference, split rule, encoding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabrad import data as td


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def small_csv(tmp_path):
    return write_csv(tmp_path / "small.csv",
                     "a,b,label\n1.0,2.0,0\n3.0,4.0,0\n5.0,6.0,1\n")


class TestLoadCsv:
    def test_three_row_numeric(self, tmp_path):
        ds = td.load_csv(small_csv(tmp_path))
        assert ds.n == 3 and ds.d == 2
        assert all(c.kind == td.NUMERICAL for c in ds.columns)
        assert ds.labels.tolist() == [0, 0, 1]

    def test_thyroid_shaped_file(self, tmp_path):
        # Same row/column/anomaly counts as the Thyroid benchmark table entry.
        rng = np.random.default_rng(0)
        lines = ["f0,f1,f2,f3,f4,f5,label"]
        labels = np.zeros(3772, dtype=int)
        labels[rng.choice(3772, size=93, replace=False)] = 1
        for i in range(3772):
            vals = rng.normal(size=6)
            lines.append(",".join(f"{v:.6f}" for v in vals) + f",{labels[i]}")
        path = write_csv(tmp_path / "thyroid_shape.csv", "\n".join(lines) + "\n")
        ds = td.load_csv(path)
        assert ds.n == 3772 and ds.d == 6
        assert int(ds.labels.sum()) == 93

    def test_header_only_is_format_error(self, tmp_path):
        path = write_csv(tmp_path / "empty.csv", "a,b,label\n")
        with pytest.raises(td.FormatError):
            td.load_csv(path)

    def test_ragged_row_reports_line_number(self, tmp_path):
        path = write_csv(tmp_path / "ragged.csv", "a,b,label\n1,2,0\n1,0\n")
        with pytest.raises(td.FormatError, match=":3"):
            td.load_csv(path)

    def test_missing_cell_rejected(self, tmp_path):
        path = write_csv(tmp_path / "missing.csv", "a,b,label\n1,,0\n")
        with pytest.raises(td.FormatError, match="missing"):
            td.load_csv(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            td.load_csv(tmp_path / "nope.csv")

    def test_bad_label_value(self, tmp_path):
        path = write_csv(tmp_path / "bad.csv", "a,label\n1,2\n")
        with pytest.raises(td.FormatError, match="label"):
            td.load_csv(path)

    def test_label_by_position(self, tmp_path):
        path = write_csv(tmp_path / "pos.csv", "y,a\n0,1.5\n1,2.5\n")
        ds = td.load_csv(path, label_column=0)
        assert ds.d == 1 and ds.labels.tolist() == [0, 1]

    def test_mixed_column_is_categorical(self, tmp_path):
        path = write_csv(tmp_path / "cat.csv", "a,label\nred,0\nblue,0\nred,1\n")
        ds = td.load_csv(path)
        assert ds.columns[0].kind == td.CATEGORICAL
        assert ds.columns[0].vocabulary == ("red", "blue")

    def test_schema_hint_overrides_inference(self, tmp_path):
        path = write_csv(tmp_path / "ov.csv", "a,label\n1,0\n2,0\n1,1\n")
        ds = td.load_csv(path, schema_hint={"a": td.CATEGORICAL})
        assert ds.columns[0].kind == td.CATEGORICAL
        assert ds.columns[0].cardinality == 2

    def test_schema_file_roundtrip(self, tmp_path):
        schema = write_csv(tmp_path / "schema.txt",
                           "# overrides\na = categorical\nb=numerical\n")
        hints = td.read_schema_file(schema)
        assert hints == {"a": td.CATEGORICAL, "b": td.NUMERICAL}


def make_dataset(n_normal, n_anomaly, d=2, seed=0):
    rng = np.random.default_rng(seed)
    rows = [list(rng.normal(size=d)) for _ in range(n_normal + n_anomaly)]
    labels = np.array([0] * n_normal + [1] * n_anomaly)
    cols = [td.ColumnSpec(f"f{j}", td.NUMERICAL) for j in range(d)]
    return td.TabularDataset(columns=cols, rows=rows, labels=labels)


class TestSplit:
    def test_counts_ten_normals_four_anomalies(self):
        sp = td.split(make_dataset(10, 4), seed=1)
        assert len(sp.train_rows) == 5
        assert len(sp.val_rows) == 9
        assert int(sp.val_labels.sum()) == 4

    def test_same_seed_same_membership(self):
        ds = make_dataset(20, 5)
        a, b = td.split(ds, seed=7), td.split(ds, seed=7)
        assert a.train_indices.tolist() == b.train_indices.tolist()
        assert a.val_indices.tolist() == b.val_indices.tolist()

    def test_synthetic_scale_counts(self):
        sp = td.split(make_dataset(1000, 400), seed=3)
        assert len(sp.train_rows) == 500
        assert len(sp.val_rows) == 900

    def test_train_contains_no_anomalies(self):
        ds = make_dataset(9, 6)
        sp = td.split(ds, seed=2)
        assert set(sp.train_indices) <= set(np.flatnonzero(ds.labels == 0))

    def test_no_anomalies_is_valid(self):
        sp = td.split(make_dataset(8, 0), seed=0)
        assert int(sp.val_labels.sum()) == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 15), st.integers(0, 10_000))
    def test_split_is_a_partition(self, n_normal, n_anomaly, seed):
        ds = make_dataset(n_normal, n_anomaly, seed=seed)
        sp = td.split(ds, seed=seed)
        combined = sorted(sp.train_indices.tolist() + sp.val_indices.tolist())
        assert combined == list(range(ds.n))
        assert len(sp.train_rows) == n_normal // 2


class TestEncoding:
    def numeric_specs(self):
        return [td.ColumnSpec("x", td.NUMERICAL, train_mean=2.0, train_std=1.0)]

    def test_value_at_mean_encodes_to_zero(self):
        (vec,) = td.encode_sample([2.0], self.numeric_specs())
        assert vec.tolist() == [0.0]

    def test_hand_computed_population_stats(self):
        # Train values {1, 3}: mean 2, population std 1, so 3 -> +1.0.
        specs = td.fit_normalization([td.ColumnSpec("x", td.NUMERICAL)], [[1.0], [3.0]])
        (vec,) = td.encode_sample([3.0], specs)
        assert vec.tolist() == [1.0]

    def test_one_hot_position(self):
        specs = [td.ColumnSpec("c", td.CATEGORICAL, vocabulary=("a", "b", "c", "d"))]
        (vec,) = td.encode_sample(["c"], specs)
        assert vec.tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_unseen_category_names_column(self):
        specs = [td.ColumnSpec("color", td.CATEGORICAL, vocabulary=("red",))]
        with pytest.raises(td.EncodingError, match="color"):
            td.encode_sample(["green"], specs)

    def test_zero_variance_column_warns_and_uses_unit_std(self):
        with pytest.warns(UserWarning, match="zero variance"):
            specs = td.fit_normalization([td.ColumnSpec("x", td.NUMERICAL)], [[5.0], [5.0]])
        assert specs[0].train_std == 1.0

    def test_encoded_train_columns_are_standardized(self):
        ds = make_dataset(50, 10, d=3, seed=4)
        sp = td.split(ds, seed=4)
        blocks = sp.encoded_train()
        for block in blocks:
            assert abs(block.mean()) < 1e-9
            assert abs(block.std() - 1.0) < 1e-9

    def test_roundtrip(self):
        specs = [
            td.ColumnSpec("x", td.NUMERICAL, train_mean=1.5, train_std=2.5),
            td.ColumnSpec("c", td.CATEGORICAL, vocabulary=("u", "v", "w")),
        ]
        row = [3.75, "v"]
        back = td.decode_sample(td.encode_sample(row, specs), specs)
        assert abs(back[0] - row[0]) < 1e-9
        assert back[1] == "v"

    def test_encode_rows_matches_encode_sample(self):
        specs = [
            td.ColumnSpec("x", td.NUMERICAL, train_mean=0.5, train_std=2.0),
            td.ColumnSpec("c", td.CATEGORICAL, vocabulary=("a", "b")),
        ]
        rows = [[1.0, "a"], [2.0, "b"], [0.0, "a"]]
        blocks = td.encode_rows(rows, specs)
        for i, row in enumerate(rows):
            per_sample = td.encode_sample(row, specs)
            for j in range(2):
                np.testing.assert_array_equal(blocks[j][i], per_sample[j])
