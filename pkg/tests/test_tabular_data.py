import numpy as np
import pytest

from policy_targeting.errors import DegenerateSplitError, RowParseError, SchemaError
from policy_targeting.tabular_data import (
    CsvSchema,
    Dataset,
    SeedPurpose,
    ceil_count,
    concat_datasets,
    derive_seed,
    load_csv,
    make_rng,
    split_dataset,
    write_csv,
)


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


NUMERIC = "x1,x2,W,Y\n1,2,0,1.5\n3,4,1,2.5\n5,6,0,0.5\n7,8,1,-1\n"


def test_load_numeric_csv(tmp_path):
    path = _write(tmp_path, NUMERIC)
    ds = load_csv(path, CsvSchema(("x1", "x2"), "W", "Y"))
    assert ds.n == 4
    assert ds.d == 2
    assert ds.name == "data"
    assert ds.W.tolist() == [0, 1, 0, 1]
    np.testing.assert_array_equal(ds.Y, [1.5, 2.5, 0.5, -1.0])
    assert ds.feature_names == ("x1", "x2")


def test_treatment_value_outside_01_names_the_row(tmp_path):
    path = _write(tmp_path, "x1,W,Y\n1,0,1\n2,1,1\n3,2,1\n")
    with pytest.raises(RowParseError) as excinfo:
        load_csv(path, CsvSchema(("x1",), "W", "Y"))
    assert excinfo.value.rows == [2]
    assert excinfo.value.column == "W"


def test_categorical_column_is_one_hot_in_first_appearance_order(tmp_path):
    path = _write(tmp_path, "x1,c,W,Y\n1,a,0,1\n2,b,1,1\n3,a,0,1\n")
    ds = load_csv(path, CsvSchema(("x1", "c"), "W", "Y"))
    assert ds.d == 3
    assert ds.feature_names == ("x1", "c=a", "c=b")
    np.testing.assert_array_equal(ds.X[:, 1:], [[1, 0], [0, 1], [1, 0]])


def test_missing_cells_are_rejected_with_every_row(tmp_path):
    path = _write(tmp_path, "x1,W,Y\n1,0,1\n,1,1\nNA,0,1\n4,1,1\n")
    with pytest.raises(RowParseError) as excinfo:
        load_csv(path, CsvSchema(("x1",), "W", "Y"))
    assert excinfo.value.rows == [1, 2]
    assert "missing" in str(excinfo.value)


def test_non_numeric_outcome_is_rejected(tmp_path):
    path = _write(tmp_path, "x1,W,Y\n1,0,1\n2,1,high\n")
    with pytest.raises(RowParseError) as excinfo:
        load_csv(path, CsvSchema(("x1",), "W", "Y"))
    assert excinfo.value.rows == [1]


def test_explicit_numeric_column_with_text_is_rejected(tmp_path):
    path = _write(tmp_path, "x1,W,Y\n1,0,1\nfoo,1,1\n")
    with pytest.raises(RowParseError):
        load_csv(path, CsvSchema(("x1",), "W", "Y", categorical_columns=()))


def test_missing_column_raises_schema_error(tmp_path):
    path = _write(tmp_path, NUMERIC)
    with pytest.raises(SchemaError, match="x3"):
        load_csv(path, CsvSchema(("x1", "x3"), "W", "Y"))


def test_invalid_utf8_raises_schema_error(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"x,W,Y\n1,0,1\n\xff\xfe,1,2\n3,0,3\n")
    with pytest.raises(SchemaError, match="UTF-8"):
        load_csv(path, CsvSchema(("x",), "W", "Y"))


def test_row_with_extra_fields_names_the_row(tmp_path):
    path = _write(tmp_path, "x,W,Y\n1,0,1\n2,1,2,9,9\n3,0,3\n")
    with pytest.raises(RowParseError) as excinfo:
        load_csv(path, CsvSchema(("x",), "W", "Y"))
    assert excinfo.value.rows == [1]
    assert excinfo.value.path == str(path)


def test_empty_file_raises_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(_write(tmp_path, ""), CsvSchema(("x",), "W", "Y"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "absent.csv", CsvSchema(("x1",), "W", "Y"))


def test_write_then_load_is_bit_identical(tmp_path, make_trial):
    ds, _ = make_trial(n=50, seed=11)
    path = write_csv(ds, tmp_path / "trial.csv")
    back = load_csv(path, CsvSchema(tuple(ds.feature_names), "W", "Y"))
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.W, ds.W)
    np.testing.assert_array_equal(back.Y, ds.Y)
    assert back.feature_names == ds.feature_names


def test_dataset_arrays_are_read_only(tiny_dataset):
    assert not tiny_dataset.X.flags.writeable
    with pytest.raises(ValueError):
        tiny_dataset.Y[0] = 1.0


def test_dataset_rejects_mismatched_lengths():
    with pytest.raises(SchemaError):
        Dataset(name="bad", X=np.zeros((3, 1)), W=np.array([0, 1]), Y=np.zeros(3))


def test_subset_keeps_row_index(tiny_dataset):
    sub = tiny_dataset.subset([7, 2])
    assert sub.row_index.tolist() == [7, 2]
    np.testing.assert_array_equal(sub.X, tiny_dataset.X[[7, 2]])


def test_concat_datasets(tiny_dataset):
    both = concat_datasets([tiny_dataset.subset([0, 1]), tiny_dataset.subset([5])], name="both")
    assert both.n == 3
    assert both.row_index.tolist() == [0, 1, 5]


class TestSplit:
    def test_sizes(self, tiny_dataset):
        split = split_dataset(tiny_dataset, 0.5, seed=4)
        assert (split.train.n, split.eval.n) == (5, 5)

    def test_is_deterministic(self, tiny_dataset):
        a = split_dataset(tiny_dataset, 0.5, seed=4)
        b = split_dataset(tiny_dataset, 0.5, seed=4)
        np.testing.assert_array_equal(a.train.row_index, b.train.row_index)
        np.testing.assert_array_equal(a.eval.row_index, b.eval.row_index)

    def test_parts_keep_both_arms_and_original_order(self, tiny_dataset):
        for seed in range(20):
            split = split_dataset(tiny_dataset, 0.5, seed=seed)
            for part in (split.train, split.eval):
                assert part.has_both_arms()
                assert np.all(np.diff(part.row_index) > 0)
            rows = np.concatenate([split.train.row_index, split.eval.row_index])
            assert sorted(rows.tolist()) == list(range(10))

    def test_all_treated_dataset_cannot_be_split(self):
        ds = Dataset(name="treated", X=np.zeros((10, 1)), W=np.ones(10), Y=np.zeros(10))
        with pytest.raises(DegenerateSplitError):
            split_dataset(ds, 0.5, seed=0)

    def test_half_up_rounding(self, tiny_dataset):
        split = split_dataset(tiny_dataset, 0.25, seed=1)
        assert split.train.n == 3


class TestSeeds:
    def test_purposes_give_different_streams(self):
        seeds = {derive_seed(42, purpose) for purpose in SeedPurpose}
        assert len(seeds) == len(SeedPurpose)

    def test_indices_give_different_streams(self):
        assert derive_seed(42, SeedPurpose.BOOTSTRAP, 0, 1) != derive_seed(42, SeedPurpose.BOOTSTRAP, 1, 0)

    def test_base_stream_is_xor(self):
        assert derive_seed(5, SeedPurpose.SPLIT) == 5 ^ int(SeedPurpose.SPLIT)

    def test_rng_is_reproducible(self):
        a = make_rng(9, SeedPurpose.FOLDS, 3).random(5)
        b = make_rng(9, SeedPurpose.FOLDS, 3).random(5)
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("fraction,n,expected", [
    (0.1, 30, 3),
    (0.25, 4, 1),
    (0.2, 10, 2),
    (0.05, 1, 1),
    (0.0, 100, 0),
])
def test_ceil_count(fraction, n, expected):
    assert ceil_count(fraction, n) == expected
