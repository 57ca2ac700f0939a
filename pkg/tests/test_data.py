import json

import numpy as np
import pytest

from tabvae.pipeline import Dataset, make_split, preprocess
from tabvae.schema import DataError, FeatureSchema, Table, load_csv
from tabvae.toy import circle_labels, toy_generate
from tabvae.transforms import QuantileGaussianTransform, inverse_normal_cdf, normal_cdf


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "data.csv"
    rows = [[i * 0.5, "A" if i % 2 else "B", "yes" if i % 3 else "no"] for i in range(30)]
    write_csv(path, ["a", "b", "cls"], rows)
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"columns": [
        {"name": "a", "kind": "numerical"},
        {"name": "b", "kind": "categorical"},
        {"name": "cls", "kind": "target"},
    ]}))
    return path, schema


class TestLoadCsv:
    def test_kinds_from_schema(self, small_csv):
        path, schema = small_csv
        table = load_csv(path, schema)
        assert table.schema.m_n == 1 and table.schema.m_c == 1
        assert table.schema.target.name == "cls"

    def test_inferred_kinds_last_column_target(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["x", "c", "y"], [[1.5, "u", 0], [2.5, "v", 1]])
        table = load_csv(path)
        kinds = {c.name: c.kind for c in table.schema.columns}
        assert kinds == {"x": "numerical", "c": "categorical", "y": "target"}

    def test_missing_cell_flagged(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("x,y\n1.0,a\n,b\n2.0,a\n")
        table = load_csv(path)
        assert np.isnan(table.column("x")[1])

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("x,y\n1.0,a\n2.0\n")
        with pytest.raises(DataError, match="ragged"):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_csv(path)

    def test_unknown_schema_column(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["x", "y"], [[1, 0]])
        schema = tmp_path / "s.json"
        schema.write_text(json.dumps({"columns": [
            {"name": "x", "kind": "numerical"},
            {"name": "nope", "kind": "categorical"},
            {"name": "y", "kind": "target"},
        ]}))
        with pytest.raises(DataError, match="unknown"):
            load_csv(path, schema)


class TestQuantileTransform:
    def test_roundtrip_inside_support(self):
        rng = np.random.default_rng(0)
        col = rng.normal(10.0, 3.0, size=500)
        tr = QuantileGaussianTransform().fit(col)
        inner = np.sort(col)[50:-50]
        back = tr.inverse(tr.forward(inner))
        assert np.abs(back - inner).max() < 1e-6

    def test_forward_of_inverse(self):
        rng = np.random.default_rng(1)
        tr = QuantileGaussianTransform().fit(rng.uniform(0, 1, size=400))
        u = np.linspace(0.1, 0.9, 17)
        z = inverse_normal_cdf(u)
        z_back = tr.forward(tr.inverse(z))
        assert np.abs(z_back - z).max() < 1e-6

    def test_monotone(self):
        rng = np.random.default_rng(2)
        col = rng.exponential(size=300)
        tr = QuantileGaussianTransform().fit(col)
        xs = np.linspace(col.min(), col.max(), 200)
        out = tr.forward(xs)
        assert (np.diff(out) >= 0.0).all()

    def test_out_of_range_clips_to_extremes(self):
        tr = QuantileGaussianTransform().fit(np.linspace(0.0, 5.0, 100))
        assert tr.inverse(np.array([10.0]))[0] == 5.0
        assert tr.inverse(np.array([-10.0]))[0] == 0.0
        assert abs(tr.forward(np.array([99.0]))[0]) <= 5.2

    def test_acklam_accuracy_against_scipy(self):
        from scipy.special import ndtri
        u = np.linspace(1e-9, 1 - 1e-9, 4001)
        assert np.abs(inverse_normal_cdf(u) - ndtri(u)).max() < 1.15e-9

    def test_normal_cdf_roundtrip(self):
        z = np.linspace(-5, 5, 101)
        assert np.abs(inverse_normal_cdf(normal_cdf(z)) - z).max() < 1e-7


class TestMakeSplit:
    def test_documented_sizes(self):
        split = make_split(100, 0.2, 0.15, seed=3)
        assert len(split["test"]) == 20
        assert len(split["val"]) == 12
        assert len(split["train"]) == 68

    def test_partition_no_overlap(self):
        split = make_split(57, 0.25, 0.15, seed=1)
        joined = np.concatenate([split["train"], split["val"], split["test"]])
        assert sorted(joined.tolist()) == list(range(57))

    def test_deterministic(self):
        y = np.array([0, 1] * 50)
        a = make_split(100, 0.2, 0.15, seed=9, y=y)
        b = make_split(100, 0.2, 0.15, seed=9, y=y)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_zero_val_fraction_rejected(self):
        with pytest.raises(ValueError):
            make_split(100, 0.2, 0.0, seed=0)

    def test_stratification_preserves_class_balance(self):
        y = np.array([0] * 80 + [1] * 20)
        split = make_split(100, 0.2, 0.15, seed=5, y=y)
        test_share = (y[split["test"]] == 1).mean()
        assert abs(test_share - 0.2) < 0.051

    def test_tiny_class_downgrades_with_warning(self):
        y = np.array([0] * 98 + [1] * 2)
        with pytest.warns(UserWarning, match="unstratified"):
            make_split(100, 0.2, 0.15, seed=5, y=y)


class TestPreprocess:
    def make_table(self, n=40, seed=0):
        rng = np.random.default_rng(seed)
        rows = [[rng.normal(), rng.normal(5, 2), "A" if rng.random() < 0.5 else "B",
                 "p" if rng.random() < 0.5 else "q"] for _ in range(n)]
        return rows

    def build(self, tmp_path, rows, header=("u", "v", "c", "cls")):
        path = tmp_path / "t.csv"
        write_csv(path, list(header), rows)
        return load_csv(path)

    def test_single_category_column_dropped(self, tmp_path):
        rows = [[i * 1.0, "same", "x" if i % 2 else "y"] for i in range(30)]
        table = self.build(tmp_path, rows, header=("u", "c", "cls"))
        ds = preprocess(table, 0.2, 0.15, seed=0)
        assert "c" in ds.dropped
        assert ds.schema.m_c == 0

    def test_zero_variance_numeric_dropped(self, tmp_path):
        rows = [[7.0, i * 1.0, "x" if i % 2 else "y"] for i in range(30)]
        table = self.build(tmp_path, rows, header=("konst", "u", "cls"))
        ds = preprocess(table, 0.2, 0.15, seed=0)
        assert "konst" in ds.dropped

    def test_missing_numeric_imputed_with_train_mean(self, tmp_path):
        rows = [[i * 1.0 if i != 3 else "", "x" if i % 2 else "y"] for i in range(30)]
        path = tmp_path / "t.csv"
        write_csv(path, ["u", "cls"], rows)
        table = load_csv(path)
        ds = preprocess(table, 0.2, 0.15, seed=0)
        train_idx = ds.splits["train"]
        present = table.column("u")[train_idx]
        mean = present[~np.isnan(present)].mean()
        assert ds.imputation["numeric"]["u"] == pytest.approx(mean)
        assert np.isfinite(ds.x_num).all()

    def test_one_hot_blocks(self, tmp_path):
        rows = [[1.0 * i, "A" if i % 2 == 0 else "B", "x" if i % 2 else "y"]
                for i in range(30)]
        table = self.build(tmp_path, rows, header=("u", "c", "cls"))
        ds = preprocess(table, 0.2, 0.15, seed=0)
        row0 = ds.x_cat[0]
        np.testing.assert_array_equal(row0, [1.0, 0.0])
        assert np.abs(ds.x_cat.sum(axis=1) - 1.0).max() == 0.0

    def test_uniform_column_becomes_roughly_normal(self):
        rng = np.random.default_rng(4)
        n = 2500  # 2000 train rows at the default fractions
        cols = {"u": rng.uniform(size=n),
                "cls": np.array(["a" if v < 0.5 else "b" for v in rng.uniform(size=n)],
                                dtype=object)}
        schema = FeatureSchema.from_dict({"columns": [
            {"name": "u", "kind": "numerical"}, {"name": "cls", "kind": "target"}]})
        ds = preprocess(Table(schema, cols), 0.2, 0.15, seed=0)
        train = ds.x_num[ds.splits["train"], 0]
        assert abs(train.mean()) < 0.1
        assert abs(train.std() - 1.0) < 0.1

    def test_no_nan_inf_anywhere(self, tmp_path):
        rows = self.make_table()
        rows[5][0] = ""
        rows[7][2] = ""
        table = self.build(tmp_path, rows)
        ds = preprocess(table, 0.2, 0.15, seed=1)
        assert np.isfinite(ds.x_num).all()
        assert np.isfinite(ds.x_cat).all()

    def test_fit_ignores_val_and_test_rows(self, tmp_path):
        rows = self.make_table(n=60, seed=3)
        table = self.build(tmp_path, rows)
        split = make_split(60, 0.2, 0.15, seed=2)
        ds1 = preprocess(table, split=split)
        # permute the val rows of the input; train statistics must not move
        perm_idx = np.arange(60)
        val = split["val"]
        perm_idx[val] = val[::-1]
        table2 = table.select_rows(perm_idx)
        ds2 = preprocess(table2, split=split)
        for name, tr in ds1.transforms.items():
            np.testing.assert_array_equal(tr.knots, ds2.transforms[name].knots)

    def test_all_columns_dropped_is_an_error(self, tmp_path):
        rows = [[5.0, "x" if i % 2 else "y"] for i in range(20)]
        table = self.build(tmp_path, rows, header=("konst", "cls"))
        with pytest.raises(DataError):
            preprocess(table, 0.2, 0.15, seed=0)


class TestInverseTransform:
    def test_roundtrip_table(self, tmp_path):
        rng = np.random.default_rng(8)
        n = 50
        cols = {"u": rng.normal(size=n),
                "c": np.array(["A" if v < 0.4 else "B" for v in rng.uniform(size=n)],
                              dtype=object),
                "cls": np.array(["x" if v < 0.5 else "y" for v in rng.uniform(size=n)],
                                dtype=object)}
        schema = FeatureSchema.from_dict({"columns": [
            {"name": "u", "kind": "numerical"},
            {"name": "c", "kind": "categorical"},
            {"name": "cls", "kind": "target"}]})
        ds = preprocess(Table(schema, cols), 0.2, 0.15, seed=0)
        back = ds.original_table("train")
        train = ds.splits["train"]
        # categorical and target columns decode exactly
        assert list(back.column("c")) == list(cols["c"][train])
        assert list(back.column("cls")) == list(cols["cls"][train])
        # numerics decode to original values (train points are knots; the
        # two support-boundary points re-enter through the clip bound)
        assert np.abs(back.column("u") - cols["u"][train]).max() < 1e-6

    def test_soft_one_hot_decodes_by_argmax(self):
        block = np.array([[0.1, 0.9]])
        assert block.argmax(axis=1)[0] == 1


class TestToyGenerate:
    def test_circle_boundary_cases(self):
        r = 1.0
        assert circle_labels(np.array([0.0]), np.array([0.0]), r)[0] == 0
        assert circle_labels(np.array([r]), np.array([0.0]), r)[0] == 1
        s = np.sqrt(9.5) * r
        assert circle_labels(np.array([s]), np.array([0.0]), r)[0] == 3

    def test_reproducible(self):
        a = toy_generate("circles", 500, seed=11)
        b = toy_generate("circles", 500, seed=11)
        np.testing.assert_array_equal(a.column("x1"), b.column("x1"))
        assert list(a.column("label")) == list(b.column("label"))

    def test_circle_class_proportions_match_area_ratios(self):
        table = toy_generate("circles", 20000, seed=0, r=1.0)
        labels = np.array([int(v) for v in table.column("label")])
        area = 36.0
        expected = [np.pi / area, 3 * np.pi / area, 5 * np.pi / area,
                    (area - 9 * np.pi) / area]
        for cls, exp in enumerate(expected):
            got = (labels == cls).mean()
            assert abs(got - exp) < 0.02

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            toy_generate("spiral", 10, seed=0)

    def test_all_names_produce_tables(self):
        for name in ("circles", "sin", "blobs", "xor"):
            t = toy_generate(name, 100, seed=1)
            assert t.n_rows == 100
            assert t.schema.m_n == 2


class TestDatasetCheckpoint:
    def test_roundtrip_and_byte_identical(self, tmp_path):
        table = toy_generate("circles", 300, seed=2)
        ds = preprocess(table, 0.2, 0.15, seed=0)
        out1 = tmp_path / "d1"
        out2 = tmp_path / "d2"
        ds.save(out1)
        ds2 = Dataset.load(out1)
        np.testing.assert_array_equal(ds.x_num, ds2.x_num)
        np.testing.assert_array_equal(ds.x_cat, ds2.x_cat)
        np.testing.assert_array_equal(ds.y, ds2.y)
        for k in ds.splits:
            np.testing.assert_array_equal(ds.splits[k], ds2.splits[k])
        ds2.save(out2)
        for name in ("schema.json", "transforms.json", "splits.json", "X.bin"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_csv_roundtrip(self, tmp_path):
        table = toy_generate("xor", 120, seed=5)
        path = tmp_path / "toy.csv"
        table.write_csv(path)
        loaded = load_csv(path)
        np.testing.assert_allclose(loaded.column("x1"), table.column("x1"))
