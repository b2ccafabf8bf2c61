import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairmip.dataset import (BatchSpec, MissingnessSpec, balance, inject_missingness, load_csv,
                             missingness_report, report_to_csv, sample_batch,
                             scale_unit_interval, train_test_split, unscale)
from fairmip.errors import DataError

from conftest import make_ds


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


FIVE = "a,b,y,s\n1,2,1,0\n2,NA,0,1\n3,4,1,1\n4,5,0,0\n5,6,1,0\n"


class TestLoadCsv:
    def test_na_cell_sets_mask(self, tmp_path):
        ds = load_csv(write(tmp_path, FIVE), "y", "s")
        assert ds.n == 5 and ds.d == 2
        assert ds.mask[1, 1] and ds.mask.sum() == 1
        assert np.isnan(ds.values[1, 1])
        assert ds.diagnostics["dropped_rows"] == 0

    def test_missing_group_row_dropped(self, tmp_path):
        text = FIVE.replace("3,4,1,1", "3,4,1,NA")
        ds = load_csv(write(tmp_path, text), "y", "s")
        assert ds.n == 4
        assert ds.diagnostics["dropped_rows"] == 1
        assert ds.row_index.tolist() == [0, 1, 3, 4]

    def test_non_binary_label(self, tmp_path):
        text = FIVE.replace("5,6,1,0", "5,6,2,0")
        with pytest.raises(DataError, match="non-binary"):
            load_csv(write(tmp_path, text), "y", "s")

    def test_two_valued_strings_are_coded(self, tmp_path):
        text = "a,y,s\n1,yes,F\n2,no,M\n3,yes,M\n"
        ds = load_csv(write(tmp_path, text), "y", "s")
        assert ds.labels.tolist() == [1, 0, 1]
        assert ds.groups.tolist() == [0, 1, 1]

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(write(tmp_path, FIVE), "label", "s")

    def test_all_rows_dropped(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(write(tmp_path, "a,y,s\n1,NA,0\n2,1,NA\n"), "y", "s")

    def test_non_numeric_feature_needs_encoding(self, tmp_path):
        text = "c,y,s\nlow,1,0\nhigh,0,1\n"
        with pytest.raises(DataError):
            load_csv(write(tmp_path, text), "y", "s")
        ds = load_csv(write(tmp_path, text), "y", "s", encodings={"c": {"low": 0, "high": 2}})
        assert ds.values[:, 0].tolist() == [0.0, 2.0]

    def test_custom_token_and_delimiter(self, tmp_path):
        text = "a;y;s\n?;1;0\n2;0;1\n"
        ds = load_csv(write(tmp_path, text), "y", "s", na_token="?", delimiter=";")
        assert ds.mask[0, 0]


class TestScaling:
    def test_min_max(self):
        ds = scale_unit_interval(make_ds([2, 4, 6], [0, 1, 0], [0, 1, 1]))
        assert ds.values[:, 0].tolist() == [0.0, 0.5, 1.0]
        assert ds.scaling == ((2.0, 6.0),)

    def test_constant_column(self):
        ds = scale_unit_interval(make_ds([5, 5, 5], [0, 1, 0], [0, 1, 1]))
        assert ds.values[:, 0].tolist() == [0.0, 0.0, 0.0]
        assert ds.scaling == ((5.0, 5.0),)

    def test_masked_cells_ignored(self):
        ds = scale_unit_interval(make_ds([1, np.nan, 3], [0, 1, 0], [0, 1, 1]))
        assert ds.mask.tolist() == [[False], [True], [False]]
        assert ds.values[0, 0] == 0.0 and ds.values[2, 0] == 1.0

    def test_double_scaling_rejected(self):
        ds = scale_unit_interval(make_ds([1, 2], [0, 1], [0, 1]))
        with pytest.raises(DataError):
            scale_unit_interval(ds)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=20))
    def test_unscale_round_trip(self, col):
        n = len(col)
        ds = make_ds(col, [i % 2 for i in range(n)], [i % 2 for i in range(n)])
        back = unscale(scale_unit_interval(ds))[:, 0]
        assert np.allclose(back, col, rtol=0, atol=1e-9 * max(1.0, max(map(abs, col))))


def _big(n=4000, seed=0):
    rng = np.random.default_rng(seed)
    g = np.arange(n) % 2
    return make_ds(rng.random((n, 3)), rng.integers(0, 2, n), g, names=("f", "h", "r"))


class TestInjection:
    def test_zero_spec_is_identity(self):
        ds = _big(200)
        out = inject_missingness(ds, MissingnessSpec((("f", 0.0, 0.0),)), 3)
        assert np.array_equal(out.mask, ds.mask)
        assert np.array_equal(out.values, ds.values)

    def test_certain_erasure_of_group0(self):
        ds = _big(200)
        out = inject_missingness(ds, MissingnessSpec((("f", 1.0, 0.0),)), 3)
        j = ds.feature_index("f")
        assert out.mask[ds.groups == 0, j].all()
        assert not out.mask[ds.groups == 1, j].any()

    def test_adult_style_rates_within_three_se(self):
        spec = MissingnessSpec((("f", 0.0, 0.4), ("h", 0.0, 0.3), ("r", 0.2, 0.2)))
        out = inject_missingness(_big(), spec, 11)
        target = {(f, g): p for f, p0, p1 in spec.entries for g, p in ((0, p0), (1, p1))}
        for row in missingness_report(out):
            p = target[(row["feature"], row["group"])]
            se = math.sqrt(p * (1 - p) / row["n"])
            assert abs(row["rate"] - p) <= 3 * se + 1e-12

    def test_standardized_errors_are_calibrated(self):
        # pooled over many seeds the z-scores should look standard normal;
        # with 1000 draws both bounds sit more than 4 sigma from the expected values
        spec = MissingnessSpec((("f", 0.4, 0.1), ("r", 0.6, 0.2), ("h", 0.0, 0.3)))
        ds = _big()
        zs = []
        for seed in range(200):
            out = inject_missingness(ds, spec, seed)
            for f, p0, p1 in spec.entries:
                col = out.mask[:, ds.feature_index(f)]
                for g, p in ((0, p0), (1, p1)):
                    if 0 < p < 1:
                        n_g = int((ds.groups == g).sum())
                        zs.append((col[ds.groups == g].mean() - p) / math.sqrt(p * (1 - p) / n_g))
        zs = np.array(zs)
        assert abs(zs.mean()) < 5 / math.sqrt(zs.size)
        assert 0.8 < zs.var() < 1.2

    def test_unknown_feature(self):
        with pytest.raises(DataError):
            inject_missingness(_big(10), MissingnessSpec((("zzz", 0.1, 0.1),)), 0)

    def test_never_unmasks_and_only_listed_features(self):
        ds = make_ds([[np.nan, 1.0], [2.0, 3.0], [4.0, 5.0]], [0, 1, 0], [0, 1, 1])
        out = inject_missingness(ds, MissingnessSpec((("x1", 0.0, 0.0),)), 0)
        assert out.mask[0, 0]
        out = inject_missingness(ds, MissingnessSpec((("x1", 1.0, 1.0),)), 0)
        assert out.mask[:, 1].all() and out.mask[:, 0].tolist() == [True, False, False]

    def test_deterministic(self):
        spec = MissingnessSpec((("f", 0.3, 0.6),))
        a = inject_missingness(_big(300), spec, 5)
        b = inject_missingness(_big(300), spec, 5)
        assert np.array_equal(a.mask, b.mask)

    def test_spec_json_round_trip(self):
        spec = MissingnessSpec((("f", 0.1, 0.2),))
        assert MissingnessSpec.from_json(spec.to_json()) == spec
        with pytest.raises(DataError):
            MissingnessSpec.from_json([{"feature": "f", "p0": 1.5, "p1": 0}])


class TestSplitAndBatch:
    def test_split_sizes(self):
        ds = make_ds(np.arange(10.0), [0, 1] * 5, [0] * 5 + [1] * 5)
        tr, te = train_test_split(ds, 0.3, 0)
        assert (tr.n, te.n) == (7, 3)
        assert sorted(tr.row_index.tolist() + te.row_index.tolist()) == list(range(10))
        both = np.concatenate([tr.values[:, 0], te.values[:, 0]])
        assert sorted(both.tolist()) == list(range(10))

    def test_split_deterministic_and_stratified(self):
        ds = _big(101)
        a = train_test_split(ds, 0.25, 9)
        b = train_test_split(ds, 0.25, 9)
        assert np.array_equal(a[1].values, b[1].values)
        for g in (0, 1):
            expect = 0.25 * (ds.groups == g).sum()
            assert abs((a[1].groups == g).sum() - expect) <= 1

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_degenerate_fraction(self, frac):
        with pytest.raises(DataError):
            train_test_split(_big(10), frac, 0)

    def test_batch_is_whole_dataset(self):
        ds = _big(20)
        b = sample_batch(ds, BatchSpec(20, 1))
        assert sorted(b.values[:, 0].tolist()) == sorted(ds.values[:, 0].tolist())

    def test_batch_covers_all_cells(self):
        labels = [0] * 30 + [1] * 2 + [0] * 30 + [1] * 2
        groups = [0] * 32 + [1] * 32
        ds = make_ds(np.arange(64.0), labels, groups)
        for seed in range(20):
            b = sample_batch(ds, BatchSpec(8, seed))
            cells = set(zip(b.groups.tolist(), b.labels.tolist()))
            assert cells == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_batch_deterministic_and_errors(self):
        ds = _big(50)
        assert np.array_equal(sample_batch(ds, BatchSpec(10, 4)).values,
                              sample_batch(ds, BatchSpec(10, 4)).values)
        with pytest.raises(DataError):
            sample_batch(ds, BatchSpec(51, 0))
        with pytest.raises(DataError):
            sample_batch(ds, BatchSpec(3, 0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(8, 60), st.integers(0, 10_000))
    def test_batch_rows_travel_together(self, n, seed):
        rng = np.random.default_rng(seed)
        vals = rng.random((n, 2))
        mask = rng.random((n, 2)) < 0.3
        ds = make_ds(np.where(mask, np.nan, vals), rng.integers(0, 2, n), np.arange(n) % 2, mask)
        size = int(rng.integers(4, n + 1))
        b = sample_batch(ds, BatchSpec(size, seed))
        assert b.n == size
        for r in range(b.n):
            k = int(b.row_index[r])
            assert b.labels[r] == ds.labels[k] and b.groups[r] == ds.groups[k]
            assert np.array_equal(b.mask[r], ds.mask[k])
        assert len(set(b.row_index.tolist())) == b.n

    def test_balance(self):
        ds = make_ds(np.arange(10.0), [0, 1] * 5, [0] * 7 + [1] * 3)
        out = balance(ds, "group", 0)
        assert (out.groups == 0).sum() == (out.groups == 1).sum() == 3


class TestReport:
    def test_no_mask(self):
        assert all(r["rate"] == 0 for r in missingness_report(_big(20)))

    def test_hand_count(self, tmp_path):
        ds = make_ds([1, 2, 3, np.nan, np.nan, 6], [0, 1, 0, 1, 0, 1], [0, 0, 1, 1, 1, 1])
        row = [r for r in missingness_report(ds) if r["group"] == 1][0]
        assert row["n"] == 4 and row["rate"] == 0.5 and row["se"] == 0.25
        report_to_csv(missingness_report(ds), tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "feature,group,n,missing,rate,se"
