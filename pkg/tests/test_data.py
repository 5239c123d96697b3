"""CSV parsing, normalization/splitting, and the reported metrics."""

import numpy as np
import pytest

from gvidgp.data import (
    NormStats,
    Table,
    build_dataset,
    load_csv,
    make_contaminated_sine,
    normalize_split,
    rmse,
    write_csv,
)
from gvidgp.data import test_log_likelihood as mean_log_density
from gvidgp.exceptions import DimensionMismatch, EmptyFile, ParseError, TooFewRows


class TestLoadCsv:
    def test_header_and_three_rows(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("a,b\n1,2\n3,4\n5,6\n")
        table = load_csv(f, has_header=True)
        assert table.header == ["a", "b"]
        assert table.values.shape == (3, 2)
        np.testing.assert_array_equal(table.values, [[1, 2], [3, 4], [5, 6]])

    def test_parse_error_location(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("1,x\n")
        with pytest.raises(ParseError) as err:
            load_csv(f)
        assert err.value.row == 1 and err.value.column == 2 and err.value.content == "x"

    def test_empty_file(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("")
        with pytest.raises(EmptyFile):
            load_csv(f)
        f.write_text("a,b\n")
        with pytest.raises(EmptyFile):
            load_csv(f, has_header=True)

    def test_ragged_rows_rejected(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("1,2\n3\n")
        with pytest.raises(ParseError):
            load_csv(f)

    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((100, 5))
        f = tmp_path / "t.csv"
        write_csv(f, values)
        back = load_csv(f)
        np.testing.assert_array_equal(back.values, values)

    def test_target_column_validation(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("1,2\n3,4\n")
        with pytest.raises(ParseError):
            load_csv(f, target_columns=[5])
        load_csv(f, target_columns=[-1])  # negative indexing fine


class TestNormalizeSplit:
    def _table(self, n=100, d=4, seed=0):
        rng = np.random.default_rng(seed)
        return Table(values=rng.standard_normal((n, d)) * 3.0 + 1.0, header=None)

    def test_ninety_ten_split(self):
        ds = normalize_split(self._table(100), [-1], 0.1, seed=0)
        assert len(ds.train_indices) == 90
        assert len(ds.test_indices) == 10

    def test_train_statistics_are_zscore(self):
        ds = normalize_split(self._table(200), [-1], 0.1, seed=1)
        x_tr, y_tr = ds.train_xy()
        assert np.abs(x_tr.mean(axis=0)).max() < 1e-10
        assert np.abs(x_tr.std(axis=0) - 1).max() < 1e-10
        assert np.abs(y_tr.mean(axis=0)).max() < 1e-10

    def test_same_seed_same_split(self):
        t = self._table(80)
        a = normalize_split(t, [0], 0.2, seed=5)
        b = normalize_split(t, [0], 0.2, seed=5)
        np.testing.assert_array_equal(a.train_indices, b.train_indices)
        np.testing.assert_array_equal(a.test_indices, b.test_indices)

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            normalize_split(self._table(8), [-1], 0.2, seed=0)

    def test_nan_rows_dropped_with_count(self):
        t = self._table(50)
        t.values[3, 1] = np.nan
        t.values[17, 0] = np.nan
        ds = normalize_split(t, [-1], 0.2, seed=0)
        assert ds.n_dropped == 2
        assert ds.x.shape[0] == 48
        assert not np.isnan(ds.x).any() and not np.isnan(ds.y).any()

    def test_constant_column_gets_unit_std(self, caplog):
        t = self._table(40)
        t.values[:, 1] = 7.0
        with caplog.at_level("WARNING"):
            ds = normalize_split(t, [-1], 0.2, seed=0)
        assert ds.feature_stats.std[1] == 1.0
        assert any("constant" in r.message for r in caplog.records)


class TestRmse:
    def test_zero_when_equal(self):
        stats = NormStats(mean=np.zeros(1), std=np.ones(1))
        assert rmse(np.ones((5, 1)), np.ones((5, 1)), stats) == 0.0

    def test_unit_offset(self):
        stats = NormStats(mean=np.zeros(1), std=np.ones(1))
        assert abs(rmse(np.ones((7, 1)), np.zeros((7, 1)), stats) - 1.0) < 1e-15

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        pred, truth = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
        stats = NormStats(mean=rng.standard_normal(2), std=np.array([2.0, 0.5]))
        total = 0.0
        for i in range(30):
            for j in range(2):
                total += ((pred[i, j] - truth[i, j]) * stats.std[j]) ** 2
        expected = np.sqrt(total / 60.0)
        assert abs(rmse(pred, truth, stats) - expected) < 1e-12

    def test_shape_mismatch(self):
        stats = NormStats(mean=np.zeros(1), std=np.ones(1))
        with pytest.raises(DimensionMismatch):
            rmse(np.ones((3, 1)), np.ones((4, 1)), stats)


class TestTestLogLikelihood:
    def test_point_mass_like_predictive_is_zero(self):
        # predictive N(y; y, 1/(2*pi)) has density exactly 1
        y = np.random.default_rng(2).standard_normal((6, 1))
        var = 1.0 / (2 * np.pi)

        def evaluator(targets):
            return -0.5 * (np.log(2 * np.pi * var) + (targets - y) ** 2 / var).sum(axis=1)

        stats = NormStats(mean=np.zeros(1), std=np.ones(1))
        assert abs(mean_log_density(evaluator, y, stats)) < 1e-12

    def test_doubling_std_shifts_by_log_two_per_dim(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal((10, 2))

        def evaluator(targets):
            return -0.5 * (np.log(2 * np.pi) + targets**2).sum(axis=1)

        base = mean_log_density(evaluator, y, NormStats(np.zeros(2), np.ones(2)))
        doubled = mean_log_density(evaluator, y, NormStats(np.zeros(2), 2 * np.ones(2)))
        assert abs((doubled - base) + 2 * np.log(2.0)) < 1e-12

    def test_mixture_evaluator_against_direct_sum(self):
        # two-component mixture; evaluator built by hand, then cross-checked
        # against an independent direct computation including the unit check
        from scipy.integrate import quad

        means, var = np.array([-1.0, 2.0]), 0.3

        def evaluator(targets):
            comps = np.stack(
                [
                    -0.5 * (np.log(2 * np.pi * var) + (targets[:, 0] - m) ** 2 / var)
                    for m in means
                ]
            )
            mx = comps.max(axis=0)
            return mx + np.log(np.mean(np.exp(comps - mx), axis=0))

        total, _ = quad(lambda v: np.exp(evaluator(np.array([[v]])))[0], -20, 20)
        assert abs(total - 1.0) < 1e-6
        y = np.array([[0.3]])
        direct = 0.5 * sum(
            np.exp(-0.5 * (0.3 - m) ** 2 / var) / np.sqrt(2 * np.pi * var) for m in means
        )
        stats = NormStats(np.zeros(1), np.full(1, 1.7))
        got = mean_log_density(evaluator, y, stats)
        assert abs(got - (np.log(direct) - np.log(1.7))) < 1e-12


class TestDenormalizationInvariance:
    def test_prescaled_copy_trains_to_identical_metrics(self):
        from gvidgp.dgp import init_model, predict
        from gvidgp.divergences import QuantifierSpec
        from gvidgp.losses import LossSpec
        from gvidgp.training import TrainConfig, train

        rng = np.random.default_rng(4)
        x = rng.uniform(-2, 2, (40, 1))
        y = np.sin(x) + 0.1 * rng.standard_normal((40, 1))
        results = []
        for scale, shift in ((1.0, 0.0), (12.5, -3.0)):
            ds = build_dataset(scale * x + shift, scale * y + shift, np.arange(36), np.arange(36, 40))
            x_tr, y_tr = ds.train_xy()
            model = init_model(x_tr, y_tr, num_layers=1, num_inducing=8, seed=0)
            trained, _ = train(
                model, ds, LossSpec.nll(), (QuantifierSpec.kld(),), TrainConfig(iterations=60, seed=0)
            )
            pred, _, _ = predict(trained, ds.test_xy()[0], n_samples=5, seed=0)
            results.append(rmse(pred, ds.test_xy()[1], ds.target_stats) / scale)
        assert abs(results[0] - results[1]) < 1e-6


class TestContaminatedSine:
    def test_outliers_only_in_train(self):
        ds = make_contaminated_sine(n=200, test_fraction=0.4, outlier_offset=8.0, seed=0)
        _, y_tr = ds.train_xy()
        _, y_te = ds.test_xy()
        y_tr_orig = y_tr * ds.target_stats.std + ds.target_stats.mean
        y_te_orig = y_te * ds.target_stats.std + ds.target_stats.mean
        assert np.abs(y_tr_orig).max() > 5.0
        assert np.abs(y_te_orig).max() < 3.0

    def test_contamination_rate(self):
        ds = make_contaminated_sine(n=300, test_fraction=0.3, outlier_fraction=0.05, seed=1)
        _, y_tr = ds.train_xy()
        y_orig = y_tr * ds.target_stats.std + ds.target_stats.mean
        frac = np.mean(np.abs(y_orig) > 4.0)
        assert 0.02 < frac < 0.08
