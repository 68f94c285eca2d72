import numpy as np
import pytest

from vanetpos.channel import ChannelModel, SurveyLayout, generate_survey, standard_rsu_row
from vanetpos.errors import DimensionMismatch, EmptyBatch, TooFewSamples
from vanetpos.nn import (
    NnDataset,
    SweepConfig,
    TrainConfig,
    batch_loss,
    dataset_from_survey,
    forward,
    forward_batch,
    gradients,
    init_mlp,
    split_dataset,
    sweep,
    train,
)


def linear_task(n=41, span_m=20.0):
    """Noise-free: position is a linear function of one RSS input."""
    rss = np.linspace(-90.0, -50.0, n)
    pos = span_m / 40.0 * (rss + 90.0)
    return NnDataset(inputs=rss[:, None], targets=pos, feature_names=("ap",))


def numeric_gradient(model, inputs, targets, h=1e-5):
    """Central finite differences of batch_loss over every parameter."""

    def loss_with(w1, b1, w2, b2):
        m = model.copy()
        m.w1, m.b1, m.w2, m.b2 = w1, b1, w2, b2
        return batch_loss(m, inputs, targets)

    g_w1 = np.zeros_like(model.w1)
    for idx in np.ndindex(model.w1.shape):
        wp, wm = model.w1.copy(), model.w1.copy()
        wp[idx] += h
        wm[idx] -= h
        g_w1[idx] = (
            loss_with(wp, model.b1, model.w2, model.b2)
            - loss_with(wm, model.b1, model.w2, model.b2)
        ) / (2 * h)
    g_b1 = np.zeros_like(model.b1)
    for i in range(len(model.b1)):
        bp, bm = model.b1.copy(), model.b1.copy()
        bp[i] += h
        bm[i] -= h
        g_b1[i] = (
            loss_with(model.w1, bp, model.w2, model.b2)
            - loss_with(model.w1, bm, model.w2, model.b2)
        ) / (2 * h)
    g_w2 = np.zeros_like(model.w2)
    for i in range(len(model.w2)):
        wp, wm = model.w2.copy(), model.w2.copy()
        wp[i] += h
        wm[i] -= h
        g_w2[i] = (
            loss_with(model.w1, model.b1, wp, model.b2)
            - loss_with(model.w1, model.b1, wm, model.b2)
        ) / (2 * h)
    g_b2 = (
        loss_with(model.w1, model.b1, model.w2, model.b2 + h)
        - loss_with(model.w1, model.b1, model.w2, model.b2 - h)
    ) / (2 * h)
    return g_w1, g_b1, g_w2, g_b2


class TestSplitDataset:
    def test_41_samples(self):
        s = split_dataset(41, seed=0)
        assert (len(s.train), len(s.validation), len(s.test)) == (29, 6, 6)

    def test_100_samples(self):
        s = split_dataset(100, seed=0)
        assert (len(s.train), len(s.validation), len(s.test)) == (70, 15, 15)

    def test_disjoint_and_exhaustive(self):
        for seed in range(10):
            s = split_dataset(53, seed=seed)
            combined = set(s.train) | set(s.validation) | set(s.test)
            assert combined == set(range(53))
            assert len(s.train) + len(s.validation) + len(s.test) == 53

    def test_deterministic(self):
        assert split_dataset(41, seed=5) == split_dataset(41, seed=5)

    def test_seeds_differ(self):
        a, b = split_dataset(41, seed=1), split_dataset(41, seed=2)
        assert a != b
        assert len(a.train) == len(b.train)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            split_dataset(6, seed=0)


class TestInitMlp:
    def test_deterministic(self):
        assert init_mlp(3, 8, seed=7) == init_mlp(3, 8, seed=7)

    def test_weight_bounds(self):
        m = init_mlp(4, 9, seed=1)
        assert np.all(np.abs(m.w1) <= 1.0 / np.sqrt(4))
        assert np.all(np.abs(m.w2) <= 1.0 / np.sqrt(9))
        assert np.all(m.b1 == 0.0)
        assert m.b2 == 0.0

    def test_seeds_differ(self):
        assert init_mlp(3, 8, seed=1) != init_mlp(3, 8, seed=2)

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            init_mlp(0, 5, seed=0)


class TestForward:
    def test_zero_weights_give_output_midpoint(self):
        m = init_mlp(2, 4, seed=0)
        m.w1 = np.zeros_like(m.w1)
        m.w2 = np.zeros_like(m.w2)
        m.out_min, m.out_max = 0.0, 200.0
        assert forward(m, [-60.0, -70.0]) == pytest.approx(100.0)

    def test_pure(self):
        m = init_mlp(3, 5, seed=2)
        x = [-55.0, -60.0, -80.0]
        assert forward(m, x) == forward(m, x)

    def test_weight_bump_changes_output_by_activation(self):
        m = init_mlp(2, 4, seed=3)
        x = np.array([-60.0, -70.0])
        xn = 2.0 * (x - m.in_min) / (m.in_max - m.in_min) - 1.0
        activation = np.tanh(m.w1 @ xn + m.b1)
        base = forward(m, x)
        delta = 0.37
        m2 = m.copy()
        m2.w2 = m.w2.copy()
        m2.w2[1] += delta
        bumped = forward(m2, x)
        half_range = (m.out_max - m.out_min) / 2.0
        assert bumped - base == pytest.approx(
            delta * activation[1] * half_range, rel=1e-9
        )

    def test_dimension_mismatch(self):
        m = init_mlp(3, 4, seed=0)
        with pytest.raises(DimensionMismatch):
            forward(m, [-60.0, -70.0])


class TestGradients:
    def test_zero_at_perfect_fit(self):
        # a model that already maps its data exactly has zero gradient
        m = init_mlp(1, 3, seed=1)
        x = np.linspace(-1.0, 1.0, 9)[:, None]
        y_norm = np.array(
            [float(np.tanh(xi @ m.w1.T + m.b1) @ m.w2 + m.b2) for xi in x]
        )
        y = (y_norm + 1.0) / 2.0 * (m.out_max - m.out_min) + m.out_min
        g = gradients(m, x, y)
        assert np.max(np.abs(g.w1)) < 1e-10
        assert np.max(np.abs(g.b1)) < 1e-10
        assert np.max(np.abs(g.w2)) < 1e-10
        assert abs(g.b2) < 1e-10

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        for trial in range(10):
            d = int(rng.integers(1, 4))
            h = int(rng.integers(2, 11))
            m = init_mlp(d, h, seed=trial)
            m.in_min = -90.0 * np.ones(d)
            m.in_max = -50.0 * np.ones(d)
            m.out_min, m.out_max = 0.0, 200.0
            x = rng.uniform(-90.0, -50.0, size=(6, d))
            y = rng.uniform(0.0, 200.0, size=6)
            g = gradients(m, x, y)
            n_w1, n_b1, n_w2, n_b2 = numeric_gradient(m, x, y)
            assert np.allclose(g.w1, n_w1, rtol=1e-6, atol=1e-9)
            assert np.allclose(g.b1, n_b1, rtol=1e-6, atol=1e-9)
            assert np.allclose(g.w2, n_w2, rtol=1e-6, atol=1e-9)
            assert g.b2 == pytest.approx(n_b2, rel=1e-6, abs=1e-9)

    def test_batch_gradient_is_mean_of_singles(self):
        m = init_mlp(2, 4, seed=5)
        x = np.array([[-60.0, -75.0], [-80.0, -55.0]])
        y = np.array([40.0, 160.0])
        m.in_min = np.array([-90.0, -90.0])
        m.in_max = np.array([-50.0, -50.0])
        m.out_min, m.out_max = 0.0, 200.0
        g_both = gradients(m, x, y)
        g_a = gradients(m, x[:1], y[:1])
        g_b = gradients(m, x[1:], y[1:])
        assert np.allclose(g_both.w1, (g_a.w1 + g_b.w1) / 2, rtol=1e-12, atol=1e-15)
        assert np.allclose(g_both.w2, (g_a.w2 + g_b.w2) / 2, rtol=1e-12, atol=1e-15)
        assert g_both.b2 == pytest.approx((g_a.b2 + g_b.b2) / 2, rel=1e-12)

    def test_empty_batch(self):
        m = init_mlp(2, 3, seed=0)
        with pytest.raises(EmptyBatch):
            gradients(m, np.empty((0, 2)), np.empty(0))


class TestTrain:
    def test_linear_task_converges(self):
        ds = linear_task()
        splits = split_dataset(ds.n, seed=3)
        model = init_mlp(1, 8, seed=3)
        config = TrainConfig(
            max_epochs=4000, patience=4000, learning_rate=0.1, momentum=0.95, seed=3
        )
        trained, history = train(model, ds, splits, config)
        pred = forward_batch(trained, ds.inputs)
        test = list(splits.test)
        mse_test = float(np.mean((pred[test] - ds.targets[test]) ** 2))
        assert mse_test < 1e-2

    def test_history_bounded_and_best_returned(self):
        ds = linear_task()
        splits = split_dataset(ds.n, seed=1)
        model = init_mlp(1, 4, seed=1)
        config = TrainConfig(max_epochs=200, patience=10, learning_rate=0.05, seed=1)
        trained, history = train(model, ds, splits, config)
        assert len(history) <= config.max_epochs
        val = list(splits.validation)
        returned_val_mse = float(
            np.mean((forward_batch(trained, ds.inputs)[val] - ds.targets[val]) ** 2)
        )
        best_in_history = min(r.val_mse_m2 for r in history)
        assert returned_val_mse == pytest.approx(best_in_history, rel=1e-9)

    def test_early_stopping_never_returns_worse_than_final(self):
        layout = SurveyLayout(rsus=standard_rsu_row([0.0, 100.0, 200.0], [1, 7, 13]))
        survey = generate_survey(layout, ChannelModel(), seed=2)
        ds = dataset_from_survey(survey)
        splits = split_dataset(ds.n, seed=2)
        model = init_mlp(3, 6, seed=2)
        trained, history = train(model, ds, splits, TrainConfig(seed=2))
        val = list(splits.validation)
        returned = float(
            np.mean((forward_batch(trained, ds.inputs)[val] - ds.targets[val]) ** 2)
        )
        assert returned <= history[-1].val_mse_m2 + 1e-12

    def test_deterministic(self):
        ds = linear_task()
        splits = split_dataset(ds.n, seed=4)
        config = TrainConfig(max_epochs=100, seed=4)
        a, _ = train(init_mlp(1, 4, seed=4), ds, splits, config)
        b, _ = train(init_mlp(1, 4, seed=4), ds, splits, config)
        assert a == b


class TestSweep:
    @staticmethod
    def survey_dataset(channels=(1, 7, 13), seed=11):
        layout = SurveyLayout(rsus=standard_rsu_row([0.0, 100.0, 200.0], channels))
        return dataset_from_survey(
            generate_survey(layout, ChannelModel(), seed=seed)
        )

    def test_row_count_matches_grid(self):
        ds = self.survey_dataset()
        config = SweepConfig(
            hidden_sizes=(2, 3), seeds=(0, 1), train=TrainConfig(max_epochs=50)
        )
        table = sweep(ds, config)
        assert len(table.rows) == 4
        assert {(r.hidden, r.seed) for r in table.rows} == {
            (2, 0), (2, 1), (3, 0), (3, 1)
        }

    def test_sorted_by_mse_all(self):
        ds = self.survey_dataset()
        config = SweepConfig(
            hidden_sizes=(2, 4, 6), seeds=(0, 1, 2), train=TrainConfig(max_epochs=60)
        )
        table = sweep(ds, config)
        mses = [r.all.mse for r in table.rows]
        assert mses == sorted(mses)
        assert table.best().all.mse == min(mses)
        assert [r.rank for r in table.rows] == list(range(1, len(mses) + 1))

    def test_deterministic(self):
        ds = self.survey_dataset()
        config = SweepConfig(
            hidden_sizes=(2, 3), seeds=(0, 1), train=TrainConfig(max_epochs=40)
        )
        assert sweep(ds, config) == sweep(ds, config)

    def test_grid_order_does_not_change_table(self):
        ds = self.survey_dataset()
        fwd = SweepConfig(
            hidden_sizes=(2, 3, 4), seeds=(0, 1), train=TrainConfig(max_epochs=40)
        )
        rev = SweepConfig(
            hidden_sizes=(4, 3, 2), seeds=(1, 0), train=TrainConfig(max_epochs=40)
        )
        assert sweep(ds, fwd) == sweep(ds, rev)

    def test_default_grid_is_180_jobs(self):
        config = SweepConfig()
        assert len(config.hidden_sizes) * len(config.seeds) == 180


class TestDatasetFromSurvey:
    def test_shape_and_targets(self):
        layout = SurveyLayout(rsus=standard_rsu_row([0.0, 100.0, 200.0], [1, 7, 13]))
        survey = generate_survey(layout, ChannelModel(), seed=1)
        ds = dataset_from_survey(survey)
        assert ds.inputs.shape == (41, 3)
        assert ds.feature_names == ("ap0", "ap100", "ap200")
        assert ds.targets[0] == 0.0 and ds.targets[-1] == 200.0
