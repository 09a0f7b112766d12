import copy
import warnings

import numpy as np
import pytest

from stcast.causal import AdjustedPanel
from stcast.errors import (
    InputValidationError,
    InsufficientDataError,
    PropagationError,
)
from stcast.forecaster import (
    ForecastDistribution,
    ForecastModel,
    ModelConfig,
    encode_step,
    project,
)
from stcast import heads

from conftest import make_panel


def small_config(**overrides):
    base = dict(hidden_size=8, num_layers=2, distribution="gaussian",
                context_len=10, horizon=2, learning_rate=0.02, epochs=8,
                grad_clip=5.0, num_samples=20, seed=0, batch_size=16)
    base.update(overrides)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ModelConfig(**base)


def random_training_data(seed=0, n=3, t=60):
    rng = np.random.default_rng(seed)
    y = np.cumsum(rng.normal(0, 0.3, size=(n, t)), axis=1)
    panel = make_panel(y, c=rng.normal(size=(n, t, 4)))
    z = y + 0.3 * rng.normal(size=(n, t))
    return AdjustedPanel(y_tilde=y.copy(), z=z), panel


class TestModelConfig:
    def test_ratio_warning(self):
        with pytest.warns(RuntimeWarning, match="5:1"):
            ModelConfig(context_len=10, horizon=5)

    def test_five_to_one_default_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ModelConfig()   # 25:5 is exactly 5:1

    def test_invalid_fields(self):
        with pytest.raises(InputValidationError):
            small_config(hidden_size=0)
        with pytest.raises(InputValidationError):
            small_config(distribution="poisson")


class TestEncodeProject:
    def test_zero_weights_zero_input_zero_hidden(self):
        model = ForecastModel(small_config())
        for key, value in model.params.items():
            model.params[key] = np.zeros_like(value)
        model.gru.params = model.params
        hidden = model.gru.init_hidden(1)
        out = encode_step(model, hidden, np.zeros(2))
        for h in out:
            assert np.array_equal(h, np.zeros((1, 8)))

    def test_purity(self):
        model = ForecastModel(small_config(seed=5))
        x = np.array([0.3, -1.2])
        h0 = model.gru.init_hidden(1)
        a = encode_step(model, h0, x)
        b = encode_step(model, model.gru.init_hidden(1), x)
        for ha, hb in zip(a, b):
            assert np.array_equal(ha, hb)

    def test_nonfinite_input_propagation_error(self):
        model = ForecastModel(small_config())
        with pytest.raises(PropagationError, match="time 7"):
            encode_step(model, model.gru.init_hidden(1),
                        np.array([np.nan, 0.0]), time_index=7)

    def test_project_zero_hidden_zero_weights(self):
        w = np.zeros((8, 2))
        b = np.zeros(2)
        p = project(np.zeros((1, 8)), w, b, "gaussian")
        assert p.mu[0] == 0.0
        assert p.sigma[0] == pytest.approx(np.log(2.0) + 1e-6, abs=1e-12)

    def test_project_ranges_any_hidden(self):
        rng = np.random.default_rng(8)
        w = rng.normal(size=(8, 3))
        b = rng.normal(size=3)
        p = project(rng.normal(size=(5, 8)), w, b, "student_t")
        assert np.all(p.sigma > 0)
        assert np.all(p.nu > 2)

    def test_project_matches_oracle(self):
        rng = np.random.default_rng(9)
        hidden = rng.normal(size=(1, 8))
        w = rng.normal(size=(8, 2))
        b = rng.normal(size=2)
        p = project(hidden, w, b, "gaussian")
        raw = hidden @ w + b
        assert p.mu[0] == pytest.approx(raw[0, 0], abs=1e-12)
        assert p.sigma[0] == pytest.approx(
            np.logaddexp(0.0, raw[0, 1]) + 1e-6, abs=1e-12)


class TestTraining:
    def test_constant_series_converges(self):
        n, t = 2, 50
        y = np.full((n, t), 7.0)
        panel = make_panel(y, c=np.zeros((n, t, 1)))
        adjusted = AdjustedPanel(y_tilde=y.copy(), z=y.copy())
        model = ForecastModel(small_config(epochs=10, learning_rate=0.005,
                                           grad_clip=1.0))
        trace = model.fit(adjusted, panel)
        assert len(trace) == 10
        diffs = np.diff(trace[:10])
        assert np.all(diffs <= 1e-9)
        # The head's location converges to the standardized constant (0).
        zs, ys = model._standardize(adjusted.z, panel.y)
        hidden, z_last = model._encode_history(zs, ys, 1)
        raw = hidden[-1] @ model.params["head.W"] + model.params["head.b"]
        mu = raw[:, 0]
        assert np.max(np.abs(mu)) < 0.05

    def test_zero_learning_rate_identity(self):
        adjusted, panel = random_training_data(1)
        model = ForecastModel(small_config(learning_rate=0.0, epochs=3))
        before = copy.deepcopy(model.params)
        model.fit(adjusted, panel)
        for key in before:
            assert np.array_equal(before[key], model.params[key])

    def test_insufficient_history_rejected(self):
        adjusted, panel = random_training_data(2, t=11)
        model = ForecastModel(small_config())   # needs 10 + 2
        with pytest.raises(InsufficientDataError):
            model.fit(adjusted, panel)

    def test_loss_decreases_on_learnable_series(self):
        adjusted, panel = random_training_data(3)
        model = ForecastModel(small_config(epochs=12))
        trace = model.fit(adjusted, panel)
        assert trace[-1] < trace[0]

    def test_factorization_fidelity_naive_oracle(self):
        adjusted, panel = random_training_data(4, n=2, t=30)
        cfg = small_config(context_len=5, horizon=1, epochs=2)
        model = ForecastModel(cfg)
        model.fit(adjusted, panel)
        total, count = model.total_training_nll(adjusted, panel)

        # Naive oracle: loop windows and steps one by one.
        zs, ys = model._standardize(adjusted.z, panel.y)
        ts = (adjusted.y_tilde - model.scaler["y_mean"][:, None]) \
            / model.scaler["y_std"][:, None]
        n, t = ys.shape
        t0 = cfg.context_len
        naive = 0.0
        terms = 0
        for i in range(n):
            for s in range(t - t0):
                hidden = model.gru.init_hidden(1)
                for k in range(t0):
                    x = np.array([[zs[i, s + k], ys[i, s + k]]])
                    hidden, _ = model.gru.step(x, hidden)
                    raw = hidden[-1] @ model.params["head.W"] + model.params["head.b"]
                    params = heads.project_raw(raw, cfg.distribution)
                    naive += heads.nll(params, ts[i, s + k + 1]).item()
                    terms += 1
        assert count == terms
        assert total == pytest.approx(naive, rel=1e-12)

    @pytest.mark.parametrize("family", ["gaussian", "laplace", "student_t"])
    def test_gradcheck_all_families(self, family):
        rng = np.random.default_rng(10)
        cfg = small_config(distribution=family, hidden_size=6, context_len=6)
        model = ForecastModel(cfg)
        batch_in = rng.normal(size=(3, 6, 2))
        batch_tgt = rng.normal(size=(3, 6))
        _, grads = model._batch_forward_backward(batch_in, batch_tgt)

        def loss():
            value, _ = model._batch_forward_backward(batch_in, batch_tgt)
            return value / batch_tgt.size

        worst = 0.0
        for key in model.params:
            flat = model.params[key].reshape(-1)
            for idx in rng.choice(flat.size, size=min(3, flat.size),
                                  replace=False):
                orig = flat[idx]
                flat[idx] = orig + 1e-5
                up = loss()
                flat[idx] = orig - 1e-5
                dn = loss()
                flat[idx] = orig
                fd = (up - dn) / 2e-5
                an = grads[key].reshape(-1)[idx]
                worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
        assert worst < 1e-4


class TestForecast:
    def _fitted(self, seed=0, family="gaussian"):
        adjusted, panel = random_training_data(seed)
        model = ForecastModel(small_config(distribution=family, epochs=4))
        model.fit(adjusted, panel)
        return model, adjusted, panel

    def test_seeded_determinism_single_sample(self):
        model, adjusted, panel = self._fitted()
        a = model.forecast(adjusted.z, panel.y, num_samples=1, seed=99)
        b = model.forecast(adjusted.z, panel.y, num_samples=1, seed=99)
        assert np.array_equal(a.samples, b.samples)

    def test_different_seeds_differ(self):
        model, adjusted, panel = self._fitted()
        a = model.forecast(adjusted.z, panel.y, num_samples=1, seed=1)
        b = model.forecast(adjusted.z, panel.y, num_samples=1, seed=2)
        assert not np.array_equal(a.samples, b.samples)

    def test_degenerate_head_all_samples_near_zero(self):
        model, adjusted, panel = self._fitted()
        # Force the head to mu=0 and sigma at the link floor; neutralize
        # the scaler so outputs stay on the standardized scale.
        model.params["head.W"][:] = 0.0
        model.params["head.b"][:] = np.array([0.0, -30.0])
        n = panel.n
        model.scaler = {"y_mean": np.zeros(n), "y_std": np.ones(n),
                        "z_mean": np.zeros(n), "z_std": np.ones(n)}
        dist = model.forecast(adjusted.z, panel.y, num_samples=50, seed=3)
        assert np.max(np.abs(dist.samples)) < 1e-3

    def test_frozen_gaussian_head_moments(self):
        model, adjusted, panel = self._fitted()
        mu_target, sigma_target = 0.8, 0.6
        raw_sigma = np.log(np.expm1(sigma_target - 1e-6))
        model.params["head.W"][:] = 0.0
        model.params["head.b"][:] = np.array([mu_target, raw_sigma])
        n = panel.n
        model.scaler = {"y_mean": np.zeros(n), "y_std": np.ones(n),
                        "z_mean": np.zeros(n), "z_std": np.ones(n)}
        draws = model.forecast(adjusted.z[:, -10:], panel.y[:, -10:], horizon=1,
                               num_samples=100_000, seed=4).samples[0, 0]
        se_mean = sigma_target / np.sqrt(draws.size)
        se_var = sigma_target**2 * np.sqrt(2.0 / (draws.size - 1))
        assert draws.mean() == pytest.approx(mu_target, abs=3 * se_mean)
        assert draws.var() == pytest.approx(sigma_target**2, abs=3 * se_var)

    def test_history_too_short(self):
        model, adjusted, panel = self._fitted()
        with pytest.raises(InsufficientDataError):
            model.forecast(adjusted.z[:, :5], panel.y[:, :5])

    def test_sampling_feedback_changes_params(self):
        model, adjusted, panel = self._fitted()
        m = 4
        base = np.tile(panel.y[:, -1:], (1, m))
        bumped = base.copy()
        bumped[:, 1] += 5.0
        params_a = model.rollout_params(adjusted.z, panel.y, base)
        params_b = model.rollout_params(adjusted.z, panel.y, bumped)
        # Step 1 projects before the intervened draw is consumed.
        assert np.allclose(params_a[1].mu, params_b[1].mu)
        assert not np.allclose(params_a[2].mu, params_b[2].mu)
        assert not np.allclose(params_a[3].mu, params_b[3].mu)

    def test_quantile_accessor_monotone(self):
        model, adjusted, panel = self._fitted()
        dist = model.forecast(adjusted.z, panel.y, num_samples=64, seed=8)
        q10, q50, q90 = (dist.quantile(q) for q in (0.1, 0.5, 0.9))
        assert np.all(q10 <= q50) and np.all(q50 <= q90)
        assert dist.mean().shape == q50.shape

    def test_samples_finite_enforced(self):
        with pytest.raises(PropagationError):
            ForecastDistribution(samples=np.full((1, 1, 2), np.inf))


class TestCheckpoint:
    @pytest.mark.parametrize("family", ["gaussian", "laplace", "student_t"])
    def test_round_trip_bit_exact_forecasts(self, tmp_path, family):
        adjusted, panel = random_training_data(11)
        model = ForecastModel(small_config(distribution=family, epochs=3))
        model.fit(adjusted, panel)
        path = tmp_path / "model.npz"
        model.save(path)
        clone = ForecastModel.load(path)
        for key in model.params:
            assert np.array_equal(model.params[key], clone.params[key])
        a = model.forecast(adjusted.z, panel.y, seed=42)
        b = clone.forecast(adjusted.z, panel.y, seed=42)
        assert np.array_equal(a.samples, b.samples)

    def test_unfitted_save_rejected(self, tmp_path):
        model = ForecastModel(small_config())
        with pytest.raises(InputValidationError):
            model.save(tmp_path / "m.npz")

    def test_parameter_count_consistency(self):
        cfg = small_config(hidden_size=4, num_layers=1)
        model = ForecastModel(cfg)
        # 3 gates x (W 2x4 + U 4x4 + b 4) for one layer, head 4x2 + 2.
        expected = 3 * (8 + 16 + 4) + 8 + 2
        assert model.parameter_count() == expected
