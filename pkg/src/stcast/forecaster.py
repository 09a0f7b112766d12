"""Recurrent probabilistic forecaster.

The encoder consumes per-region pairs (adjusted input z, target y), all
regions sharing one parameter set; an affine head maps the top hidden
state to the output distribution's raw parameters.  Training slides
fixed-length windows over each region's history and minimizes the exact
next-step negative log-likelihood by momentum SGD with hand-derived
backpropagation (no autodiff).  Forecasting rolls the encoder over the
observed history, then draws each future value from the projected
distribution and feeds it back as the next input; z is held at its last
observed value over the horizon.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import heads
from .causal import AdjustedPanel, Panel
from .errors import (
    DivergenceError,
    InputValidationError,
    InsufficientDataError,
    PropagationError,
)
from .gru import GRUStack, init_gru_params

INPUT_SIZE = 2          # features per step: (z, y)
MOMENTUM = 0.9
_SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 32
    num_layers: int = 2
    distribution: str = "gaussian"
    context_len: int = 25
    horizon: int = 5
    learning_rate: float = 0.01
    epochs: int = 50
    grad_clip: float = 5.0
    num_samples: int = 100
    seed: int = 0
    batch_size: int = 64

    def __post_init__(self):
        for name in ("hidden_size", "num_layers", "context_len", "horizon",
                     "epochs", "num_samples", "batch_size"):
            if int(getattr(self, name)) <= 0:
                raise InputValidationError(f"{name} must be a positive integer")
        if self.learning_rate < 0 or self.grad_clip <= 0:
            raise InputValidationError("learning_rate must be >= 0, grad_clip > 0")
        if self.distribution not in heads.FAMILIES:
            raise InputValidationError(
                f"distribution must be one of {heads.FAMILIES}, "
                f"got {self.distribution!r}"
            )
        if self.context_len != 5 * self.horizon:
            warnings.warn(
                f"context_len:horizon is {self.context_len}:{self.horizon}; "
                "the recommended ratio is 5:1",
                RuntimeWarning,
            )


@dataclass(frozen=True)
class ForecastDistribution:
    """Per-region, per-horizon forecast sample ensemble (N, m, num_samples)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        s.setflags(write=False)
        if s.ndim != 3:
            raise InputValidationError(f"expected (N, m, s) samples, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise PropagationError("forecast produced non-finite samples")

    def quantile(self, q: float) -> np.ndarray:
        if not 0.0 <= q <= 1.0:
            raise InputValidationError(f"quantile level {q} outside [0, 1]")
        return np.quantile(self.samples, q, axis=-1, method="linear")

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=-1)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class ForecastModel:
    """Shared-parameter recurrent forecaster over a fixed region set."""

    def __init__(self, config: ModelConfig,
                 params: dict[str, np.ndarray] | None = None,
                 scaler: dict[str, np.ndarray] | None = None,
                 region_ids: tuple[str, ...] | None = None):
        self.config = config
        arity = heads.PARAM_ARITY[config.distribution]
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = init_gru_params(INPUT_SIZE, config.hidden_size,
                                     config.num_layers, rng)
            bound = 1.0 / np.sqrt(config.hidden_size)
            params["head.W"] = rng.uniform(-bound, bound,
                                           (config.hidden_size, arity))
            params["head.b"] = np.zeros(arity)
        self._validate_params(params, arity)
        self.params = params
        self.gru = GRUStack(INPUT_SIZE, config.hidden_size, config.num_layers,
                            params=params)
        self.scaler = scaler
        self.region_ids = region_ids

    def _validate_params(self, params: dict[str, np.ndarray], arity: int):
        cfg = self.config
        expected_head = (cfg.hidden_size, arity)
        if params["head.W"].shape != expected_head:
            raise InputValidationError(
                f"head.W has shape {params['head.W'].shape}, "
                f"expected {expected_head}"
            )
        for key, value in params.items():
            if not np.all(np.isfinite(value)):
                raise InputValidationError(f"parameter {key} is non-finite")

    @property
    def fitted(self) -> bool:
        return self.scaler is not None

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- standardization ----------------------------------------------------

    @staticmethod
    def _fit_scaler(z: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
        def stats(a):
            mean = a.mean(axis=1)
            std = a.std(axis=1)
            return mean, np.where(std < _SCALE_FLOOR, 1.0, std)

        y_mean, y_std = stats(y)
        z_mean, z_std = stats(z)
        return {"y_mean": y_mean, "y_std": y_std,
                "z_mean": z_mean, "z_std": z_std}

    def _standardize(self, z: np.ndarray, y: np.ndarray):
        sc = self.scaler
        zs = (z - sc["z_mean"][:, None]) / sc["z_std"][:, None]
        ys = (y - sc["y_mean"][:, None]) / sc["y_std"][:, None]
        return zs, ys

    # -- training -----------------------------------------------------------

    def fit(self, adjusted: AdjustedPanel, panel: Panel) -> list[float]:
        """Train on the panel; returns the per-epoch mean NLL trace.

        Inputs per step are (z[i,t], y[i,t]); the prediction target for
        step t is the adjusted next value y_tilde[i,t+1].  The target
        shares the y scaler so sampled values can feed straight back in
        during forecasting.
        """
        cfg = self.config
        z, y, y_tilde = adjusted.z, panel.y, adjusted.y_tilde
        n, t = y.shape
        if t < cfg.context_len + cfg.horizon:
            raise InsufficientDataError(
                f"need T >= context_len + horizon = "
                f"{cfg.context_len + cfg.horizon}, got {t}"
            )
        self.scaler = self._fit_scaler(z, y)
        self.region_ids = tuple(panel.region_ids)
        zs, ys = self._standardize(z, y)
        ts = (y_tilde - self.scaler["y_mean"][:, None]) / self.scaler["y_std"][:, None]

        inputs, targets = self._build_windows(zs, ys, ts)
        n_windows = inputs.shape[0]
        rng = np.random.default_rng(cfg.seed)
        velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

        trace = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(n_windows)
            nll_sum = 0.0
            for start in range(0, n_windows, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch_nll, grads = self._batch_forward_backward(
                    inputs[idx], targets[idx]
                )
                if not np.isfinite(batch_nll):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} "
                        f"(learning_rate={cfg.learning_rate})"
                    )
                nll_sum += batch_nll
                self._sgd_update(grads, velocity)
            trace.append(nll_sum / (n_windows * cfg.context_len))
        return trace

    def _build_windows(self, zs, ys, ts):
        """(num_windows, L, 2) inputs and (num_windows, L) next-step targets."""
        t0 = self.config.context_len
        feats = np.stack([zs, ys], axis=-1)               # (N, T, 2)
        t = feats.shape[1]
        n_win = t - t0                                    # starts 0 .. T-t0-1
        wins = sliding_window_view(feats, t0, axis=1)     # (N, T-t0+1, 2, t0)
        inputs = np.ascontiguousarray(
            np.moveaxis(wins[:, :n_win], -1, 2)           # (N, n_win, t0, 2)
        ).reshape(-1, t0, INPUT_SIZE)
        tgt = sliding_window_view(ts[:, 1:], t0, axis=1)  # (N, T-t0, t0)
        targets = np.ascontiguousarray(tgt[:, :n_win]).reshape(-1, t0)
        return inputs, targets

    def _batch_forward_backward(self, batch_in, batch_tgt):
        """Sum of per-step NLLs and the parameter gradients of the mean."""
        cfg = self.config
        b, t0, _ = batch_in.shape
        scale = 1.0 / (b * t0)
        hidden = self.gru.init_hidden(b)
        caches, tops, d_raws = [], [], []
        nll_total = 0.0
        for k in range(t0):
            hidden, cache = self.gru.step(batch_in[:, k, :], hidden)
            raw = hidden[-1] @ self.params["head.W"] + self.params["head.b"]
            values, d_raw = heads.nll_and_raw_grad(raw, batch_tgt[:, k],
                                                   cfg.distribution)
            nll_total += float(values.sum())
            caches.append(cache)
            tops.append(hidden[-1])
            d_raws.append(d_raw * scale)

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        d_hidden = self.gru.init_hidden(b)
        for k in range(t0 - 1, -1, -1):
            grads["head.W"] += tops[k].T @ d_raws[k]
            grads["head.b"] += d_raws[k].sum(axis=0)
            d_top = d_raws[k] @ self.params["head.W"].T
            d_out = list(d_hidden)
            d_out[-1] = d_out[-1] + d_top
            _, d_hidden = self.gru.step_backward(caches[k], d_out, grads)
        return nll_total, grads

    def _sgd_update(self, grads, velocity):
        cfg = self.config
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > cfg.grad_clip:
            factor = cfg.grad_clip / norm
            for g in grads.values():
                g *= factor
        for key, p in self.params.items():
            v = velocity[key]
            v *= MOMENTUM
            v -= cfg.learning_rate * grads[key]
            p += v

    def total_training_nll(self, adjusted: AdjustedPanel, panel: Panel) -> tuple[float, int]:
        """Sum over all windows and steps of the per-step NLL at the
        current parameters (no updates); returns (total, term_count)."""
        if not self.fitted:
            raise InputValidationError("model is not fitted")
        zs, ys = self._standardize(adjusted.z, panel.y)
        ts = (adjusted.y_tilde - self.scaler["y_mean"][:, None]) \
            / self.scaler["y_std"][:, None]
        inputs, targets = self._build_windows(zs, ys, ts)
        b, t0, _ = inputs.shape
        hidden = self.gru.init_hidden(b)
        total = 0.0
        for k in range(t0):
            hidden, _ = self.gru.step(inputs[:, k, :], hidden)
            raw = hidden[-1] @ self.params["head.W"] + self.params["head.b"]
            total += float(heads.nll(
                heads.project_raw(raw, self.config.distribution), targets[:, k]
            ).sum())
        return total, b * t0

    # -- forecasting ----------------------------------------------------------

    def _encode_history(self, zs: np.ndarray, ys: np.ndarray, copies: int):
        """Roll the encoder over the full history; returns the final
        hidden state for (region x copy) rows and the last z inputs."""
        n, t_hist = ys.shape
        feats = np.stack([zs, ys], axis=-1)
        bad = np.argwhere(~np.isfinite(feats))
        if bad.size:
            i, t, _ = bad[0]
            raise PropagationError(
                f"non-finite encoder input for region index {i} at time {t}"
            )
        rows = np.repeat(feats, copies, axis=0)  # (n*copies, T, 2)
        hidden = self.gru.init_hidden(n * copies)
        for t in range(t_hist):
            hidden, _ = self.gru.step(rows[:, t, :], hidden)
        z_last = np.repeat(zs[:, -1], copies)
        return hidden, z_last

    def _decode(self, hidden, z_last, steps: int, draw_fn):
        """Shared rollout: project, draw via draw_fn, feed the draw back.

        draw_fn(params, step) -> standardized draws, shape (batch,).
        Returns (draws (batch, steps), params_per_step).
        """
        draws = np.empty((z_last.shape[0], steps))
        params_per_step = []
        for k in range(steps):
            raw = hidden[-1] @ self.params["head.W"] + self.params["head.b"]
            params = heads.project_raw(raw, self.config.distribution)
            params_per_step.append(params)
            draws[:, k] = draw_fn(params, k)
            if k + 1 < steps:
                x = np.column_stack([z_last, draws[:, k]])
                hidden, _ = self.gru.step(x, hidden)
        return draws, params_per_step

    def forecast(self, z_history: np.ndarray, y_history: np.ndarray,
                 horizon: int | None = None, num_samples: int | None = None,
                 seed: int | None = None) -> ForecastDistribution:
        """Ancestral-sampling forecast from the end of the given history.

        Sample values are returned on the scale of the training inputs
        (the per-region standardization is inverted).  The model itself
        is immutable here; parallel callers should pass distinct seeds
        (e.g. run_seed + stream_index) to own independent sample streams.
        """
        if not self.fitted:
            raise InputValidationError("model is not fitted")
        cfg = self.config
        horizon = cfg.horizon if horizon is None else int(horizon)
        num_samples = cfg.num_samples if num_samples is None else int(num_samples)
        z_history = np.asarray(z_history, dtype=float)
        y_history = np.asarray(y_history, dtype=float)
        if y_history.ndim != 2 or z_history.shape != y_history.shape:
            raise InputValidationError(
                f"histories must share an (N, T) shape; got "
                f"{z_history.shape} and {y_history.shape}"
            )
        n, t_hist = y_history.shape
        if self.scaler["y_mean"].shape[0] != n:
            raise InputValidationError(
                f"model was fitted on {self.scaler['y_mean'].shape[0]} regions, "
                f"history has {n}"
            )
        if t_hist < cfg.context_len:
            raise InsufficientDataError(
                f"history length {t_hist} < context_len {cfg.context_len}"
            )
        rng = np.random.default_rng(cfg.seed if seed is None else seed)

        zs, ys = self._standardize(z_history, y_history)
        hidden, z_last = self._encode_history(zs, ys, num_samples)
        draws, _ = self._decode(
            hidden, z_last, horizon, lambda params, _k: heads.sample(params, rng)
        )
        cube = draws.reshape(n, num_samples, horizon).transpose(0, 2, 1)
        out = cube * self.scaler["y_std"][:, None, None] \
            + self.scaler["y_mean"][:, None, None]
        return ForecastDistribution(samples=out)

    def rollout_params(self, z_history: np.ndarray, y_history: np.ndarray,
                       forced_draws: np.ndarray) -> list[heads.DistributionParams]:
        """Decode along a forced sample path (original scale), returning
        the projected parameters at every step.  Exercises exactly the
        forecasting code path; used to verify that later steps depend on
        earlier draws."""
        if not self.fitted:
            raise InputValidationError("model is not fitted")
        forced = np.asarray(forced_draws, dtype=float)
        zs, ys = self._standardize(z_history, y_history)
        forced_std = (forced - self.scaler["y_mean"][:, None]) \
            / self.scaler["y_std"][:, None]
        hidden, z_last = self._encode_history(zs, ys, 1)
        _, params = self._decode(
            hidden, z_last, forced.shape[1],
            lambda _params, k: forced_std[:, k],
        )
        return params

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """Single-file checkpoint; write/read round-trips bit-exactly."""
        if not self.fitted:
            raise InputValidationError("refusing to save an unfitted model")
        arrays = {f"param.{k}": v for k, v in self.params.items()}
        for k, v in self.scaler.items():
            arrays[f"scaler.{k}"] = v
        arrays["meta.config"] = np.array(json.dumps(asdict(self.config)))
        arrays["meta.region_ids"] = np.array(list(self.region_ids))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ForecastModel":
        with np.load(path, allow_pickle=False) as data:
            config = ModelConfig(**json.loads(str(data["meta.config"])))
            region_ids = tuple(str(r) for r in data["meta.region_ids"])
            params = {k[len("param."):]: data[k] for k in data.files
                      if k.startswith("param.")}
            scaler = {k[len("scaler."):]: data[k] for k in data.files
                      if k.startswith("scaler.")}
        return cls(config, params=params, scaler=scaler, region_ids=region_ids)


# ---------------------------------------------------------------------------
# Functional views of the two core steps (handy for oracles/tests)
# ---------------------------------------------------------------------------

def encode_step(model: ForecastModel, prev_hidden: list[np.ndarray],
                x: np.ndarray, time_index: int | None = None) -> list[np.ndarray]:
    """One encoder step; validates finiteness of the inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        where = "" if time_index is None else f" at time {time_index}"
        raise PropagationError(f"non-finite encoder input{where}")
    hidden, _ = model.gru.step(x, prev_hidden)
    return hidden


def project(hidden: np.ndarray, head_w: np.ndarray, head_b: np.ndarray,
            family: str) -> heads.DistributionParams:
    """Affine map plus links from a hidden state to distribution parameters."""
    raw = np.asarray(hidden, dtype=float) @ head_w + head_b
    return heads.project_raw(raw, family)
