"""Stacked gated recurrent encoder with hand-derived backpropagation.

Cell equations (reset gate applied to the hidden state before its
candidate matmul):

    r = sigmoid(x W_r + h U_r + b_r)
    u = sigmoid(x W_u + h U_u + b_u)
    c = tanh(x W_c + (r * h) U_c + b_c)
    h' = u * h + (1 - u) * c

All arrays are float64; a step operates on a (batch, features) slab so
training can batch arbitrarily many windows.  The backward pass
accumulates parameter gradients into a caller-owned dict, which keeps
one allocation per training batch instead of one per step.
"""

from __future__ import annotations

import numpy as np

from scipy.special import expit as _sigmoid

PARAM_NAMES = ("W_r", "U_r", "b_r", "W_u", "U_u", "b_u", "W_c", "U_c", "b_c")


def init_gru_params(input_size: int, hidden_size: int, num_layers: int,
                    rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) weight matrices, zero biases."""
    params: dict[str, np.ndarray] = {}
    for layer in range(num_layers):
        in_dim = input_size if layer == 0 else hidden_size
        for gate in ("r", "u", "c"):
            w_bound = 1.0 / np.sqrt(in_dim)
            u_bound = 1.0 / np.sqrt(hidden_size)
            params[f"l{layer}.W_{gate}"] = rng.uniform(
                -w_bound, w_bound, (in_dim, hidden_size))
            params[f"l{layer}.U_{gate}"] = rng.uniform(
                -u_bound, u_bound, (hidden_size, hidden_size))
            params[f"l{layer}.b_{gate}"] = np.zeros(hidden_size)
    return params


class GRUStack:
    """Thin stateful wrapper over the parameter dict.

    Hidden state is a list of (batch, hidden) arrays, one per layer.
    """

    def __init__(self, input_size: int, hidden_size: int, num_layers: int,
                 params: dict[str, np.ndarray] | None = None,
                 rng: np.random.Generator | None = None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        if params is None:
            if rng is None:
                rng = np.random.default_rng()
            params = init_gru_params(input_size, hidden_size, num_layers, rng)
        self.params = params

    def init_hidden(self, batch: int) -> list[np.ndarray]:
        return [np.zeros((batch, self.hidden_size)) for _ in range(self.num_layers)]

    def step(self, x: np.ndarray, hidden: list[np.ndarray]):
        """One time step for the whole stack.

        Returns (new_hidden, cache); the cache carries everything the
        backward pass needs.
        """
        p = self.params
        new_hidden = []
        cache = []
        inp = x
        for layer in range(self.num_layers):
            h = hidden[layer]
            pre = f"l{layer}."
            r = _sigmoid(inp @ p[pre + "W_r"] + h @ p[pre + "U_r"] + p[pre + "b_r"])
            u = _sigmoid(inp @ p[pre + "W_u"] + h @ p[pre + "U_u"] + p[pre + "b_u"])
            c = np.tanh(inp @ p[pre + "W_c"] + (r * h) @ p[pre + "U_c"] + p[pre + "b_c"])
            h_new = u * h + (1.0 - u) * c
            cache.append((inp, h, r, u, c))
            new_hidden.append(h_new)
            inp = h_new
        return new_hidden, cache

    def step_backward(self, cache, d_new_hidden: list[np.ndarray],
                      grads: dict[str, np.ndarray]):
        """Backprop one step.

        ``d_new_hidden[l]`` is the loss gradient w.r.t. layer l's output
        at this step, accumulated from the next time step and (for the
        top layer) the projection head.  Returns (dx, d_hidden_prev);
        parameter gradients are added to ``grads`` in place.
        """
        p = self.params
        d_out = [d.copy() for d in d_new_hidden]
        d_prev: list[np.ndarray] = [None] * self.num_layers
        dx = None
        for layer in range(self.num_layers - 1, -1, -1):
            inp, h, r, u, c = cache[layer]
            pre = f"l{layer}."
            d_h_new = d_out[layer]

            da_u = d_h_new * (h - c) * u * (1.0 - u)
            da_c = d_h_new * (1.0 - u) * (1.0 - c * c)
            dhr = da_c @ p[pre + "U_c"].T
            da_r = dhr * h * r * (1.0 - r)

            d_prev[layer] = (d_h_new * u + dhr * r
                             + da_r @ p[pre + "U_r"].T
                             + da_u @ p[pre + "U_u"].T)
            d_inp = (da_r @ p[pre + "W_r"].T
                     + da_u @ p[pre + "W_u"].T
                     + da_c @ p[pre + "W_c"].T)

            grads[pre + "W_r"] += inp.T @ da_r
            grads[pre + "U_r"] += h.T @ da_r
            grads[pre + "b_r"] += da_r.sum(axis=0)
            grads[pre + "W_u"] += inp.T @ da_u
            grads[pre + "U_u"] += h.T @ da_u
            grads[pre + "b_u"] += da_u.sum(axis=0)
            grads[pre + "W_c"] += inp.T @ da_c
            grads[pre + "U_c"] += (r * h).T @ da_c
            grads[pre + "b_c"] += da_c.sum(axis=0)

            if layer > 0:
                d_out[layer - 1] = d_out[layer - 1] + d_inp
            else:
                dx = d_inp
        return dx, d_prev
