"""Gaussian MLP policy with hand-written backpropagation, and policy fingerprints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
FINGERPRINT_FLOOR = 1e-3
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class GaussianMLPPolicy:
    """Diagonal Gaussian policy whose mean is a tanh MLP.

    Parameters are handled as one flat vector with layout
    ``[W_1, b_1, ..., W_L, b_L, log_std]``; every ``W_l`` is stored row-major
    with shape ``(fan_in, fan_out)``. The policy object itself is stateless.
    """

    def __init__(self, obs_dim, act_dim, hidden_sizes=(5, 5)):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        sizes = (self.obs_dim,) + self.hidden_sizes + (self.act_dim,)
        self._shapes = list(zip(sizes[:-1], sizes[1:]))
        self._slices = []
        offset = 0
        for fan_in, fan_out in self._shapes:
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w, b))
        self.n_net_params = offset
        self.log_std_slice = slice(offset, offset + self.act_dim)
        self.n_params = offset + self.act_dim

    def __repr__(self):
        return (f"GaussianMLPPolicy(obs_dim={self.obs_dim}, act_dim={self.act_dim}, "
                f"hidden_sizes={self.hidden_sizes})")

    # -- parameters ---------------------------------------------------------

    def init_params(self, rng, log_std=0.0):
        """Fan-in scaled uniform weights, zero biases, constant log-std."""
        params = np.zeros(self.n_params)
        for (fan_in, fan_out), (w, _) in zip(self._shapes, self._slices):
            bound = 1.0 / np.sqrt(fan_in)
            params[w] = rng.uniform(-bound, bound, size=fan_in * fan_out)
        params[self.log_std_slice] = log_std
        return params

    def unpack(self, params):
        layers = []
        for (fan_in, fan_out), (w, b) in zip(self._shapes, self._slices):
            layers.append((params[w].reshape(fan_in, fan_out), params[b]))
        return layers, params[self.log_std_slice]

    def clip_log_std(self, params):
        params = np.array(params, dtype=float)
        params[self.log_std_slice] = np.clip(params[self.log_std_slice], LOG_STD_MIN, LOG_STD_MAX)
        return params

    # -- forward ------------------------------------------------------------

    def _forward(self, params, obs):
        layers, log_std = self.unpack(params)
        acts = [np.atleast_2d(np.asarray(obs, dtype=float))]
        h = acts[0]
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = layers[-1]
        return h @ W + b, acts, layers, log_std

    def mean(self, params, obs):
        return self._forward(params, obs)[0]

    def std(self, params):
        return np.exp(params[self.log_std_slice])

    def act(self, params, obs, rng=None, eps=None):
        """Sample ``mean(obs) + exp(log_std) * eps`` for a batch of observations."""
        mu = self.mean(params, obs)
        if eps is None:
            eps = rng.standard_normal(mu.shape)
        return mu + self.std(params) * eps

    def log_prob(self, params, obs, actions):
        mu = self.mean(params, obs)
        log_std = params[self.log_std_slice]
        z = (np.atleast_2d(actions) - mu) / np.exp(log_std)
        return np.sum(-0.5 * z**2 - log_std - _HALF_LOG_2PI, axis=-1)

    # -- derivatives --------------------------------------------------------

    def _backward_per_sample(self, acts, layers, d_mu):
        """Per-sample gradient of ``sum(d_mu * mean)`` w.r.t. network parameters."""
        n = d_mu.shape[0]
        out = np.empty((n, self.n_net_params))
        delta = d_mu
        for idx in range(len(layers) - 1, -1, -1):
            W, _ = layers[idx]
            h_in = acts[idx]
            w_sl, b_sl = self._slices[idx]
            out[:, w_sl] = (h_in[:, :, None] * delta[:, None, :]).reshape(n, -1)
            out[:, b_sl] = delta
            if idx > 0:
                delta = (delta @ W.T) * (1.0 - h_in**2)
        return out

    def grad_log_prob(self, params, obs, actions):
        """Exact gradient of log_prob for each sample, shape (n, n_params)."""
        mu, acts, layers, log_std = self._forward(params, obs)
        actions = np.atleast_2d(actions)
        inv_var = np.exp(-2.0 * log_std)
        diff = actions - mu
        grad = np.empty((mu.shape[0], self.n_params))
        grad[:, : self.n_net_params] = self._backward_per_sample(acts, layers, diff * inv_var)
        grad[:, self.log_std_slice] = diff**2 * inv_var - 1.0
        return grad

    def vjp_mean(self, params, obs, cotangent):
        """``sum_i cotangent_i^T d mean(obs_i) / d params`` over the network parameters."""
        _, acts, layers, _ = self._forward(params, obs)
        out = np.zeros(self.n_net_params)
        delta = np.atleast_2d(cotangent)
        for idx in range(len(layers) - 1, -1, -1):
            W, _ = layers[idx]
            h_in = acts[idx]
            w_sl, b_sl = self._slices[idx]
            out[w_sl] = (h_in.T @ delta).ravel()
            out[b_sl] = delta.sum(axis=0)
            if idx > 0:
                delta = (delta @ W.T) * (1.0 - h_in**2)
        return out

    def jvp_mean(self, params, obs, tangent):
        """Directional derivative of ``mean(obs)`` along network-parameter ``tangent``."""
        _, acts, layers, _ = self._forward(params, obs)
        dlayers = []
        for (fan_in, fan_out), (w, b) in zip(self._shapes, self._slices):
            dlayers.append((tangent[w].reshape(fan_in, fan_out), tangent[b]))
        dh = np.zeros_like(acts[0])
        for idx, ((W, _), (dW, db)) in enumerate(zip(layers, dlayers)):
            dz = dh @ W + acts[idx] @ dW + db
            if idx < len(layers) - 1:
                dh = dz * (1.0 - acts[idx + 1] ** 2)
        return dz


def gaussian_kl(mu_old, log_std_old, mu_new, log_std_new):
    """KL(old || new) between diagonal Gaussians, summed over action dims."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    kl = log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2.0 * var_new) - 0.5
    return np.sum(kl, axis=-1)


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fingerprint:
    """Diagonal-Gaussian summary of a policy plus the training iteration."""

    mean: np.ndarray
    std: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.shape != std.shape:
            raise ValueError("fingerprint mean and std must share a shape")
        if np.any(std <= 0):
            raise ValueError("fingerprint std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self):
        return self.mean.shape[0]


def fit_fingerprint(trajectories, mode="state", iteration=0, floor=FINGERPRINT_FLOOR):
    """Fit a diagonal Gaussian to the states (or actions) pooled over trajectories.

    Uses the population standard deviation, floored at ``floor``.
    """
    if mode not in ("state", "action"):
        raise ValueError(f"mode must be 'state' or 'action', got {mode!r}")
    key = "observations" if mode == "state" else "actions"
    chunks = [getattr(tr, key) for tr in trajectories if len(getattr(tr, key))]
    if not chunks:
        raise ValueError("cannot fit a fingerprint without visited states/actions")
    pooled = np.concatenate(chunks, axis=0)
    std = np.maximum(pooled.std(axis=0), floor)
    return Fingerprint(pooled.mean(axis=0), std, int(iteration))
