"""Function approximators on flat parameter vectors.

Everything trainable in this package is a fully connected rectifier network
whose parameters live in one contiguous float64 vector. Keeping the vector
flat makes snapshots, churn targets, finite-difference probes, and kernel
computations one-liners instead of tree traversals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SCALE_RATIOS = (1, 2, 4, 8, 16)
SCALE_MODES = ("widen", "deepen")
LR_RULES = ("direct", "sqrt", "linear")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a rectifier MLP, including capacity scaling.

    Scaling touches hidden layers only: ``widen`` multiplies the hidden
    width by ``scale_ratio``, ``deepen`` multiplies the number of hidden
    layers. Input and output dims are fixed by the task.
    """

    input_dim: int
    output_dim: int
    base_width: int = 256
    base_depth: int = 2
    scale_ratio: int = 1
    scale_mode: str = "widen"

    def __post_init__(self) -> None:
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        if self.base_width <= 0 or self.base_depth <= 0:
            raise ValueError("base_width and base_depth must be positive")
        if self.scale_ratio not in SCALE_RATIOS:
            raise ValueError(f"scale_ratio must be one of {SCALE_RATIOS}, got {self.scale_ratio}")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}, got {self.scale_mode!r}")

    @property
    def hidden_width(self) -> int:
        return self.base_width * self.scale_ratio if self.scale_mode == "widen" else self.base_width

    @property
    def hidden_depth(self) -> int:
        return self.base_depth * self.scale_ratio if self.scale_mode == "deepen" else self.base_depth

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, input to output."""
        widths = [self.input_dim] + [self.hidden_width] * self.hidden_depth + [self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Fan-in uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_dims():
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(chunks)


class Mlp:
    """Rectifier MLP with explicit forward/backward on a flat parameter vector.

    ``params`` is owned storage by default but can be re-bound to a view of a
    larger vector (policy heads append extra parameters after the network's).
    ``forward`` accepts an explicit parameter vector so frozen snapshots and
    churn targets evaluate through the same code path as the live network.
    """

    def __init__(self, spec: MlpSpec, params: np.ndarray | None = None):
        self.spec = spec
        # Flat layout: [W0 (fan_in*fan_out, row-major), b0, W1, b1, ...].
        self._bounds: list[tuple[int, int, int, int]] = []  # (w_start, b_start, fan_in, fan_out)
        offset = 0
        for fan_in, fan_out in spec.layer_dims():
            self._bounds.append((offset, offset + fan_in * fan_out, fan_in, fan_out))
            offset += fan_in * fan_out + fan_out
        self.n_params = offset
        if params is None:
            params = np.zeros(self.n_params)
        self.bind(params)

    def bind(self, params: np.ndarray) -> None:
        """Point the network at new storage and refresh the cached layer views."""
        if params.shape != (self.n_params,) or params.dtype != np.float64:
            raise ValueError(f"expected float64 vector of length {self.n_params}")
        self.params = params
        self._layers = self._views(params)

    def _views(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for w_start, b_start, fan_in, fan_out in self._bounds:
            w = params[w_start:b_start].reshape(fan_in, fan_out)
            b = params[b_start : b_start + fan_out]
            out.append((w, b))
        return out

    def _resolve(self, params: np.ndarray | None) -> list[tuple[np.ndarray, np.ndarray]]:
        if params is None or params is self.params:
            return self._layers
        if params.shape != (self.n_params,):
            raise ValueError(f"expected parameter vector of length {self.n_params}")
        return self._views(params)

    def forward(self, x: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        layers = self._resolve(params)
        h = x
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h

    def forward_full(self, x: np.ndarray, params: np.ndarray | None = None):
        """Forward pass that keeps the activations needed by ``backward``.

        Returns ``(out, cache)``. The cache pins the exact weight views used,
        so a backward pass stays consistent even if ``self.params`` is
        re-bound in between.
        """
        layers = self._resolve(params)
        acts = [x]
        h = x
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i != last:
                np.maximum(h, 0.0, out=h)
                acts.append(h)
        return h, (acts, layers)

    def backward(self, cache, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Backprop a batch cotangent; returns (flat param grad, input grad).

        Gradients are averaged nowhere: the caller owns the 1/n convention.
        The input grad is per-sample, shape (n, input_dim). Rectifier
        subgradient at 0 is 0.
        """
        acts, layers = cache
        grad = np.empty(self.n_params)
        g = grad_out
        for i in range(len(layers) - 1, -1, -1):
            w_start, b_start, fan_in, fan_out = self._bounds[i]
            w, _ = layers[i]
            a_in = acts[i]
            grad[w_start:b_start] = (a_in.T @ g).ravel()
            grad[b_start : b_start + fan_out] = g.sum(axis=0)
            g = g @ w.T
            if i > 0:
                g *= acts[i] > 0.0
        return grad, g

    def param_jacobian(self, x: np.ndarray, out_cotangents: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Per-sample flat gradients for given per-sample output cotangents.

        For cotangent rows c_k this returns J[k] = d(out_k . c_k)/d(params),
        shape (n, n_params). Used to build empirical kernel Gram matrices;
        quadratic in memory, keep networks small here.
        """
        _, (acts, layers) = self.forward_full(x, params)
        n = x.shape[0]
        jac = np.empty((n, self.n_params))
        g = out_cotangents
        for i in range(len(layers) - 1, -1, -1):
            w_start, b_start, fan_in, fan_out = self._bounds[i]
            w, _ = layers[i]
            a_in = acts[i]
            jac[:, w_start:b_start] = np.einsum("ni,nj->nij", a_in, g).reshape(n, fan_in * fan_out)
            jac[:, b_start : b_start + fan_out] = g
            g = g @ w.T
            if i > 0:
                g = g * (acts[i] > 0.0)
        return jac

    def input_gradient(self, x: np.ndarray, out_cotangents: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Per-sample gradient of out . cotangent with respect to the input."""
        _, cache = self.forward_full(x, params)
        _, gx = self.backward(cache, out_cotangents)
        return gx

    def snapshot(self, update_index: int) -> ParameterSnapshot:
        return ParameterSnapshot(self, self.params.copy(), update_index)


@dataclass(frozen=True)
class ParameterSnapshot:
    """Frozen view of a network at a past update.

    Calling the snapshot evaluates the network at the stored parameters; the
    live network is never touched. The stored vector is read-only, so an
    accidental in-place update raises instead of silently corrupting history.
    """

    net: Mlp
    params: np.ndarray
    update_index: int

    def __post_init__(self) -> None:
        self.params.flags.writeable = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x, params=self.params)


def build_mlp(spec: MlpSpec, rng: np.random.Generator | int) -> Mlp:
    rng = np.random.default_rng(rng)
    return Mlp(spec, init_params(spec, rng))


@dataclass(frozen=True)
class LearningRateRule:
    """How the step size responds to capacity scaling.

    ``direct`` keeps the base rate, ``sqrt`` divides by sqrt(scale_ratio),
    ``linear`` divides by scale_ratio.
    """

    base_lr: float
    rule: str = "direct"

    def __post_init__(self) -> None:
        if self.base_lr <= 0.0:
            raise ValueError("base_lr must be positive")
        if self.rule not in LR_RULES:
            raise ValueError(f"rule must be one of {LR_RULES}, got {self.rule!r}")

    def effective(self, scale_ratio: int) -> float:
        if self.rule == "direct":
            return self.base_lr
        if self.rule == "sqrt":
            return self.base_lr / math.sqrt(scale_ratio)
        return self.base_lr / scale_ratio


class Adam:
    """Adam on one flat vector, updating in place."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        # Canonical moment-update order; keep as-is, reduced-order rewrites
        # change the rounding sequence and break bit-level reproducibility.
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class DeterministicPolicy:
    """tanh-squashed deterministic actor: a = tanh(mlp(s)), actions in (-1, 1)^d."""

    def __init__(self, net: Mlp):
        self.net = net

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def act(self, obs: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        return np.tanh(self.net.forward(obs, params))

    def act_full(self, obs: np.ndarray):
        pre, cache = self.net.forward_full(obs)
        a = np.tanh(pre)
        return a, (cache, a)

    def act_backward(self, cache, grad_a: np.ndarray) -> np.ndarray:
        net_cache, a = cache
        grad, _ = self.net.backward(net_cache, grad_a * (1.0 - a * a))
        return grad

    def snapshot(self, update_index: int) -> ParameterSnapshot:
        return self.net.snapshot(update_index)


class DiagGaussianPolicy:
    """Gaussian policy with a state-independent log-std vector.

    The mean comes from the network; the log-stds are free parameters stored
    after the network weights in one flat vector, so one optimizer and one
    snapshot cover both. Actions are unbounded at sampling time; environments
    clamp at their own boundary.
    """

    def __init__(self, net: Mlp, action_dim: int, init_log_std: float = 0.0):
        self.action_dim = action_dim
        self.n_params = net.n_params + action_dim
        flat = np.empty(self.n_params)
        flat[: net.n_params] = net.params
        flat[net.n_params :] = init_log_std
        self.params = flat
        net.bind(flat[: net.n_params])
        self.net = net

    def _split(self, params: np.ndarray | None) -> tuple[np.ndarray | None, np.ndarray]:
        if params is None:
            return None, self.params[self.net.n_params :]
        return params[: self.net.n_params], params[self.net.n_params :]

    def dist(self, obs: np.ndarray, params: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Mean (n, d) and log-std (d,) at the given (or live) parameters."""
        net_params, log_std = self._split(params)
        return self.net.forward(obs, net_params), log_std

    def dist_full(self, obs: np.ndarray):
        mean, cache = self.net.forward_full(obs)
        return mean, self.params[self.net.n_params :], cache

    def dist_backward(self, cache, grad_mean: np.ndarray, grad_log_std_rows: np.ndarray) -> np.ndarray:
        """Flat gradient from per-sample mean and log-std cotangents."""
        grad = np.empty(self.n_params)
        grad[: self.net.n_params], _ = self.net.backward(cache, grad_mean)
        grad[self.net.n_params :] = grad_log_std_rows.sum(axis=0)
        return grad

    def sample(self, mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return mean + np.exp(log_std) * rng.standard_normal(mean.shape)

    @staticmethod
    def log_prob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
        z = (actions - mean) / np.exp(log_std)
        return -0.5 * (z * z).sum(axis=1) - log_std.sum() - 0.5 * mean.shape[1] * math.log(2.0 * math.pi)

    def snapshot(self, update_index: int) -> ParameterSnapshot:
        # Snapshot carries the full vector (network + log-stds); evaluation
        # goes through dist(obs, params=snap.params), not through the Mlp.
        return ParameterSnapshot(self.net, self.params.copy(), update_index)


LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


class SquashedGaussianPolicy:
    """State-dependent Gaussian whose samples are tanh-squashed by the agent.

    One network outputs [mean | raw log-std] per state; the log-std is
    clamped to [LOG_STD_MIN, LOG_STD_MAX] with zero gradient outside the
    clamp. Distribution quantities (means, stds, KL) are pre-squash.
    """

    def __init__(self, net: Mlp, action_dim: int):
        if net.spec.output_dim != 2 * action_dim:
            raise ValueError("network output must be 2 * action_dim (mean and log-std)")
        self.net = net
        self.action_dim = action_dim

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def dist(self, obs: np.ndarray, params: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        out = self.net.forward(obs, params)
        d = self.action_dim
        return out[:, :d], np.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)

    def dist_full(self, obs: np.ndarray):
        out, cache = self.net.forward_full(obs)
        d = self.action_dim
        raw = out[:, d:]
        mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        return out[:, :d], np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), (cache, mask)

    def dist_backward(self, cache, grad_mean: np.ndarray, grad_log_std: np.ndarray) -> np.ndarray:
        net_cache, mask = cache
        cot = np.concatenate([grad_mean, grad_log_std * mask], axis=1)
        grad, _ = self.net.backward(net_cache, cot)
        return grad

    def snapshot(self, update_index: int) -> ParameterSnapshot:
        return self.net.snapshot(update_index)
