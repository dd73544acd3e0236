"""Churn-reduction regularization.

The regularizer penalizes movement of the network's outputs on a held-out
batch relative to the parameters from just before the previous update: a
squared drift for value outputs, an output-space distance (squared for
deterministic policies, KL for stochastic ones) for policies. The trade-off
weight lambda can be fixed or set automatically from the running magnitudes
of the main and regularization losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import DeterministicPolicy, DiagGaussianPolicy, Mlp, SquashedGaussianPolicy

CHAIN_MODES = ("none", "vcr", "pcr", "dcr")


class NotWarmedUpError(RuntimeError):
    """auto_lambda was queried before any loss magnitudes were observed."""


@dataclass(frozen=True)
class ChainConfig:
    """Regularization switchboard.

    mode selects which side is regularized: "vcr" the value function, "pcr"
    the policy, "dcr" both, "none" neither. With auto=True the lambdas are
    recomputed from running loss magnitudes using beta and the lambda_* fields
    are ignored; with auto=False the lambda_* fields are used as-is.
    """

    mode: str = "none"
    lambda_q: float = 0.0
    lambda_pi: float = 0.0
    auto: bool = False
    beta: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in CHAIN_MODES:
            raise ValueError(f"mode must be one of {CHAIN_MODES}, got {self.mode!r}")
        if self.lambda_q < 0.0 or self.lambda_pi < 0.0 or self.beta < 0.0:
            raise ValueError("lambda_q, lambda_pi and beta must be non-negative")
        if self.auto and self.beta <= 0.0:
            raise ValueError("auto lambda needs beta > 0")

    @property
    def value_reg_active(self) -> bool:
        return self.mode in ("vcr", "dcr") and (self.auto or self.lambda_q > 0.0)

    @property
    def policy_reg_active(self) -> bool:
        return self.mode in ("pcr", "dcr") and (self.auto or self.lambda_pi > 0.0)


def value_churn_loss(
    net: Mlp,
    obs: np.ndarray,
    target_params: np.ndarray,
    action_indices: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean squared drift of value outputs against frozen target parameters.

    With action_indices the drift is taken at one output column per row
    (discrete-action value heads); without, over every output entry (scalar
    critics). Returns the loss and its gradient with respect to the live
    parameters; the target side is a constant.
    """
    n = obs.shape[0]
    if n == 0:
        return 0.0, np.zeros(net.n_params)
    q_cur, cache = net.forward_full(obs)
    q_tgt = net.forward(obs, params=target_params)
    if action_indices is None:
        diff = q_cur - q_tgt
        loss = float((diff * diff).mean())
        cot = (2.0 / diff.size) * diff
    else:
        rows = np.arange(n)
        d = q_cur[rows, action_indices] - q_tgt[rows, action_indices]
        loss = float((d * d).mean())
        cot = np.zeros_like(q_cur)
        cot[rows, action_indices] = (2.0 / n) * d
    grad, _ = net.backward(cache, cot)
    return loss, grad


def policy_churn_loss(policy, obs: np.ndarray, target_params: np.ndarray) -> tuple[float, np.ndarray]:
    """Drift of the policy's output distribution against frozen parameters.

    Deterministic policies use the mean squared action difference; Gaussian
    policies use KL(current || target) summed over action dims, averaged over
    the batch. Returns (loss, gradient wrt the live policy parameters).
    """
    n = obs.shape[0]
    if n == 0:
        return 0.0, np.zeros(policy.n_params)
    if isinstance(policy, DeterministicPolicy):
        a_cur, cache = policy.act_full(obs)
        a_tgt = policy.act(obs, params=target_params)
        diff = a_cur - a_tgt
        loss = float((diff * diff).mean())
        grad = policy.act_backward(cache, (2.0 / diff.size) * diff)
        return loss, grad
    if isinstance(policy, (DiagGaussianPolicy, SquashedGaussianPolicy)):
        mean_c, log_std_c, cache = policy.dist_full(obs)
        mean_t, log_std_t = policy.dist(obs, params=target_params)
        var_ratio = np.exp(2.0 * (log_std_c - log_std_t))
        inv_var_t = np.exp(-2.0 * log_std_t)
        dmean = mean_c - mean_t
        kl = log_std_t - log_std_c + 0.5 * var_ratio + 0.5 * dmean * dmean * inv_var_t - 0.5
        loss = float(kl.sum(axis=-1).mean())
        g_mean = dmean * inv_var_t / n
        g_log_std = np.broadcast_to((var_ratio - 1.0) / n, mean_c.shape)
        grad = policy.dist_backward(cache, g_mean, g_log_std)
        return loss, grad
    raise TypeError(f"unsupported policy type {type(policy).__name__}")


def combined_gradient(main_grad: np.ndarray, reg_grad: np.ndarray | None, lam: float) -> np.ndarray:
    """main_grad + lam * reg_grad, leaving main_grad untouched when inactive."""
    if reg_grad is None or lam == 0.0:
        return main_grad
    return main_grad + lam * reg_grad


class RunningScales:
    """Exponential running means of the main and regularization loss.

    The first observation initializes both means directly; afterwards each
    observation blends in with weight (1 - decay). ``observed`` stays False
    until then, which lets the controller refuse to emit an automatic lambda
    before it has seen anything.
    """

    def __init__(self, decay: float = 0.99):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must be in [0, 1)")
        self.decay = decay
        self.main_mean = 0.0
        self.reg_mean = 0.0
        self.observed = False

    def observe(self, main_loss: float, reg_loss: float) -> None:
        if not self.observed:
            self.main_mean = main_loss
            self.reg_mean = reg_loss
            self.observed = True
        else:
            self.main_mean += (1.0 - self.decay) * (main_loss - self.main_mean)
            self.reg_mean += (1.0 - self.decay) * (reg_loss - self.reg_mean)


def auto_lambda(scales: RunningScales, beta: float, previous: float, eps_guard: float = 1e-8) -> float:
    """beta * |mean main loss| / |mean reg loss|, holding when the reg mean vanishes.

    Near-zero regularization loss means there is no churn signal to scale
    against; dividing would blow lambda up, so the previous value is kept.
    """
    if not scales.observed:
        raise NotWarmedUpError("no loss magnitudes observed yet")
    if abs(scales.reg_mean) < eps_guard:
        return previous
    return beta * abs(scales.main_mean) / abs(scales.reg_mean)


class LambdaController:
    """Per-update lambda schedule with the query-then-observe ordering.

    ``current_lambda()`` uses only magnitudes observed on previous updates;
    the losses of the update in flight are fed back through ``observe()``
    afterwards. In fixed mode the configured lambda is returned untouched.
    In auto mode the first update (nothing observed yet) gets lambda 0.

    The controller also keeps an in-band counter: after a warm-up period it
    records, per update, whether lambda * |mean reg loss| / |mean main loss|
    landed within [beta/2, 2*beta], over the running means the next lambda is
    computed from. Per-batch losses swing across orders of magnitude, so the
    meaningful stability statement is about the smoothed scales the controller
    actually steers: the counter catches lambda lagging a scale shift or
    sitting frozen on the epsilon guard while the scales move on.
    """

    BAND_WARMUP = 200

    def __init__(self, beta: float, auto: bool, fixed_lambda: float, decay: float = 0.99, eps_guard: float = 1e-8):
        self.beta = beta
        self.auto = auto
        self.fixed_lambda = fixed_lambda
        self.eps_guard = eps_guard
        self.scales = RunningScales(decay)
        self._lambda = 0.0 if auto else fixed_lambda
        self.updates_observed = 0
        self.band_total = 0
        self.band_hits = 0

    def current_lambda(self) -> float:
        if not self.auto:
            return self.fixed_lambda
        if not self.scales.observed:
            return 0.0
        self._lambda = auto_lambda(self.scales, self.beta, self._lambda, self.eps_guard)
        return self._lambda

    def observe(self, main_loss: float, reg_loss: float, applied_lambda: float) -> None:
        self.updates_observed += 1
        self.scales.observe(main_loss, reg_loss)
        if self.auto and self.updates_observed > self.BAND_WARMUP and abs(self.scales.main_mean) > self.eps_guard:
            ratio = applied_lambda * abs(self.scales.reg_mean) / abs(self.scales.main_mean)
            self.band_total += 1
            self.band_hits += int(0.5 * self.beta <= ratio <= 2.0 * self.beta)

    def band_fraction(self) -> float | None:
        return self.band_hits / self.band_total if self.band_total else None
