"""Shared agent plumbing: hyperparameters, diagnostics, rng streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class AgentHyperparams:
    """One bag of knobs for all four agents; unused fields are ignored.

    Fields defaulting to None are resolved per agent at construction time
    (replay batch 32 for the value-based agent vs 256 for the actor-critics,
    and so on), so a config only has to name what it actually changes.
    """

    gamma: float = 0.99
    lr: float = 3e-4
    batch_size: int | None = None
    buffer_capacity: int | None = None
    initial_random_steps: int | None = None
    train_interval: int = 1  # env steps per gradient update (off-policy agents)
    reg_batch_size: int | None = None  # defaults to batch_size

    # value-based control
    target_sync_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_steps: int = 500_000

    # on-policy control
    rollout_length: int = 2048
    n_minibatches: int = 32
    n_epochs: int = 10
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    init_log_std: float = 0.0

    # actor-critic control
    actor_interval: int | None = None
    exploration_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    tau: float = 0.005
    entropy_coef: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


def epsilon_at(step: int, start: float, end: float, decay_steps: int) -> float:
    """Linear decay from start to end over decay_steps env steps, then flat."""
    frac = min(1.0, step / decay_steps)
    return start + (end - start) * frac


@dataclass(frozen=True)
class UpdateDiagnostics:
    """What one gradient update did, for logging and controller checks."""

    update_index: int
    value_loss: float | None = None
    value_reg_loss: float | None = None
    lambda_q: float | None = None
    value_grad_norm: float | None = None
    policy_loss: float | None = None
    policy_reg_loss: float | None = None
    lambda_pi: float | None = None
    policy_grad_norm: float | None = None

    def is_finite(self) -> bool:
        for v in (self.value_loss, self.value_grad_norm, self.policy_loss, self.policy_grad_norm):
            if v is not None and not np.isfinite(v):
                return False
        return True


class RngStreams(NamedTuple):
    """Independent generators per concern.

    train drives everything that influences learning (exploration, episode
    starts, batch draws); metrics draws reference batches; init sets network
    weights. Keeping them separate means measurement can never perturb a
    training trajectory.
    """

    train: np.random.Generator
    metrics: np.random.Generator
    init: np.random.Generator


def make_rng_streams(seed: int) -> RngStreams:
    train_ss, metrics_ss, init_ss = np.random.SeedSequence(seed).spawn(3)
    return RngStreams(
        np.random.default_rng(train_ss),
        np.random.default_rng(metrics_ss),
        np.random.default_rng(init_ss),
    )
