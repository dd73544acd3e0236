"""SAC with a fixed temperature and optional churn regularization."""

from __future__ import annotations

import math

import numpy as np

from ..chain import ChainConfig, LambdaController, combined_gradient, policy_churn_loss, value_churn_loss
from ..metrics import ChurnReport, policy_churn, policy_value_deviation, value_churn
from ..nets import Adam, LearningRateRule, MlpSpec, SquashedGaussianPolicy, build_mlp
from ..replay import Batch, ReplayBuffer
from .common import AgentHyperparams, UpdateDiagnostics

SQUASH_EPS = 1e-6


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, x: np.ndarray) -> np.ndarray:
    z = (x - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=1) - log_std.sum(axis=1) - 0.5 * mean.shape[1] * math.log(2.0 * math.pi)


def squashed_log_prob(mean: np.ndarray, log_std: np.ndarray, pre_tanh: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Log density of a = tanh(u), u ~ N(mean, std), with the change-of-variables term."""
    correction = np.log(1.0 - actions * actions + SQUASH_EPS).sum(axis=1)
    return gaussian_log_prob(mean, log_std, pre_tanh) - correction


class SacAgent:
    """Twin critics plus a squashed-Gaussian actor trained by reparameterization.

    The temperature is fixed (hp.entropy_coef); actor and critics update
    every step, critic targets move by Polyak averaging. Actor gradients are
    computed analytically through the sampling path: the noise draw is held
    fixed and mean/log-std receive the chain-rule terms from the squashed
    sample, the entropy term, and the minimum critic.
    """

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        critic_spec: MlpSpec,
        actor_spec: MlpSpec,
        hp: AgentHyperparams,
        chain: ChainConfig,
        lr_rule: LearningRateRule,
        init_rng: np.random.Generator,
    ):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hp = hp
        self.chain = chain
        self.batch_size = 256 if hp.batch_size is None else hp.batch_size
        self.reg_batch_size = self.batch_size if hp.reg_batch_size is None else hp.reg_batch_size

        self.q1 = build_mlp(critic_spec, init_rng)
        self.q2 = build_mlp(critic_spec, init_rng)
        self.policy = SquashedGaussianPolicy(build_mlp(actor_spec, init_rng), action_dim)
        self.q1_target = self.q1.params.copy()
        self.q2_target = self.q2.params.copy()
        self.prev_q1 = self.q1.params.copy()
        self.prev_q2 = self.q2.params.copy()
        self.prev_policy = self.policy.params.copy()

        lr = lr_rule.effective(critic_spec.scale_ratio)
        self.opt_q1 = Adam(self.q1.n_params, lr)
        self.opt_q2 = Adam(self.q2.n_params, lr)
        self.opt_policy = Adam(self.policy.n_params, lr_rule.effective(actor_spec.scale_ratio))

        self.value_controller = (
            LambdaController(chain.beta, chain.auto, chain.lambda_q) if chain.value_reg_active else None
        )
        self.policy_controller = (
            LambdaController(chain.beta, chain.auto, chain.lambda_pi) if chain.policy_reg_active else None
        )
        self.update_count = 0

    def make_buffer(self, obs_dim: int) -> ReplayBuffer:
        capacity = 1_000_000 if self.hp.buffer_capacity is None else self.hp.buffer_capacity
        return ReplayBuffer(capacity, obs_dim, action_dim=self.action_dim)

    @property
    def initial_random_steps(self) -> int:
        return 5_000 if self.hp.initial_random_steps is None else self.hp.initial_random_steps

    def act(self, obs: np.ndarray, env_step: int, rng: np.random.Generator) -> np.ndarray:
        mean, log_std = self.policy.dist(obs[None, :])
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return np.tanh(u)[0]

    def greedy_action(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self.policy.dist(obs[None, :])
        return np.tanh(mean)[0]

    def actor_loss_and_grad(self, obs: np.ndarray, xi: np.ndarray) -> tuple[float, np.ndarray]:
        """Reparameterized actor objective alpha * log pi - min(Q1, Q2) and its gradient.

        xi is the standard-normal draw; holding it fixed makes the loss a
        deterministic, finite-difference-checkable function of the policy
        parameters. Gradients flow through the sample a = tanh(mean + std * xi),
        the tanh density correction, and the per-sample minimum critic; the
        -0.5 * xi^2 part of log pi is parameter-free under the fixed draw.
        """
        alpha = self.hp.entropy_coef
        n = obs.shape[0]
        mean, log_std, cache = self.policy.dist_full(obs)
        std = np.exp(log_std)
        u = mean + std * xi
        t = np.tanh(u)
        x_pi = np.concatenate([obs, t], axis=1)
        logp = squashed_log_prob(mean, log_std, u, t)
        q1_full, cache1 = self.q1.forward_full(x_pi)
        q2_full, cache2 = self.q2.forward_full(x_pi)
        q1_pi, q2_pi = q1_full[:, 0], q2_full[:, 0]
        use_q1 = q1_pi <= q2_pi
        q_min = np.where(use_q1, q1_pi, q2_pi)
        loss = float((alpha * logp - q_min).mean())

        # dQmin/da per sample, routed through whichever critic attains the min.
        ones = np.ones((n, 1))
        _, gx1 = self.q1.backward(cache1, ones)
        _, gx2 = self.q2.backward(cache2, ones)
        dqda = np.where(use_q1[:, None], gx1[:, self.obs_dim :], gx2[:, self.obs_dim :])
        one_minus_t2 = 1.0 - t * t
        # d(-log(1 - tanh(u)^2 + eps))/du, the only u-dependence in log pi.
        c = 2.0 * t * one_minus_t2 / (one_minus_t2 + SQUASH_EPS)
        common = alpha * c - dqda * one_minus_t2
        g_mean = common / n
        g_log_std = (common * (std * xi) - alpha) / n
        return loss, self.policy.dist_backward(cache, g_mean, g_log_std)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> UpdateDiagnostics:
        alpha = self.hp.entropy_coef
        reg_size = self.reg_batch_size if self.value_controller is not None else 0
        trip = buffer.sample_triplet(self.batch_size, reg_size, 0, rng)
        b = trip.train
        n = b.obs.shape[0]

        # Soft bootstrap target from a fresh squashed sample at s'.
        mean_n, ls_n = self.policy.dist(b.next_obs)
        u_next = mean_n + np.exp(ls_n) * rng.standard_normal(mean_n.shape)
        a_next = np.tanh(u_next)
        logp_next = squashed_log_prob(mean_n, ls_n, u_next, a_next)
        x_next = np.concatenate([b.next_obs, a_next], axis=1)
        q1_next = self.q1.forward(x_next, params=self.q1_target)[:, 0]
        q2_next = self.q2.forward(x_next, params=self.q2_target)[:, 0]
        y = b.rewards + self.hp.gamma * (1.0 - b.dones) * (np.minimum(q1_next, q2_next) - alpha * logp_next)

        x = np.concatenate([b.obs, b.actions], axis=1)
        x_reg = np.concatenate([trip.reg.obs, trip.reg.actions], axis=1) if trip.reg.obs.shape[0] else None
        lam_q = self.value_controller.current_lambda() if self.value_controller is not None else 0.0
        losses, reg_losses, grads = [], [], []
        for critic, prev in ((self.q1, self.prev_q1), (self.q2, self.prev_q2)):
            q, cache = critic.forward_full(x)
            td = q[:, 0] - y
            losses.append(float((td * td).mean()))
            grad, _ = critic.backward(cache, ((2.0 / n) * td)[:, None])
            if self.value_controller is not None:
                rl, rg = value_churn_loss(critic, x_reg, prev)
                reg_losses.append(rl)
                grad = combined_gradient(grad, rg, lam_q)
            grads.append(grad)
        if self.value_controller is not None:
            self.value_controller.observe(
                0.5 * (losses[0] + losses[1]), 0.5 * (reg_losses[0] + reg_losses[1]), lam_q
            )
        value_grad_norm = float(np.linalg.norm(grads[0]))
        self.prev_q1 = self.q1.params.copy()
        self.prev_q2 = self.q2.params.copy()
        self.opt_q1.step(self.q1.params, grads[0])
        self.opt_q2.step(self.q2.params, grads[1])

        xi = rng.standard_normal((n, self.action_dim))
        policy_loss, grad_pi = self.actor_loss_and_grad(b.obs, xi)

        lam_pi = None
        reg_loss_pi = None
        if self.policy_controller is not None:
            lam_pi = self.policy_controller.current_lambda()
            pr = buffer.sample(self.reg_batch_size, rng)
            reg_loss_pi, reg_grad_pi = policy_churn_loss(self.policy, pr.obs, self.prev_policy)
            grad_pi = combined_gradient(grad_pi, reg_grad_pi, lam_pi)
            self.policy_controller.observe(policy_loss, reg_loss_pi, lam_pi)

        policy_grad_norm = float(np.linalg.norm(grad_pi))
        self.prev_policy = self.policy.params.copy()
        self.opt_policy.step(self.policy.params, grad_pi)

        tau = self.hp.tau
        self.q1_target = tau * self.q1.params + (1.0 - tau) * self.q1_target
        self.q2_target = tau * self.q2.params + (1.0 - tau) * self.q2_target
        self.update_count += 1

        return UpdateDiagnostics(
            update_index=self.update_count,
            value_loss=0.5 * (losses[0] + losses[1]),
            value_reg_loss=0.5 * (reg_losses[0] + reg_losses[1]) if reg_losses else None,
            lambda_q=lam_q if self.value_controller is not None else None,
            value_grad_norm=value_grad_norm,
            policy_loss=policy_loss,
            policy_reg_loss=reg_loss_pi,
            lambda_pi=lam_pi,
            policy_grad_norm=policy_grad_norm,
        )

    def churn_payload(self) -> dict[str, np.ndarray]:
        return {"q1": self.q1.params, "pi": self.policy.params}

    def _greedy(self, obs: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        mean, _ = self.policy.dist(obs, params=params)
        return np.tanh(mean)

    def measure_churn(self, lag: int, stored: dict[str, np.ndarray], ref: Batch) -> ChurnReport:
        x_ref = np.concatenate([ref.obs, ref.actions], axis=1)
        signed, absolute = value_churn(self.q1, x_ref, self.q1.params, stored["q1"])
        return ChurnReport(
            lag=lag,
            value_churn_signed=signed,
            value_churn_abs=absolute,
            policy_churn=policy_churn(self.policy, ref.obs, self.policy.params, stored["pi"], kind="kl"),
            policy_value_deviation=policy_value_deviation(
                self.q1, ref.obs, self._greedy(ref.obs), self._greedy(ref.obs, params=stored["pi"])
            ),
        )
