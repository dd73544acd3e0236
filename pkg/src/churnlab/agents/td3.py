"""TD3 with optional churn regularization on critics and actor."""

from __future__ import annotations

import numpy as np

from ..chain import ChainConfig, LambdaController, combined_gradient, policy_churn_loss, value_churn_loss
from ..metrics import ChurnReport, policy_churn, policy_value_deviation, value_churn
from ..nets import Adam, DeterministicPolicy, LearningRateRule, MlpSpec, build_mlp
from ..replay import Batch, ReplayBuffer
from .common import AgentHyperparams, UpdateDiagnostics


class Td3Agent:
    """Twin critics, delayed deterministic actor, smoothed bootstrap targets.

    Critics train every update; the actor and all three target networks move
    every ``actor_interval`` critic updates. Value regularization shares one
    lambda across both critics (the controller sees the mean of their
    losses); policy regularization applies on actor updates only.
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
        self.actor_interval = 2 if hp.actor_interval is None else hp.actor_interval

        self.q1 = build_mlp(critic_spec, init_rng)
        self.q2 = build_mlp(critic_spec, init_rng)
        self.actor = DeterministicPolicy(build_mlp(actor_spec, init_rng))
        self.q1_target = self.q1.params.copy()
        self.q2_target = self.q2.params.copy()
        self.actor_target = self.actor.params.copy()
        self.prev_q1 = self.q1.params.copy()
        self.prev_q2 = self.q2.params.copy()
        self.prev_actor = self.actor.params.copy()

        lr = lr_rule.effective(critic_spec.scale_ratio)
        self.opt_q1 = Adam(self.q1.n_params, lr)
        self.opt_q2 = Adam(self.q2.n_params, lr)
        self.opt_actor = Adam(self.actor.n_params, lr_rule.effective(actor_spec.scale_ratio))

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
        a = self.actor.act(obs[None, :])[0]
        noise = self.hp.exploration_noise * rng.standard_normal(self.action_dim)
        return np.clip(a + noise, -1.0, 1.0)

    def greedy_action(self, obs: np.ndarray) -> np.ndarray:
        return self.actor.act(obs[None, :])[0]

    def _critic_update(self, b: Batch, reg: Batch, rng: np.random.Generator):
        n = b.obs.shape[0]
        noise = np.clip(
            self.hp.target_noise * rng.standard_normal((n, self.action_dim)),
            -self.hp.target_noise_clip,
            self.hp.target_noise_clip,
        )
        a_next = np.clip(self.actor.act(b.next_obs, params=self.actor_target) + noise, -1.0, 1.0)
        x_next = np.concatenate([b.next_obs, a_next], axis=1)
        q1_next = self.q1.forward(x_next, params=self.q1_target)[:, 0]
        q2_next = self.q2.forward(x_next, params=self.q2_target)[:, 0]
        y = b.rewards + self.hp.gamma * (1.0 - b.dones) * np.minimum(q1_next, q2_next)

        x = np.concatenate([b.obs, b.actions], axis=1)
        x_reg = np.concatenate([reg.obs, reg.actions], axis=1) if reg.obs.shape[0] else None
        losses, reg_losses, grads = [], [], []
        for critic, prev in ((self.q1, self.prev_q1), (self.q2, self.prev_q2)):
            q, cache = critic.forward_full(x)
            td = q[:, 0] - y
            losses.append(float((td * td).mean()))
            grad, _ = critic.backward(cache, ((2.0 / n) * td)[:, None])
            grads.append(grad)
            if self.value_controller is not None:
                rl, rg = value_churn_loss(critic, x_reg, prev)
                reg_losses.append(rl)
                grads[-1] = combined_gradient(grad, rg, self._lam_q)
        return losses, reg_losses, grads

    def actor_loss_and_grad(self, obs: np.ndarray) -> tuple[float, np.ndarray]:
        """Deterministic policy gradient of -mean Q1(s, pi(s)) at the live parameters."""
        n = obs.shape[0]
        a_pi, a_cache = self.actor.act_full(obs)
        x_pi = np.concatenate([obs, a_pi], axis=1)
        q1_pi, q_cache = self.q1.forward_full(x_pi)
        loss = float(-q1_pi.mean())
        _, gx = self.q1.backward(q_cache, np.full((n, 1), -1.0 / n))
        grad = self.actor.act_backward(a_cache, gx[:, self.obs_dim :])
        return loss, grad

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> UpdateDiagnostics:
        reg_size = self.reg_batch_size if self.value_controller is not None else 0
        trip = buffer.sample_triplet(self.batch_size, reg_size, 0, rng)
        b = trip.train

        self._lam_q = self.value_controller.current_lambda() if self.value_controller is not None else 0.0
        losses, reg_losses, grads = self._critic_update(b, trip.reg, rng)
        if self.value_controller is not None:
            self.value_controller.observe(
                0.5 * (losses[0] + losses[1]), 0.5 * (reg_losses[0] + reg_losses[1]), self._lam_q
            )
        value_grad_norm = float(np.linalg.norm(grads[0]))
        self.prev_q1 = self.q1.params.copy()
        self.prev_q2 = self.q2.params.copy()
        self.opt_q1.step(self.q1.params, grads[0])
        self.opt_q2.step(self.q2.params, grads[1])
        self.update_count += 1

        diag_kwargs = dict(
            update_index=self.update_count,
            value_loss=0.5 * (losses[0] + losses[1]),
            value_reg_loss=0.5 * (reg_losses[0] + reg_losses[1]) if reg_losses else None,
            lambda_q=self._lam_q if self.value_controller is not None else None,
            value_grad_norm=value_grad_norm,
        )

        if self.update_count % self.actor_interval == 0:
            policy_loss, grad_pi = self.actor_loss_and_grad(b.obs)
            lam_pi = None
            reg_loss_pi = None
            if self.policy_controller is not None:
                lam_pi = self.policy_controller.current_lambda()
                pr = buffer.sample(self.reg_batch_size, rng)
                reg_loss_pi, reg_grad_pi = policy_churn_loss(self.actor, pr.obs, self.prev_actor)
                grad_pi = combined_gradient(grad_pi, reg_grad_pi, lam_pi)
                self.policy_controller.observe(policy_loss, reg_loss_pi, lam_pi)

            diag_kwargs.update(
                policy_loss=policy_loss,
                policy_reg_loss=reg_loss_pi,
                lambda_pi=lam_pi,
                policy_grad_norm=float(np.linalg.norm(grad_pi)),
            )
            self.prev_actor = self.actor.params.copy()
            self.opt_actor.step(self.actor.params, grad_pi)

            tau = self.hp.tau
            self.q1_target = tau * self.q1.params + (1.0 - tau) * self.q1_target
            self.q2_target = tau * self.q2.params + (1.0 - tau) * self.q2_target
            self.actor_target = tau * self.actor.params + (1.0 - tau) * self.actor_target

        return UpdateDiagnostics(**diag_kwargs)

    def churn_payload(self) -> dict[str, np.ndarray]:
        return {"q1": self.q1.params, "pi": self.actor.params}

    def measure_churn(self, lag: int, stored: dict[str, np.ndarray], ref: Batch) -> ChurnReport:
        x_ref = np.concatenate([ref.obs, ref.actions], axis=1)
        signed, absolute = value_churn(self.q1, x_ref, self.q1.params, stored["q1"])
        return ChurnReport(
            lag=lag,
            value_churn_signed=signed,
            value_churn_abs=absolute,
            policy_churn=policy_churn(self.actor, ref.obs, self.actor.params, stored["pi"], kind="l1"),
            policy_value_deviation=policy_value_deviation(
                self.q1, ref.obs, self.actor.act(ref.obs), self.actor.act(ref.obs, params=stored["pi"])
            ),
        )
