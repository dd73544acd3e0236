"""First-order predictions of churn from empirical tangent kernels.

Everything in this module models a plain gradient-descent step: the predicted
change of an output at a reference point is the learning rate times the inner
product of parameter gradients at the reference and update points. Adaptive
optimizers rescale the step per coordinate and break that correspondence, so
the prediction helpers refuse them.

These are measurement probes, not training code: they materialize per-sample
gradient matrices of shape (n, n_params) and are meant for small networks.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .nets import DeterministicPolicy, Mlp

MAX_PROBE_PARAMS = 100_000


def _check_probe_net(net: Mlp) -> None:
    if net.params.dtype != np.float64:
        raise ValueError("probe networks must hold float64 parameters")
    if net.spec.n_params > MAX_PROBE_PARAMS:
        raise ValueError(
            f"probe limited to {MAX_PROBE_PARAMS} parameters, got {net.spec.n_params}; "
            "per-sample gradient matrices grow linearly in parameter count"
        )


def _point_gradients(net: Mlp, inputs: np.ndarray, action_indices: np.ndarray | None,
                     params: np.ndarray | None = None) -> np.ndarray:
    """Per-sample flat gradient of the selected scalar output, shape (n, P)."""
    n = inputs.shape[0]
    if net.spec.output_dim == 1:
        if action_indices is not None:
            raise ValueError("scalar-output network takes no action indices")
        cot = np.ones((n, 1))
    else:
        if action_indices is None:
            raise ValueError("multi-output network needs per-sample action indices")
        cot = np.zeros((n, net.spec.output_dim))
        cot[np.arange(n), action_indices] = 1.0
    return net.param_jacobian(inputs, cot, params)


def predict_value_churn(
    net: Mlp,
    ref_inputs: np.ndarray,
    update_inputs: np.ndarray,
    td_errors: np.ndarray,
    alpha: float,
    *,
    ref_actions: np.ndarray | None = None,
    update_actions: np.ndarray | None = None,
    optimizer: str = "gd",
) -> np.ndarray:
    """Predicted change of Q at each reference point after one TD step.

    The modeled update is ``theta' = theta + (alpha/n) * sum_i td_i * grad
    Q(s_i, a_i)``; to first order the reference values then move by the
    kernel-weighted TD errors. ``apply_td_gradient_step`` performs exactly
    that update, so prediction and measurement share one convention.
    """
    if optimizer != "gd":
        raise NotImplementedError(
            "only plain gradient descent admits the first-order kernel prediction"
        )
    _check_probe_net(net)
    g_ref = _point_gradients(net, ref_inputs, ref_actions)
    g_upd = _point_gradients(net, update_inputs, update_actions)
    direction = td_errors @ g_upd
    return (alpha / update_inputs.shape[0]) * (g_ref @ direction)


def apply_td_gradient_step(
    net: Mlp,
    update_inputs: np.ndarray,
    td_errors: np.ndarray,
    alpha: float,
    *,
    update_actions: np.ndarray | None = None,
) -> np.ndarray:
    """New parameter vector after the plain TD gradient step; net untouched."""
    _check_probe_net(net)
    g_upd = _point_gradients(net, update_inputs, update_actions)
    return net.params + (alpha / update_inputs.shape[0]) * (td_errors @ g_upd)


def _policy_jacobian(policy: DeterministicPolicy, obs: np.ndarray,
                     params: np.ndarray | None = None) -> np.ndarray:
    """Per-sample Jacobian of the squashed action, shape (n, da, P)."""
    n = obs.shape[0]
    da = policy.net.spec.output_dim
    actions = np.tanh(policy.net.forward(obs, params))
    jac = np.empty((n, da, policy.net.spec.n_params))
    for d in range(da):
        cot = np.zeros((n, da))
        cot[:, d] = 1.0 - actions[:, d] ** 2  # tanh pullback
        jac[:, d, :] = policy.net.param_jacobian(obs, cot, params)
    return jac


def _action_value_gradients(critic: Mlp, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Gradient of the scalar critic with respect to the action slice."""
    inputs = np.concatenate([obs, actions], axis=1)
    gx = critic.input_gradient(inputs, np.ones((inputs.shape[0], 1)))
    return gx[:, obs.shape[1]:]


def dpg_direction(policy: DeterministicPolicy, critic: Mlp, update_obs: np.ndarray) -> np.ndarray:
    """Mean deterministic policy gradient over the update batch, shape (P,)."""
    jac = _policy_jacobian(policy, update_obs)
    dqda = _action_value_gradients(critic, update_obs, policy.act(update_obs))
    return np.einsum("ndp,nd->p", jac, dqda) / update_obs.shape[0]


def apply_dpg_step(policy: DeterministicPolicy, critic: Mlp, update_obs: np.ndarray,
                   alpha: float) -> np.ndarray:
    _check_probe_net(policy.net)
    _check_probe_net(critic)
    return policy.net.params + alpha * dpg_direction(policy, critic, update_obs)


def predict_policy_action_change(
    policy: DeterministicPolicy,
    critic: Mlp,
    ref_obs: np.ndarray,
    update_obs: np.ndarray,
    alpha: float,
    *,
    optimizer: str = "gd",
) -> np.ndarray:
    """First-order action drift at reference states after one DPG step.

    The per-state drift is the policy tangent kernel applied to the critic's
    action gradients on the update batch, shape (n_ref, action_dim).
    """
    if optimizer != "gd":
        raise NotImplementedError(
            "only plain gradient descent admits the first-order kernel prediction"
        )
    _check_probe_net(policy.net)
    _check_probe_net(critic)
    dphi = alpha * dpg_direction(policy, critic, update_obs)
    jac_ref = _policy_jacobian(policy, ref_obs)
    return np.einsum("ndp,p->nd", jac_ref, dphi)


def predict_policy_value_deviation(
    policy: DeterministicPolicy,
    critic: Mlp,
    ref_obs: np.ndarray,
    update_obs: np.ndarray,
    alpha: float,
    *,
    optimizer: str = "gd",
) -> np.ndarray:
    """Predicted change of Q(s, pi(s)) at reference states, critic held fixed.

    Chains the predicted action drift through the critic's action gradient at
    the reference points.
    """
    drift = predict_policy_action_change(policy, critic, ref_obs, update_obs, alpha,
                                         optimizer=optimizer)
    dqda_ref = _action_value_gradients(critic, ref_obs, policy.act(ref_obs))
    return np.einsum("nd,nd->n", dqda_ref, drift)


def action_gradient_deviation(
    critic: Mlp,
    obs: np.ndarray,
    actions: np.ndarray,
    params_new: np.ndarray,
    params_old: np.ndarray,
) -> float:
    """Mean L2 distance between action gradients of two critic snapshots.

    Action gradients steer deterministic policy improvement, so their drift
    is the channel through which value churn perturbs actor updates.
    """
    inputs = np.concatenate([obs, actions], axis=1)
    ones = np.ones((inputs.shape[0], 1))
    d = obs.shape[1]
    gx_new = critic.input_gradient(inputs, ones, params_new)[:, d:]
    gx_old = critic.input_gradient(inputs, ones, params_old)[:, d:]
    return float(np.mean(np.linalg.norm(gx_new - gx_old, axis=1)))


def kernel_rank_diagnostic(net: Mlp, inputs: np.ndarray,
                           action_indices: np.ndarray | None = None) -> float:
    """Effective rank (exponential spectral entropy) of the empirical kernel.

    A rank near 1 means one update direction moves every sampled point
    together; a rank near the batch size means updates are nearly local.
    Degenerate kernels with non-positive trace report 0.0.
    """
    _check_probe_net(net)
    g = _point_gradients(net, inputs, action_indices)
    gram = g @ g.T
    trace = float(np.trace(gram))
    if trace <= 0.0:
        return 0.0
    eig = np.clip(np.linalg.eigvalsh(gram), 0.0, None)
    p = eig / eig.sum()
    p = p[p > 0.0]
    return float(np.exp(-(p * np.log(p)).sum()))


class UpdateBiasDecomposition(NamedTuple):
    """Mean TD directions under current vs pre-churn parameters.

    ``delta_tilde`` uses current parameters everywhere, ``delta`` uses the
    stored pre-churn parameters everywhere, and ``mixed`` pairs current TD
    errors with pre-churn gradients. ``bias = delta_tilde - delta`` is then
    split exactly into a gradient-churn part (``delta_tilde - mixed``) and a
    TD-churn part (``mixed - delta``).
    """

    delta_tilde: np.ndarray
    delta: np.ndarray
    mixed: np.ndarray

    @property
    def bias(self) -> np.ndarray:
        return self.delta_tilde - self.delta


def update_bias_decomposition(
    net: Mlp,
    obs: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    next_obs: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    params_now: np.ndarray,
    params_prev: np.ndarray,
) -> UpdateBiasDecomposition:
    """How much parameter churn bends the mean TD update direction.

    TD errors use the greedy bootstrap ``r + gamma * (1 - d) * max_a'
    Q(s', a') - Q(s, a)`` evaluated entirely under one parameter vector at a
    time. Discrete action heads only.
    """
    if net.spec.output_dim <= 1:
        raise ValueError("update bias decomposition needs a discrete action-value head")
    _check_probe_net(net)
    n = obs.shape[0]
    rows = np.arange(n)

    def td_and_grads(params):
        q_next = net.forward(next_obs, params).max(axis=1)
        q = net.forward(obs, params)[rows, actions]
        td = rewards + gamma * (1.0 - dones) * q_next - q
        return td, _point_gradients(net, obs, actions, params)

    td_now, g_now = td_and_grads(params_now)
    td_prev, g_prev = td_and_grads(params_prev)
    return UpdateBiasDecomposition(
        delta_tilde=(td_now @ g_now) / n,
        delta=(td_prev @ g_prev) / n,
        mixed=(td_now @ g_prev) / n,
    )


def update_substitution_norms(decomp: UpdateBiasDecomposition) -> dict[str, float]:
    """Norms of the bias and its two substitution parts.

    The parts sum to the bias vector exactly, so ``bias_norm`` never exceeds
    ``grad_part_norm + td_part_norm``.
    """
    return {
        "delta_tilde_norm": float(np.linalg.norm(decomp.delta_tilde)),
        "delta_norm": float(np.linalg.norm(decomp.delta)),
        "bias_norm": float(np.linalg.norm(decomp.bias)),
        "grad_part_norm": float(np.linalg.norm(decomp.delta_tilde - decomp.mixed)),
        "td_part_norm": float(np.linalg.norm(decomp.mixed - decomp.delta)),
    }


# ---------------------------------------------------------------------------
# Named probes behind the command line.

PROBE_NAMES = ("value-churn", "policy-deviation", "update-bias", "kernel-rank")
PROBE_WIDTH = 16
PROBE_OBS_DIM = 8
PROBE_N_ACTIONS = 4
PROBE_POLICY_OBS_DIM = 6
PROBE_ACTION_DIM = 2


def run_probe(probe_name: str, alpha: float = 1e-5, seed: int = 0,
              n_ref: int = 32, n_update: int = 64) -> list[dict]:
    """Run one named probe on a synthetic width-16 network.

    Returns records with keys probe_name, alpha, predicted, measured and
    residual; per reference point for the churn probes, a single record for
    the scalar diagnostics.
    """
    from .nets import MlpSpec, build_mlp

    if probe_name not in PROBE_NAMES:
        raise ValueError(f"probe_name must be one of {PROBE_NAMES}, got {probe_name!r}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    def record(predicted: float, measured: float) -> dict:
        return {"probe_name": probe_name, "alpha": alpha, "predicted": float(predicted),
                "measured": float(measured), "residual": float(measured - predicted)}

    if probe_name == "value-churn":
        net = build_mlp(MlpSpec(PROBE_OBS_DIM, PROBE_N_ACTIONS, base_width=PROBE_WIDTH), rng)
        ref = rng.standard_normal((n_ref, PROBE_OBS_DIM))
        ref_a = rng.integers(PROBE_N_ACTIONS, size=n_ref)
        upd = rng.standard_normal((n_update, PROBE_OBS_DIM))
        upd_a = rng.integers(PROBE_N_ACTIONS, size=n_update)
        td = rng.standard_normal(n_update)
        predicted = predict_value_churn(net, ref, upd, td, alpha,
                                        ref_actions=ref_a, update_actions=upd_a)
        new_params = apply_td_gradient_step(net, upd, td, alpha, update_actions=upd_a)
        rows = np.arange(n_ref)
        measured = net.forward(ref, new_params)[rows, ref_a] - net.forward(ref)[rows, ref_a]
        return [record(p, m) for p, m in zip(predicted, measured)]

    if probe_name == "policy-deviation":
        policy = DeterministicPolicy(
            build_mlp(MlpSpec(PROBE_POLICY_OBS_DIM, PROBE_ACTION_DIM, base_width=PROBE_WIDTH), rng))
        critic = build_mlp(
            MlpSpec(PROBE_POLICY_OBS_DIM + PROBE_ACTION_DIM, 1, base_width=PROBE_WIDTH), rng)
        ref = rng.standard_normal((n_ref, PROBE_POLICY_OBS_DIM))
        upd = rng.standard_normal((n_update, PROBE_POLICY_OBS_DIM))
        predicted = predict_policy_value_deviation(policy, critic, ref, upd, alpha)
        new_params = apply_dpg_step(policy, critic, upd, alpha)
        before = critic.forward(np.concatenate([ref, policy.act(ref)], axis=1))[:, 0]
        after = critic.forward(
            np.concatenate([ref, np.tanh(policy.net.forward(ref, new_params))], axis=1))[:, 0]
        return [record(p, m) for p, m in zip(predicted, after - before)]

    net = build_mlp(MlpSpec(PROBE_OBS_DIM, PROBE_N_ACTIONS, base_width=PROBE_WIDTH), rng)
    inputs = rng.standard_normal((n_update, PROBE_OBS_DIM))
    acts = rng.integers(PROBE_N_ACTIONS, size=n_update)

    if probe_name == "update-bias":
        rewards = rng.standard_normal(n_update)
        next_obs = rng.standard_normal((n_update, PROBE_OBS_DIM))
        dones = (rng.random(n_update) < 0.1).astype(float)
        td = rng.standard_normal(n_update)
        # Churn the parameters with one TD step of the requested size, then decompose.
        params_prev = net.params.copy()
        net.bind(apply_td_gradient_step(net, inputs, td, alpha, update_actions=acts))
        decomp = update_bias_decomposition(net, inputs, acts, rewards, next_obs, dones,
                                           0.99, net.params, params_prev)
        norms = update_substitution_norms(decomp)
        bound = norms["grad_part_norm"] + norms["td_part_norm"]
        return [record(bound, norms["bias_norm"])]

    effective = kernel_rank_diagnostic(net, inputs, acts)
    g = _point_gradients(net, inputs, acts)
    numerical = float(np.linalg.matrix_rank(g @ g.T))
    return [record(effective, numerical)]
