"""Experiment orchestration: configs, training loops, logging, summaries.

A run is fully determined by (config, seed). Measurement (churn metrics,
evaluation episodes, diagnostics) runs on dedicated rng streams and fresh
environment instances, so two runs with the same config and seed produce
byte-identical metrics files, and disabling measurement would not change the
learned parameters.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .agents import AgentHyperparams, DdqnAgent, PpoAgent, SacAgent, Td3Agent, make_rng_streams
from .agents.ppo import Rollout
from .chain import ChainConfig
from .envs import ENV_SPECS, GRIDNAV_EVAL_START, POINTMASS_EVAL_STARTS, make_env
from .metrics import SnapshotRing
from .nets import LearningRateRule, MlpSpec

OUT_ROOT_ENV_VAR = "CHURNLAB_OUT"
DEFAULT_OUT_ROOT = "runs"
SWEEP_FIELDS = ("lr", "tau")  # the only hyperparameters a config may grid over
DEFAULT_BUDGETS = {"gridnav": 150_000, "pointmass": 300_000}
AGENT_NAMES = ("ddqn", "ppo", "td3", "sac")


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs shared by every network a run builds."""

    base_width: int = 256
    base_depth: int = 2
    scale_ratio: int = 1
    scale_mode: str = "widen"


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "gridnav"
    agent: str = "ddqn"
    seeds: tuple[int, ...] = (0,)
    budget: int | None = None  # env steps; None picks the per-env default
    net: NetConfig = field(default_factory=NetConfig)
    hyperparams: AgentHyperparams = field(default_factory=AgentHyperparams)
    chain: ChainConfig = field(default_factory=ChainConfig)
    lr_rule: str = "direct"
    metric_interval: int = 1000  # parameter updates between churn measurements
    metric_max_lags: int = 20
    ref_batch_size: int = 256
    eval_points: int = 20  # evaluations per run, spread evenly over the budget
    eval_episodes: int = 10

    def __post_init__(self) -> None:
        # JSON configs supply a list; store a tuple so the config stays hashable.
        seeds = (self.seeds,) if isinstance(self.seeds, int) else tuple(self.seeds)
        object.__setattr__(self, "seeds", seeds)
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ValueError("seeds must be nonnegative integers")
        if self.env not in ENV_SPECS:
            raise ValueError(f"env must be one of {sorted(ENV_SPECS)}, got {self.env!r}")
        if self.agent not in AGENT_NAMES:
            raise ValueError(f"agent must be one of {AGENT_NAMES}, got {self.agent!r}")
        if self.agent == "ddqn" and self.env != "gridnav":
            raise ValueError("the discrete-action agent runs on gridnav only")
        if self.agent != "ddqn" and self.env == "gridnav":
            raise ValueError(f"{self.agent} needs a continuous-action environment")
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be positive")
        for name in ("metric_interval", "metric_max_lags", "ref_batch_size", "eval_points", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def resolved_budget(self) -> int:
        return DEFAULT_BUDGETS[self.env] if self.budget is None else self.budget

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        """Build a config from plain JSON data, rejecting unknown field names.

        Validation happens before any run directory is created, so a typo in
        a config file fails loudly instead of silently training with a
        default value.
        """
        def pick(data: dict, cls, where: str):
            allowed = {f.name for f in fields(cls)}
            unknown = set(data) - allowed
            if unknown:
                raise ValueError(f"unknown {where} fields: {sorted(unknown)}")
            return data

        d = dict(pick(d, ExperimentConfig, "config"))
        if "net" in d:
            d["net"] = NetConfig(**pick(d["net"], NetConfig, "net"))
        if "hyperparams" in d:
            d["hyperparams"] = AgentHyperparams(**pick(d["hyperparams"], AgentHyperparams, "hyperparams"))
        if "chain" in d:
            d["chain"] = ChainConfig(**pick(d["chain"], ChainConfig, "chain"))
        return ExperimentConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def run_id(self) -> str:
        """Stable 8-hex id over everything except the seed list."""
        d = self.to_dict()
        d.pop("seeds")
        return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:8]


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def resolve_out_root(out: str | Path | None) -> Path:
    if out is not None:
        return Path(out)
    return Path(os.environ.get(OUT_ROOT_ENV_VAR, DEFAULT_OUT_ROOT))


def build_agent(cfg: ExperimentConfig, init_rng: np.random.Generator):
    spec = ENV_SPECS[cfg.env]
    net = cfg.net
    lr_rule = LearningRateRule(cfg.hyperparams.lr, cfg.lr_rule)

    def mlp_spec(input_dim: int, output_dim: int) -> MlpSpec:
        return MlpSpec(input_dim, output_dim, net.base_width, net.base_depth, net.scale_ratio, net.scale_mode)

    if cfg.agent == "ddqn":
        return DdqnAgent(mlp_spec(spec.obs_dim, spec.n_actions), cfg.hyperparams, cfg.chain, lr_rule, init_rng)
    da = spec.action_dim
    if cfg.agent == "ppo":
        return PpoAgent(spec.obs_dim, da, mlp_spec(spec.obs_dim, da), mlp_spec(spec.obs_dim, 1),
                        cfg.hyperparams, cfg.chain, lr_rule, init_rng)
    if cfg.agent == "td3":
        return Td3Agent(spec.obs_dim, da, mlp_spec(spec.obs_dim + da, 1), mlp_spec(spec.obs_dim, da),
                        cfg.hyperparams, cfg.chain, lr_rule, init_rng)
    return SacAgent(spec.obs_dim, da, mlp_spec(spec.obs_dim + da, 1), mlp_spec(spec.obs_dim, 2 * da),
                    cfg.hyperparams, cfg.chain, lr_rule, init_rng)


def evaluate(agent, env_name: str, gamma: float, episodes: int) -> tuple[float, float]:
    """Mean undiscounted and discounted return of the greedy policy.

    Fixed starts and deterministic action selection on a fresh environment
    instance: repeated evaluations of the same parameters give the same
    numbers, and training state is never touched.
    """
    env = make_env(env_name)
    if env_name == "gridnav":
        starts = [GRIDNAV_EVAL_START] * episodes
    else:
        starts = [np.array(POINTMASS_EVAL_STARTS[i % len(POINTMASS_EVAL_STARTS)]) for i in range(episodes)]
    total, total_disc = 0.0, 0.0
    for start in starts:
        obs = env.reset(start=start)
        done = False
        disc = 1.0
        while not done:
            obs, r, done = env.step(agent.greedy_action(obs))
            total += r
            total_disc += disc * r
            disc *= gamma
    return total / episodes, total_disc / episodes


class JsonlWriter:
    """Sorted-keys JSONL with no timestamps: reruns are byte-identical."""

    def __init__(self, path: Path | None):
        self._fh = open(path, "w") if path is not None else None

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


class DiagAggregator:
    """Means of per-update diagnostics over each metric interval window."""

    FIELDS = ("value_loss", "value_reg_loss", "lambda_q", "value_grad_norm",
              "policy_loss", "policy_reg_loss", "lambda_pi", "policy_grad_norm")

    def __init__(self, interval: int, writer: JsonlWriter):
        self.interval = interval
        self.writer = writer
        self._sums = {k: 0.0 for k in self.FIELDS}
        self._counts = {k: 0 for k in self.FIELDS}
        self.saw_nonfinite = False

    def add(self, diag) -> None:
        if not diag.is_finite():
            if not self.saw_nonfinite:
                self.writer.write({"kind": "nonfinite", "update_index": diag.update_index})
            self.saw_nonfinite = True
        for k in self.FIELDS:
            v = getattr(diag, k)
            if v is not None:
                self._sums[k] += v
                self._counts[k] += 1
        if diag.update_index % self.interval == 0:
            self.flush(diag.update_index)

    def flush(self, update_index: int) -> None:
        record = {"kind": "diag", "update_index": update_index}
        any_count = False
        for k in self.FIELDS:
            if self._counts[k]:
                record[k] = self._sums[k] / self._counts[k]
                any_count = True
        if any_count:
            self.writer.write(record)
        self._sums = {k: 0.0 for k in self.FIELDS}
        self._counts = {k: 0 for k in self.FIELDS}


@dataclass
class RunResult:
    run_dir: Path | None
    final_return: float
    final_discounted_return: float
    agent: object
    saw_nonfinite: bool


def expand_sweep(raw: dict) -> list[dict]:
    """Expand lr/tau value grids in a raw JSON config into single-value configs.

    Only those two hyperparameters sweep; a list anywhere else stays an error
    for the config validator to report. Grids combine as a cross product in
    declaration order.
    """
    hp = raw.get("hyperparams", {})
    grids = [(k, hp[k]) for k in SWEEP_FIELDS if isinstance(hp.get(k), list)]
    if not grids:
        return [raw]
    expanded = []
    for combo in itertools.product(*(values for _, values in grids)):
        point = json.loads(json.dumps(raw))
        for (key, _), value in zip(grids, combo):
            point["hyperparams"][key] = value
        expanded.append(point)
    return expanded


def run_experiment(
    cfg: ExperimentConfig,
    out: str | Path | None = None,
    seeds: tuple[int, ...] | list[int] | None = None,
    write_outputs: bool = True,
) -> list[RunResult]:
    """Train every seed of one config; returns per-seed results in seed order.

    With outputs enabled, each seed writes metrics.jsonl under
    <out_root>/<run_id>/seed<k>/ and the run directory gets config.json,
    summary.csv, and plots/ once all seeds finish.
    """
    seeds = cfg.seeds if seeds is None else tuple(seeds)
    run_dir = None
    if write_outputs:
        run_dir = resolve_out_root(out) / cfg.run_id()
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "config.json", "w") as fh:
            json.dump({**cfg.to_dict(), "seeds": list(seeds)}, fh, sort_keys=True, indent=2)
    results = [_run_seed(cfg, seed, run_dir, write_outputs) for seed in seeds]
    if write_outputs:
        summarize_run(run_dir)
        emit_plots([run_dir])
    return results


def _run_seed(cfg: ExperimentConfig, seed: int, run_root: Path | None, write_outputs: bool) -> RunResult:
    budget = cfg.resolved_budget
    streams = make_rng_streams(seed)
    agent = build_agent(cfg, streams.init)

    run_dir = None
    metrics_path = None
    if write_outputs:
        run_dir = run_root / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = run_dir / "metrics.jsonl"

    writer = JsonlWriter(metrics_path)
    writer.write({"kind": "meta", "run_id": cfg.run_id(), "seed": seed, "env": cfg.env,
                  "agent": cfg.agent, "budget": budget})
    ring = SnapshotRing(cfg.metric_max_lags, cfg.metric_interval)
    aggregator = DiagAggregator(cfg.metric_interval, writer)
    eval_interval = max(1, budget // cfg.eval_points)
    gamma = cfg.hyperparams.gamma

    def run_eval(env_step: int) -> tuple[float, float]:
        mean_ret, mean_disc = evaluate(agent, cfg.env, gamma, cfg.eval_episodes)
        writer.write({"kind": "eval", "env_step": env_step, "mean_return": mean_ret,
                      "mean_discounted_return": mean_disc})
        return mean_ret, mean_disc

    if cfg.agent == "ppo":
        final_eval = _run_on_policy(cfg, agent, budget, streams, ring, aggregator, writer, eval_interval, run_eval)
    else:
        final_eval = _run_off_policy(cfg, agent, budget, streams, ring, aggregator, writer, eval_interval, run_eval)

    for side, controller in (("value", getattr(agent, "value_controller", None) or getattr(agent, "controller", None)),
                             ("policy", getattr(agent, "policy_controller", None))):
        if controller is not None:
            record = {"kind": "controller", "side": side, "band_hits": controller.band_hits,
                      "band_total": controller.band_total, "updates_observed": controller.updates_observed}
            frac = controller.band_fraction()
            if frac is not None:
                record["band_fraction"] = frac
            writer.write(record)
    writer.close()

    return RunResult(run_dir, final_eval[0], final_eval[1], agent, aggregator.saw_nonfinite)


def _write_churn_reports(writer: JsonlWriter, update_index: int, reports) -> None:
    for report in reports:
        for name, value in report.metric_items():
            # Exactly these four keys per record; consumers key on them.
            writer.write({"update_index": update_index, "lag": report.lag,
                          "metric_name": name, "value": value})


def _random_action(env_name: str, rng: np.random.Generator):
    spec = ENV_SPECS[env_name]
    if spec.action_kind == "discrete":
        return int(rng.integers(spec.n_actions))
    return rng.uniform(-1.0, 1.0, spec.action_dim)


def _run_off_policy(cfg, agent, budget, streams, ring, aggregator, writer, eval_interval, run_eval):
    env = make_env(cfg.env)
    buffer = agent.make_buffer(ENV_SPECS[cfg.env].obs_dim)
    obs = env.reset(rng=streams.train)
    final_eval = (-math.inf, -math.inf)
    for step in range(1, budget + 1):
        if step <= agent.initial_random_steps:
            action = _random_action(cfg.env, streams.train)
        else:
            action = agent.act(obs, step, streams.train)
        next_obs, reward, done = env.step(action)
        buffer.add(obs, action, reward, next_obs, done)
        obs = env.reset(rng=streams.train) if done else next_obs

        if step > agent.initial_random_steps and step % cfg.hyperparams.train_interval == 0:
            diag = agent.update(buffer, streams.train)
            aggregator.add(diag)
            if ring.due(agent.update_count):
                ref = buffer.sample(min(cfg.ref_batch_size, buffer.size), streams.metrics)
                reports = ring.record(agent.update_count, agent.churn_payload(),
                                      lambda lag, stored: agent.measure_churn(lag, stored, ref))
                _write_churn_reports(writer, agent.update_count, reports)

        if step % eval_interval == 0:
            final_eval = run_eval(step)
    aggregator.flush(agent.update_count)
    return final_eval


def _run_on_policy(cfg, agent, budget, streams, ring, aggregator, writer, eval_interval, run_eval):
    env = make_env(cfg.env)
    hp = cfg.hyperparams
    T = hp.rollout_length
    obs_dim = ENV_SPECS[cfg.env].obs_dim
    action_dim = ENV_SPECS[cfg.env].action_dim
    obs = env.reset(rng=streams.train)
    final_eval = (-math.inf, -math.inf)
    step = 0
    iterations = budget // T
    for iteration in range(iterations):
        obs_buf = np.empty((T, obs_dim))
        act_buf = np.empty((T, action_dim))
        rew_buf = np.empty(T)
        done_buf = np.empty(T)
        logp_buf = np.empty(T)
        value_buf = np.empty(T)
        for t in range(T):
            action, logp, value = agent.act_rollout(obs, streams.train)
            next_obs, reward, done = env.step(action)
            obs_buf[t] = obs
            act_buf[t] = action
            rew_buf[t] = reward
            done_buf[t] = float(done)
            logp_buf[t] = logp
            value_buf[t] = value
            obs = env.reset(rng=streams.train) if done else next_obs
            step += 1
            if step % eval_interval == 0:
                final_eval = run_eval(step)
        rollout = Rollout(obs_buf, act_buf, rew_buf, done_buf, logp_buf, value_buf,
                          last_value=agent.state_value(obs))
        _, ref_holdout = agent.split_indices(T)
        ref_obs = obs_buf[ref_holdout]

        def after_update(update_index: int) -> None:
            if ring.due(update_index):
                reports = ring.record(update_index, agent.churn_payload(),
                                      lambda lag, stored: agent.measure_churn(lag, stored, ref_obs))
                _write_churn_reports(writer, update_index, reports)

        diags, probe = agent.update_rollout(rollout, streams.train, after_update=after_update)
        for diag in diags:
            aggregator.add(diag)
        writer.write({"kind": "trust_probe", "iteration": iteration, "update_index": agent.update_count, **probe})
    aggregator.flush(agent.update_count)
    return final_eval


# ---------------------------------------------------------------------------
# Summaries and plots over finished run directories.


def read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _seed_dirs(run_dir: Path) -> list[Path]:
    return sorted(p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("seed"))


def collect_run(run_dir: Path) -> dict:
    """Per-seed series needed by summaries and plots, keyed by seed dir name."""
    out = {}
    for seed_dir in _seed_dirs(run_dir):
        records = read_jsonl(seed_dir / "metrics.jsonl")
        evals = [(r["env_step"], r["mean_return"], r["mean_discounted_return"])
                 for r in records if r.get("kind") == "eval"]
        churn: dict[str, dict[int, list[float]]] = {}
        for r in records:
            if "metric_name" in r:
                churn.setdefault(r["metric_name"], {}).setdefault(r["lag"], []).append(r["value"])
        probes = [r for r in records if r.get("kind") == "trust_probe"]
        out[seed_dir.name] = {"evals": evals, "churn": churn, "probes": probes}
    return out


def _mean_stderr(values: list[float]) -> tuple[float, float | None]:
    arr = np.asarray(values)
    if arr.size <= 1:
        return float(arr.mean()) if arr.size else math.nan, None
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def summarize_run(run_dir: Path) -> list[dict]:
    """Cross-seed summary rows; also written to <run_dir>/summary.csv."""
    per_seed = collect_run(run_dir)
    if not per_seed:
        raise FileNotFoundError(f"no seed directories under {run_dir}")
    rows = []

    finals = [s["evals"][-1] for s in per_seed.values() if s["evals"]]
    if finals:
        for label, idx in (("final_return", 1), ("final_discounted_return", 2)):
            mean, stderr = _mean_stderr([f[idx] for f in finals])
            rows.append({"quantity": label, "mean": mean, "stderr": stderr, "n_seeds": len(finals)})

    metric_names = sorted({m for s in per_seed.values() for m in s["churn"]})
    for name in metric_names:
        # Training average per seed (all lags, all measurement points), then across seeds.
        seed_means = [
            float(np.mean([v for vals in s["churn"][name].values() for v in vals]))
            for s in per_seed.values() if name in s["churn"]
        ]
        mean, stderr = _mean_stderr(seed_means)
        rows.append({"quantity": f"avg_{name}", "mean": mean, "stderr": stderr, "n_seeds": len(seed_means)})

    probe_keys = ("ratio_mean_abs_dev", "ratio_violation_fraction")
    for key in probe_keys:
        seed_means = [
            float(np.mean([p[key] for p in s["probes"]]))
            for s in per_seed.values() if s["probes"]
        ]
        if seed_means:
            mean, stderr = _mean_stderr(seed_means)
            rows.append({"quantity": f"avg_{key}", "mean": mean, "stderr": stderr, "n_seeds": len(seed_means)})

    with open(run_dir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["quantity", "mean", "stderr", "n_seeds"])
        w.writeheader()
        for row in rows:
            w.writerow({**row, "stderr": "" if row["stderr"] is None else row["stderr"]})
    return rows


def _condition_label(run_dir: Path) -> str:
    """Human-readable series label for one run directory."""
    config_path = run_dir / "config.json"
    if config_path.exists():
        with open(config_path) as fh:
            cfg = json.load(fh)
        label = f"{cfg['agent']}/{cfg['chain']['mode']}"
        ratio = cfg.get("net", {}).get("scale_ratio", 1)
        if ratio != 1:
            label += f"/x{ratio}"
        return label
    return run_dir.name


def _return_series(per_seed: dict) -> tuple[list[int], list[float], list[float]] | None:
    """Across-seed mean and standard error of evaluation return per step."""
    by_step: dict[int, list[float]] = {}
    for series in per_seed.values():
        for step, ret, _ in series["evals"]:
            by_step.setdefault(step, []).append(ret)
    if not by_step:
        return None
    steps = sorted(by_step)
    means, errs = [], []
    for step in steps:
        m, e = _mean_stderr(by_step[step])
        means.append(m)
        errs.append(0.0 if e is None else e)
    return steps, means, errs


def emit_plots(run_dirs, dest: str | Path | None = None) -> list[Path]:
    """Return-vs-step and churn-vs-lag charts, one series per run directory.

    Series show the across-seed mean with a standard-error band. A single
    directory plots into its own plots/ subdirectory, a comparison of several
    into plots/ under their common parent unless dest says otherwise. Output
    is deterministic SVG (fixed hash salt, no timestamps).
    """
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "churnlab"
    matplotlib.rcParams["svg.fonttype"] = "none"  # keep labels as searchable text
    import matplotlib.pyplot as plt

    if isinstance(run_dirs, (str, Path)):
        run_dirs = [run_dirs]
    dirs = [Path(d) for d in run_dirs]
    conditions = []
    labels_seen: set[str] = set()
    for d in dirs:
        per_seed = collect_run(d)
        if not per_seed:
            raise FileNotFoundError(f"no seed directories under {d}")
        label = _condition_label(d)
        if label in labels_seen:
            label = f"{label} ({d.name})"
        labels_seen.add(label)
        conditions.append((label, per_seed))

    if dest is None:
        dest = dirs[0] / "plots" if len(dirs) == 1 else dirs[0].parent / "plots"
    plot_dir = Path(dest)
    plot_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def save_fig(fig, filename: str) -> None:
        path = plot_dir / filename
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    return_series = [(label, _return_series(per_seed)) for label, per_seed in conditions]
    if any(series is not None for _, series in return_series):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, series in return_series:
            if series is None:
                continue
            steps, means, errs = series
            ax.plot(steps, means, label=label, alpha=0.9)
            lo = [m - e for m, e in zip(means, errs)]
            hi = [m + e for m, e in zip(means, errs)]
            ax.fill_between(steps, lo, hi, alpha=0.2)
        ax.set_xlabel("env step")
        ax.set_ylabel("mean evaluation return")
        ax.legend(fontsize=7)
        fig.tight_layout()
        save_fig(fig, "return_vs_step.svg")
    else:
        print("no evaluation records in any run directory; skipping return_vs_step.svg",
              file=sys.stderr)

    metric_names = sorted({m for _, per_seed in conditions for s in per_seed.values() for m in s["churn"]})
    for name in metric_names:
        fig, ax = plt.subplots(figsize=(6, 4))
        plotted = False
        for label, per_seed in conditions:
            lags = sorted({lag for s in per_seed.values() for lag in s["churn"].get(name, {})})
            if not lags:
                continue
            means, errs = [], []
            for lag in lags:
                seed_means = [float(np.mean(s["churn"][name][lag]))
                              for s in per_seed.values() if lag in s["churn"].get(name, {})]
                m, e = _mean_stderr(seed_means)
                means.append(m)
                errs.append(0.0 if e is None else e)
            ax.plot(lags, means, marker="o", label=label, alpha=0.9)
            lo = [m - e for m, e in zip(means, errs)]
            hi = [m + e for m, e in zip(means, errs)]
            ax.fill_between(lags, lo, hi, alpha=0.2)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xlabel("lag (measurement intervals)")
        ax.set_ylabel(name)
        ax.legend(fontsize=7)
        fig.tight_layout()
        save_fig(fig, f"churn_vs_lag_{name}.svg")
    return written
