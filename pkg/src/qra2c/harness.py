"""Experiment driver: configs, training with periodic greedy evaluation, logs and snapshots."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .agents import AgentConfig, ActorCriticAgent, QRDQNAgent, ReplayBuffer, make_agent
from .envs import ENV_IDS, default_solve_threshold, make_env
from .nn import ConfigurationError, NumericError, ParameterSet
from .rollout import WorkerPool, collect, synchronous_update

log = logging.getLogger(__name__)

CSV_COLUMNS = ("update", "mean_test_reward", "stddev_test_reward", "wallclock_s",
               "algo", "env", "atoms", "shared", "seed")
OUTPUT_ROOT_ENV = "QRA2C_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: str = "cartpole"
    total_updates: int = 2400
    eval_interval: int = 80
    eval_episodes: int = 20
    solve_threshold: float | None = None
    seed: int = 0
    output_dir: str = "runs/default"
    parallel: bool = False
    stop_on_solve: bool = False
    record_wallclock: bool = False
    chain_length: int = 5
    max_episode_steps: int | None = None
    label: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.env not in ENV_IDS:
            raise ConfigurationError(f"env: unknown environment {self.env!r}; expected one of {ENV_IDS}")
        if self.total_updates < 0:
            raise ConfigurationError(f"total_updates: must be >= 0 (got {self.total_updates})")
        if self.eval_interval < 1:
            raise ConfigurationError(f"eval_interval: must be >= 1 (got {self.eval_interval})")
        if self.eval_episodes < 1:
            raise ConfigurationError(f"eval_episodes: must be >= 1 (got {self.eval_episodes})")
        if self.max_episode_steps is not None and self.max_episode_steps < 1:
            raise ConfigurationError("max_episode_steps: must be >= 1")
        self.agent.validate()

    def env_kwargs(self) -> dict:
        kw = {}
        if self.env == "chainworld":
            kw["length"] = self.chain_length
        if self.max_episode_steps is not None:
            kw["max_episode_steps"] = self.max_episode_steps
        return kw

    def threshold(self) -> float:
        if self.solve_threshold is not None:
            return self.solve_threshold
        return default_solve_threshold(make_env(self.env, **self.env_kwargs()).spec)

    @property
    def critic_atoms(self) -> int:
        return 1 if self.agent.algo == "a2c" else self.agent.num_atoms


@dataclass
class EvalReport:
    update_index: int
    mean_test_reward: float
    stddev_test_reward: float
    first_solve_update: int | None = None


class TrainingAborted(RuntimeError):
    pass


# -- config files ---------------------------------------------------------

_EXPERIMENT_KEYS = [f.name for f in fields(ExperimentConfig) if f.name != "agent"]
_AGENT_KEYS = AgentConfig.field_names()
# Short aliases accepted in files and on the command line.
ALIASES = {"atoms": "num_atoms", "lr": "learning_rate", "workers": "num_workers",
           "shared": "shared_trunk", "updates": "total_updates", "out": "output_dir",
           "gradient_clip": "grad_clip"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key == "hidden":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if key in ("solve_threshold",):
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if key == "max_episode_steps":
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} ({exc})") from None


def parse_config_text(text: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(values: dict) -> ExperimentConfig:
    agent_defaults = AgentConfig.__dataclass_fields__
    exp_defaults = ExperimentConfig.__dataclass_fields__
    agent_kw, exp_kw = {}, {}
    for key, raw in values.items():
        key = ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key in _AGENT_KEYS:
            default = agent_defaults[key].default
            agent_kw[key] = _convert(key, raw, default)
        elif key in _EXPERIMENT_KEYS:
            f = exp_defaults[key]
            exp_kw[key] = _convert(key, raw, f.default)
        else:
            raise ConfigurationError(f"{key}: unknown config field")
    return ExperimentConfig(agent=AgentConfig(**agent_kw), **exp_kw)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text())
    values.update(overrides or {})
    return build_config(values)


def config_to_text(config: ExperimentConfig) -> str:
    lines = []
    for key, value in [*((k, getattr(config, k)) for k in _EXPERIMENT_KEYS),
                       *asdict(config.agent).items()]:
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "auto"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def resolve_run_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    return out if out.is_absolute() else output_root() / out


# -- parameter snapshots --------------------------------------------------
#
# Layout (all little-endian):
#   b"QRAC" | u32 version=1 | u32 block_count
#   per block: u16 name_len | name (utf-8) | u32 layer_count
#     per layer: u8 activation | u32 out | u32 in | f64[out*in] weight (row-major) | f64[out] bias

SNAPSHOT_MAGIC = b"QRAC"
SNAPSHOT_VERSION = 1
_ACT_CODES = {"relu": 0, "linear": 1, "softmax-logits": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def dump_params(params: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(SNAPSHOT_MAGIC)
    buf.write(struct.pack("<II", SNAPSHOT_VERSION, len(params)))
    for name in sorted(params):
        ps = params[name]
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", len(ps.weights)))
        for w, b, act in zip(ps.weights, ps.biases, ps.activations):
            buf.write(struct.pack("<BII", _ACT_CODES[act], w.shape[0], w.shape[1]))
            buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def load_params(data: bytes) -> dict:
    view = memoryview(data)
    if bytes(view[:4]) != SNAPSHOT_MAGIC:
        raise ValueError("not a parameter snapshot (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    pos = 12
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (layers,) = struct.unpack_from("<I", view, pos)
        pos += 4
        ws, bs, acts = [], [], []
        for _ in range(layers):
            code, out, inp = struct.unpack_from("<BII", view, pos)
            pos += 9
            ws.append(np.frombuffer(view, "<f8", out * inp, pos).reshape(out, inp).astype(np.float64))
            pos += 8 * out * inp
            bs.append(np.frombuffer(view, "<f8", out, pos).astype(np.float64))
            pos += 8 * out
            acts.append(_ACT_NAMES[code])
        params[name] = ParameterSet(ws, bs, tuple(acts))
    if pos != len(data):
        raise ValueError("trailing bytes after snapshot")
    return params


def save_params(params: dict, path) -> None:
    Path(path).write_bytes(dump_params(params))


def read_params(path) -> dict:
    return load_params(Path(path).read_bytes())


# -- evaluation -----------------------------------------------------------

def evaluate(agent, params: dict, env_id: str, episodes: int, seed: int,
             env_kwargs: dict | None = None) -> EvalReport:
    """Greedy rollouts; mean and population stddev of undiscounted returns.

    Episode ``i`` starts from ``reset(seed + i)``; all episodes are stepped
    together so the policy network sees one batch per tick.
    """
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    envs = [make_env(env_id, **(env_kwargs or {})) for _ in range(episodes)]
    obs = [env.reset(seed=seed + i) for i, env in enumerate(envs)]
    returns = np.zeros(episodes)
    live = list(range(episodes))
    while live:
        actions = agent.greedy_actions(params, np.array([obs[i] for i in live]))
        still = []
        for i, a in zip(live, actions):
            res = envs[i].step(int(a))
            returns[i] += res.reward
            obs[i] = res.observation
            if not (res.done or res.truncated):
                still.append(i)
        live = still
    return EvalReport(0, float(returns.mean()), float(returns.std()))


# -- training loops -------------------------------------------------------

class ActorCriticLearner:
    def __init__(self, agent: ActorCriticAgent, pool: WorkerPool, params: dict):
        self.agent = agent
        self.pool = pool
        self.params = params
        self.optimizer = nn.Adam(params, agent.config.learning_rate)
        self.updates = 0

    def update(self) -> float:
        c = self.agent.config
        segments = collect(self.pool, self.agent, self.params, c.n_steps)
        self.params, loss = synchronous_update(segments, self.agent, self.params,
                                               self.optimizer, c.grad_clip)
        self.updates += 1
        return loss


class QRDQNLearner:
    """One update = one collect of ``n_steps`` per worker (same sample budget as
    the actor-critic learners) followed by one gradient step per ``train_freq``
    new transitions once the buffer holds ``learning_starts`` of them."""

    def __init__(self, agent: QRDQNAgent, pool: WorkerPool, params: dict, seed: int):
        c = agent.config
        self.agent = agent
        self.pool = pool
        self.params = params
        self.target = nn.tree_map(np.array, params)
        self.optimizer = nn.Adam(params, c.learning_rate)
        self.buffer = ReplayBuffer(c.replay_capacity, pool.spec.observation_width)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        self.env_steps = 0
        self.grad_steps = 0
        self._pending = 0
        self.updates = 0

    def update(self) -> float:
        c = self.agent.config
        eps = self.agent.epsilon(self.env_steps)
        segments = collect(self.pool, self.agent, self.params, c.n_steps, epsilon=eps)
        for seg in segments:
            self.buffer.add_segment(seg)
            self._pending += len(seg)
            self.env_steps += len(seg)
        losses = []
        while self._pending >= c.train_freq:
            self._pending -= c.train_freq
            if len(self.buffer) < max(c.learning_starts, c.batch_size):
                continue
            batch = self.buffer.sample(c.batch_size, self.rng)
            loss, grads = self.agent.loss_and_grad(self.params, self.target, batch)
            grads = nn.clip_global_norm(grads, c.grad_clip)
            self.params = self.optimizer.step(self.params, grads)
            self.grad_steps += 1
            if self.grad_steps % c.target_sync_interval == 0:
                self.target = nn.tree_map(np.array, self.params)
            losses.append(loss)
        self.updates += 1
        return float(np.mean(losses)) if losses else float("nan")


def build_learner(config: ExperimentConfig):
    c = config.agent
    pool = WorkerPool(config.env, c.num_workers, config.seed, config.parallel,
                      config.env_kwargs())
    agent = make_agent(c, pool.spec)
    params = agent.init_params(np.random.default_rng(np.random.SeedSequence([config.seed, 0x1A17])))
    if isinstance(agent, QRDQNAgent):
        return QRDQNLearner(agent, pool, params, config.seed)
    return ActorCriticLearner(agent, pool, params)


def eval_seed(config: ExperimentConfig) -> int:
    return 1_000_000 + 1000 * config.seed


def _format_row(config: ExperimentConfig, report: EvalReport, wallclock: float) -> list[str]:
    return [str(report.update_index), f"{report.mean_test_reward:.4f}",
            f"{report.stddev_test_reward:.4f}",
            f"{wallclock:.3f}" if config.record_wallclock else "0.000",
            config.agent.algo, config.env, str(config.critic_atoms),
            "true" if config.agent.shared_trunk else "false", str(config.seed)]


def run_experiment(config: ExperimentConfig, run_dir=None) -> dict:
    """Train, evaluating greedily every ``eval_interval`` updates.

    Writes ``metrics.csv``, ``summary.json``, ``config.cfg`` and ``params.bin``
    into the run directory and returns the summary dict. On a numeric failure
    the partial logs stay on disk and :class:`TrainingAborted` is raised.
    """
    config.validate()
    run_dir = Path(run_dir) if run_dir is not None else resolve_run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(config_to_text(config))
    learner = build_learner(config)
    threshold = config.threshold()
    summary = {"first_solve_update": None, "updates": 0, "final": None,
               "solve_threshold": threshold, "status": "ok"}
    start = time.perf_counter()
    reports = []
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        fh.flush()
        try:
            for update in range(1, config.total_updates + 1):
                learner.update()
                summary["updates"] = update
                if update % config.eval_interval:
                    continue
                rep = evaluate(learner.agent, learner.params, config.env, config.eval_episodes,
                               eval_seed(config), config.env_kwargs())
                rep.update_index = update
                if summary["first_solve_update"] is None and rep.mean_test_reward >= threshold:
                    summary["first_solve_update"] = update
                rep.first_solve_update = summary["first_solve_update"]
                reports.append(rep)
                writer.writerow(_format_row(config, rep, time.perf_counter() - start))
                fh.flush()
                log.info("update %d: mean %.2f std %.2f", update, rep.mean_test_reward,
                         rep.stddev_test_reward)
                if config.stop_on_solve and summary["first_solve_update"] is not None:
                    break
        except (NumericError, FloatingPointError) as exc:
            summary["status"] = f"aborted: {exc}"
            _write_summary(run_dir, summary)
            save_params(learner.params, run_dir / "params.bin")
            raise TrainingAborted(f"update {summary['updates'] + 1}: {exc}") from exc
        finally:
            learner.pool.close()
    if reports:
        summary["final"] = asdict(reports[-1])
    _write_summary(run_dir, summary)
    save_params(learner.params, run_dir / "params.bin")
    summary["run_dir"] = str(run_dir)
    summary["reports"] = reports
    return summary


def _write_summary(run_dir: Path, summary: dict):
    data = {k: v for k, v in summary.items() if k not in ("reports", "run_dir")}
    (run_dir / "summary.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def evaluate_snapshot(config: ExperimentConfig, params_path, episodes: int | None = None,
                      seed: int | None = None) -> EvalReport:
    spec = make_env(config.env, **config.env_kwargs()).spec
    agent = make_agent(config.agent, spec)
    params = read_params(params_path)
    return evaluate(agent, params, config.env, episodes or config.eval_episodes,
                    eval_seed(config) if seed is None else seed, config.env_kwargs())


def sweep(config: ExperimentConfig, atoms=(16, 32, 64, 128), shared=(True, False),
          seeds=(0,)) -> list[dict]:
    """Grid over atom counts, trunk sharing and seeds; one run directory per cell."""
    base = resolve_run_dir(config)
    results = []
    for n, sh, s in itertools.product(atoms, shared, seeds):
        cell = replace(config, agent=replace(config.agent, num_atoms=n, shared_trunk=sh), seed=s,
                       label=f"{config.agent.algo} atoms={n} {'shared' if sh else 'separate'}")
        name = f"atoms{n}_{'shared' if sh else 'separate'}_seed{s}"
        res = run_experiment(cell, base / name)
        res["label"] = cell.label
        results.append(res)
    return results
