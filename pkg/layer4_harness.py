"""
Layer 4: Experiment Harness

Orchestrates the benchmark:

- train: the TD3 loop flattened into one env-step loop with episode resets
  (uniform warm-up actions for start_steps, then one train_step per step)
- evaluate: greedy rollouts producing success rate, ER and ET statistics
- sweep: every (eta, seed) cell trained independently and evaluated on the
  training and the evaluation scenario
- moving averages, CSV logs, trajectory traces and checkpoints

All randomness derives from one master seed through named streams, so
changing eta never perturbs the env, init or sampling streams.

Standard deviations use the population convention (divide by n).
"""

import csv
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from config_loader import load_config, validate_sections
from layer0_nncore import ConfigError, NonFiniteError, ShapeError
from layer1_replay import DEFAULT_CAPACITY, ReplayBuffer, Transition
from layer2_agent import Td3Agent, Td3Config, load_checkpoint, random_warmup_action
from layer3_envs import (
    AERIAL,
    MODES,
    TERRESTRIAL,
    EnvSpec,
    NavigationEnv,
    Outcome,
    Scenario,
    make_spec,
    resolve_scenario,
    save_scenario,
)
from sweep_worker import CellStatus, SweepCell, run_cells

STD_CONVENTION = "population standard deviation (ddof=0)"

# Named rng streams: index i of SeedSequence([seed, i])
RNG_STREAMS = {
    "init": 0,
    "env": 1,
    "agent-noise": 2,
    "buffer-sampling": 3,
    "target-noise": 4,
    "warmup": 5,
    "eval-env": 6,
    "eval-random": 7,
}


class TrainingDivergedError(RuntimeError):
    """A loss or gradient went non-finite during training."""

    def __init__(self, episode: int, cause: Exception):
        super().__init__(f"Training diverged in episode {episode}: {cause}")
        self.episode = episode


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named stream of a master seed."""
    if stream not in RNG_STREAMS:
        raise ValueError(f"Unknown rng stream '{stream}'")
    return np.random.default_rng(np.random.SeedSequence([int(seed), RNG_STREAMS[stream]]))


# ======================================================================
# Config
# ======================================================================

@dataclass
class ExperimentConfig:
    mode: str = TERRESTRIAL
    train_scenario: str = "terrestrial-train"
    eval_scenario: str = "terrestrial-eval"
    td3: Td3Config = field(default_factory=Td3Config)
    env_overrides: Dict = field(default_factory=dict)
    train_episodes: int = 500
    eval_episodes: int = 100
    seed: int = 0
    ma_window: int = 100
    ma_short_window: int = 10
    buffer_capacity: int = DEFAULT_CAPACITY
    workers: int = 1
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        for name in ("train_episodes", "eval_episodes", "ma_window", "ma_short_window", "buffer_capacity", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
            setattr(self, name, int(getattr(self, name)))
        self.seed = int(self.seed)
        # Fail early on unknown scenarios or bad env overrides
        self.scenario("train")
        self.scenario("eval")
        self.env_spec()

    def env_spec(self) -> EnvSpec:
        return make_spec(self.mode, **self.env_overrides)

    def scenario(self, role: str) -> Scenario:
        return resolve_scenario(self.train_scenario if role == "train" else self.eval_scenario)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        td3_overrides = overrides.pop("td3", None)
        config = replace(self, **overrides)
        if td3_overrides:
            config = replace(config, td3=replace(config.td3, **td3_overrides))
        return config

    def to_sections(self) -> dict:
        run = {
            "mode": self.mode,
            "train_scenario": self.train_scenario,
            "eval_scenario": self.eval_scenario,
            "train_episodes": self.train_episodes,
            "eval_episodes": self.eval_episodes,
            "seed": self.seed,
            "ma_window": self.ma_window,
            "ma_short_window": self.ma_short_window,
            "buffer_capacity": self.buffer_capacity,
            "workers": self.workers,
        }
        if self.out_dir is not None:
            run["out_dir"] = self.out_dir
        return {"env": dict(self.env_overrides), "td3": self.td3.to_dict(), "run": run}

    @classmethod
    def from_sections(cls, sections: dict) -> "ExperimentConfig":
        sections = validate_sections(sections)
        run = dict(sections["run"])
        return cls(td3=Td3Config.from_dict(sections["td3"]), env_overrides=dict(sections["env"]), **run)

    @classmethod
    def from_file(cls, name_or_path) -> "ExperimentConfig":
        return cls.from_sections(load_config(name_or_path))


# ======================================================================
# Records and metrics
# ======================================================================

@dataclass
class EpisodeRecord:
    index: int
    outcome: str
    total_reward: float
    steps: int
    episode_time: float
    trajectory: List[tuple] = field(default_factory=list)
    warmup_steps: int = 0
    critic_updates: int = 0
    actor_updates: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == Outcome.ARRIVE.value


@dataclass
class MetricsReport:
    episodes: int
    success_rate: float
    er_mean: float
    er_std: float
    et_mean: float
    et_std: float

    @classmethod
    def from_records(cls, records: Sequence[EpisodeRecord]) -> "MetricsReport":
        if not records:
            raise ValueError("Cannot aggregate metrics over zero episodes")
        rewards = np.array([r.total_reward for r in records], dtype=np.float64)
        times = np.array([r.episode_time for r in records], dtype=np.float64)
        successes = sum(1 for r in records if r.success)
        return cls(
            episodes=len(records),
            success_rate=100.0 * successes / len(records),
            er_mean=float(rewards.mean()),
            er_std=float(rewards.std()),
            et_mean=float(times.mean()),
            et_std=float(times.std()),
        )

    def as_row(self, include_time: bool = True) -> dict:
        row = {
            "Success Rate (%)": self.success_rate,
            "ER Mean": self.er_mean,
            "ER Std": self.er_std,
        }
        if include_time:
            row["ET Mean"] = self.et_mean
            row["ET Std"] = self.et_std
        return row


def moving_average(series: Sequence[float], window: int) -> List[float]:
    """
    Trailing mean; element i averages the last min(i + 1, window) values.

    Raises:
        ValueError: window < 1
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = np.asarray(series, dtype=np.float64)
    return [float(values[max(0, i + 1 - window): i + 1].mean()) for i in range(len(values))]


# ======================================================================
# CSV output
# ======================================================================

def _write_csv(path: Path, fieldnames: List[str], rows: List[dict], comment: Optional[str] = None) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


EPISODE_LOG_FIELDS = [
    "episode", "outcome", "reward", "steps", "episode_time",
    "warmup_steps", "critic_updates", "actor_updates", "ma_reward", "ma_short_reward",
]


def write_episode_log(records: Sequence[EpisodeRecord], path, ma_window: int, ma_short_window: int) -> Path:
    rewards = [r.total_reward for r in records]
    ma = moving_average(rewards, ma_window)
    ma_short = moving_average(rewards, ma_short_window)
    rows = [
        {
            "episode": r.index,
            "outcome": r.outcome,
            "reward": r.total_reward,
            "steps": r.steps,
            "episode_time": r.episode_time,
            "warmup_steps": r.warmup_steps,
            "critic_updates": r.critic_updates,
            "actor_updates": r.actor_updates,
            "ma_reward": ma[i],
            "ma_short_reward": ma_short[i],
        }
        for i, r in enumerate(records)
    ]
    return _write_csv(path, EPISODE_LOG_FIELDS, rows)


def write_reward_ma(records: Sequence[EpisodeRecord], path, ma_window: int, ma_short_window: int) -> Path:
    rewards = [r.total_reward for r in records]
    ma = moving_average(rewards, ma_window)
    ma_short = moving_average(rewards, ma_short_window)
    rows = [
        {"episode": r.index, "reward": r.total_reward, f"ma_{ma_window}": ma[i], f"ma_{ma_short_window}": ma_short[i]}
        for i, r in enumerate(records)
    ]
    fieldnames = ["episode", "reward", f"ma_{ma_window}", f"ma_{ma_short_window}"]
    if ma_window == ma_short_window:
        fieldnames = fieldnames[:3]
    return _write_csv(path, fieldnames, rows)


def metrics_fieldnames(mode: str, leading: Sequence[str]) -> List[str]:
    names = list(leading) + ["Success Rate (%)", "ER Mean", "ER Std"]
    if mode == AERIAL:
        names += ["ET Mean", "ET Std"]
    return names


def export_trajectories(records: Sequence[EpisodeRecord], path, scenario: Optional[Scenario] = None,
                        aerial: Optional[bool] = None) -> List[Path]:
    """
    Write one traj_<episode>.csv per record plus scenario.json for overlays.

    Args:
        records: episodes whose trajectory holds (x, y, yaw) or (x, y, z, yaw) poses
        path: output directory (created if missing)
        scenario: geometry to write next to the traces
        aerial: force the column layout; inferred from the pose width if None

    Returns:
        list of written paths
    """
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for record in records:
        if not record.trajectory:
            raise ValueError(f"Episode {record.index} has no trajectory to export")
        is_aerial = aerial if aerial is not None else len(record.trajectory[0]) == 4
        columns = ["x", "y", "z", "yaw"] if is_aerial else ["x", "y", "yaw"]
        rows = [{"step": t, **dict(zip(columns, pose))} for t, pose in enumerate(record.trajectory)]
        written.append(_write_csv(out_dir / f"traj_{record.index}.csv", ["step"] + columns, rows))
    if scenario is not None:
        geometry = out_dir / "scenario.json"
        save_scenario(scenario, geometry)
        written.append(geometry)
    return written


# ======================================================================
# Rollouts
# ======================================================================

def run_episode(env: NavigationEnv, policy: Callable[[np.ndarray], np.ndarray], index: int) -> EpisodeRecord:
    """Roll one episode with a fixed policy; nothing is learned or stored."""
    obs = env.reset()
    trajectory = [env.pose()]
    total = 0.0
    done = False
    info = {}
    while not done:
        obs, reward, done, info = env.step(policy(obs))
        total += reward
        trajectory.append(env.pose())
    return EpisodeRecord(
        index=index,
        outcome=info["outcome"],
        total_reward=total,
        steps=info["ep"],
        episode_time=info["ep"] * env.spec.dt,
        trajectory=trajectory,
    )


@dataclass
class TrainingResult:
    agent: Td3Agent
    records: List[EpisodeRecord]
    env_steps: int
    out_dir: Optional[Path] = None
    checkpoint_path: Optional[Path] = None

    @property
    def rewards(self) -> List[float]:
        return [r.total_reward for r in self.records]


def train(config: ExperimentConfig, out_dir=None, verbose: bool = True,
          keep_trajectories: bool = False) -> TrainingResult:
    """
    Train one agent on the config's training scenario.

    Args:
        config: experiment configuration (eta lives in config.td3)
        out_dir: where to write episodes.csv, reward_ma.csv, checkpoint.bin and
                 summary.txt (falls back to config.out_dir; nothing written if both None)
        verbose: progress bar and status lines
        keep_trajectories: keep each episode's pose trace on its record

    Returns:
        TrainingResult

    Raises:
        TrainingDivergedError: non-finite loss, with the episode index
    """
    out_dir = out_dir if out_dir is not None else config.out_dir
    spec = config.env_spec()
    td3 = config.td3
    seed = config.seed

    env = NavigationEnv(spec, config.scenario("train"), rng=make_rng(seed, "env"))
    agent = Td3Agent.for_env(spec, td3, rng=make_rng(seed, "init"))
    buffer = ReplayBuffer(spec.state_dim, spec.action_dim, capacity=config.buffer_capacity)
    noise_rng = make_rng(seed, "agent-noise")
    sample_rng = make_rng(seed, "buffer-sampling")
    target_rng = make_rng(seed, "target-noise")
    warmup_rng = make_rng(seed, "warmup")

    if verbose:
        tqdm.write(
            f"🚀 [L4] Training {spec.mode} on '{env.scenario.name}' | eta={td3.eta} | seed={seed} "
            f"| episodes={config.train_episodes}"
        )

    records: List[EpisodeRecord] = []
    global_step = 0
    bar = tqdm(range(config.train_episodes), desc=f"train eta={td3.eta}", disable=not verbose)
    for episode in bar:
        obs = env.reset()
        agent.reset_noise()
        trajectory = [env.pose()] if keep_trajectories else []
        total = 0.0
        warmup_steps = 0
        done = False
        while not done:
            warmup = global_step < td3.start_steps
            if warmup:
                action = random_warmup_action(spec, warmup_rng)
                warmup_steps += 1
            else:
                action = agent.select_action(obs, explore=True, rng=noise_rng)
            next_obs, reward, done, info = env.step(action)
            buffer.push(Transition(obs, action, reward, next_obs, done))
            obs = next_obs
            total += reward
            if keep_trajectories:
                trajectory.append(env.pose())
            global_step += 1

            if not warmup:
                try:
                    agent.train_step(buffer, sample_rng, noise_rng=target_rng)
                except NonFiniteError as e:
                    if verbose:
                        tqdm.write(f"❌ [L4] Non-finite loss in episode {episode}: {e}")
                    raise TrainingDivergedError(episode, e) from e

        records.append(EpisodeRecord(
            index=episode,
            outcome=info["outcome"],
            total_reward=total,
            steps=info["ep"],
            episode_time=info["ep"] * spec.dt,
            trajectory=trajectory,
            warmup_steps=warmup_steps,
            critic_updates=agent.critic_update_count,
            actor_updates=agent.actor_update_count,
        ))
        if verbose and (episode + 1) % 10 == 0:
            recent = [r.total_reward for r in records[-config.ma_window:]]
            bar.set_postfix(ma_reward=f"{np.mean(recent):.2f}", actor_updates=agent.actor_update_count)

    result = TrainingResult(agent=agent, records=records, env_steps=global_step)
    if out_dir is not None:
        _write_training_outputs(result, config, Path(out_dir), verbose)
    return result


def _write_training_outputs(result: TrainingResult, config: ExperimentConfig, out_dir: Path, verbose: bool):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_episode_log(result.records, out_dir / "episodes.csv", config.ma_window, config.ma_short_window)
    write_reward_ma(result.records, out_dir / "reward_ma.csv", config.ma_window, config.ma_short_window)
    checkpoint = out_dir / "checkpoint.bin"
    result.agent.save(checkpoint)
    agent = result.agent
    successes = sum(1 for r in result.records if r.success)
    summary = [
        f"mode: {config.mode}",
        f"train_scenario: {config.train_scenario}",
        f"seed: {config.seed}",
        f"eta: {config.td3.eta}",
        f"episodes: {len(result.records)}",
        f"env_steps: {result.env_steps}",
        f"warmup_steps: {min(result.env_steps, config.td3.start_steps)}",
        f"critic_updates: {agent.critic_update_count}",
        f"actor_updates: {agent.actor_update_count}",
        f"successes: {successes}",
        f"std convention: {STD_CONVENTION}",
    ]
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    result.out_dir = out_dir
    result.checkpoint_path = checkpoint
    if verbose:
        tqdm.write(f"💾 [L4] Training outputs written to {out_dir}")


@dataclass
class EvaluationResult:
    report: MetricsReport
    records: List[EpisodeRecord]
    scenario: Scenario
    mode: str


def _mode_for_agent(agent: Td3Agent) -> str:
    return AERIAL if agent.action_dim == 3 else TERRESTRIAL


def evaluate(checkpoint, scenario, episodes: int = 100, seed: int = 0, mode: Optional[str] = None,
             env_overrides: Optional[dict] = None, out_dir=None, verbose: bool = True) -> EvaluationResult:
    """
    Greedy evaluation of a trained agent.

    Args:
        checkpoint: a Td3Agent or a path to a td3-v1 checkpoint
        scenario: scenario name, path or Scenario
        episodes: number of evaluation episodes
        seed: master seed (the eval-env stream is used)
        mode: env mode; defaults to the mode the checkpoint was trained on,
              else inferred from the action width
        env_overrides: EnvSpec overrides applied on top of the checkpoint's
                       training env spec (or on top of the mode defaults)
        out_dir: if given, metrics.csv and traj_<ep>.csv files are written here

    Raises:
        ConfigError: mode disagrees with the checkpoint's training env
        ShapeError: checkpoint widths disagree with the environment
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    agent = checkpoint if isinstance(checkpoint, Td3Agent) else load_checkpoint(checkpoint)
    if agent.env_spec is not None:
        trained_on = EnvSpec.from_dict(agent.env_spec)
        if mode is not None and mode != trained_on.mode:
            raise ConfigError(f"Checkpoint was trained on {trained_on.mode}, cannot evaluate it as {mode}")
        spec = trained_on.with_overrides(**(env_overrides or {}))
    else:
        spec = make_spec(mode or _mode_for_agent(agent), **(env_overrides or {}))
    mode = spec.mode
    if spec.state_dim != agent.state_dim or spec.action_dim != agent.action_dim:
        raise ShapeError(
            f"Checkpoint expects state/action widths {agent.state_dim}/{agent.action_dim}, "
            f"{mode} env provides {spec.state_dim}/{spec.action_dim}"
        )
    env = NavigationEnv(spec, resolve_scenario(scenario), rng=make_rng(seed, "eval-env"))
    policy = lambda obs: agent.select_action(obs, explore=False)
    records = [
        run_episode(env, policy, i)
        for i in tqdm(range(episodes), desc=f"eval {env.scenario.name}", disable=not verbose)
    ]
    report = MetricsReport.from_records(records)
    if verbose:
        tqdm.write(
            f"📊 [L4] {env.scenario.name}: success {report.success_rate:.2f}% | "
            f"ER {report.er_mean:.2f} ± {report.er_std:.2f} | ET {report.et_mean:.2f} ± {report.et_std:.2f}"
        )
    result = EvaluationResult(report=report, records=records, scenario=env.scenario, mode=mode)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        row = {"scenario": env.scenario.name, **report.as_row(include_time=mode == AERIAL)}
        _write_csv(out / "metrics.csv", metrics_fieldnames(mode, ["scenario"]), [row], comment=STD_CONVENTION)
        export_trajectories(records, out, scenario=env.scenario, aerial=mode == AERIAL)
    return result


def evaluate_random_policy(spec: EnvSpec, scenario, episodes: int, seed: int = 0) -> EvaluationResult:
    """Uniform-random baseline on the same eval-env stream as evaluate()."""
    env = NavigationEnv(spec, resolve_scenario(scenario), rng=make_rng(seed, "eval-env"))
    action_rng = make_rng(seed, "eval-random")
    records = [run_episode(env, lambda obs: random_warmup_action(spec, action_rng), i) for i in range(episodes)]
    return EvaluationResult(MetricsReport.from_records(records), records, env.scenario, spec.mode)


# ======================================================================
# Sweep
# ======================================================================

@dataclass
class CellResult:
    eta: int
    seed: int
    train_report: MetricsReport
    eval_report: MetricsReport
    training_episodes: int
    actor_updates: int
    critic_updates: int

    @property
    def success_drop(self) -> float:
        return self.train_report.success_rate - self.eval_report.success_rate


@dataclass
class SweepReport:
    mode: str
    cells: List[SweepCell]
    rows: List[dict]
    per_seed_rows: List[dict]
    generalization_rows: List[dict]

    @property
    def failed_cells(self) -> List[SweepCell]:
        return [c for c in self.cells if c.status is not CellStatus.COMPLETED]

    def mean_drop(self, eta: int) -> float:
        drops = [c.result.success_drop for c in self.cells if c.eta == eta and c.status is CellStatus.COMPLETED]
        if not drops:
            raise ValueError(f"No completed cells for eta={eta}")
        return float(np.mean(drops))


def run_cell(template: ExperimentConfig, eta: int, seed: int, out_dir=None, verbose: bool = False) -> tuple:
    """
    Train one (eta, seed) cell and evaluate it on both scenarios.

    Returns:
        tuple: (CellResult, train-scenario EvaluationResult, eval-scenario EvaluationResult)
    """
    config = template.with_overrides(seed=seed, td3={"eta": eta}, out_dir=None)
    cell_dir = Path(out_dir) / f"eta{eta}_seed{seed}" if out_dir is not None else None
    training = train(config, out_dir=cell_dir, verbose=verbose)
    evals = {}
    for role in ("train", "eval"):
        evals[role] = evaluate(
            training.agent,
            config.scenario(role),
            episodes=config.eval_episodes,
            seed=seed,
            out_dir=cell_dir / f"eval_{role}" if cell_dir is not None else None,
            verbose=verbose,
        )
    result = CellResult(
        eta=eta,
        seed=seed,
        train_report=evals["train"].report,
        eval_report=evals["eval"].report,
        training_episodes=len(training.records),
        actor_updates=training.agent.actor_update_count,
        critic_updates=training.agent.critic_update_count,
    )
    return result, evals["train"], evals["eval"]


def sweep(template: ExperimentConfig, etas: Sequence[int] = (2, 4, 8), seeds: Sequence[int] = (0,),
          out_dir=None, workers: Optional[int] = None, verbose: bool = True) -> SweepReport:
    """
    Train and evaluate every (eta, seed) cell; aggregate per eta.

    Failed cells are recorded and skipped in the aggregate. Output files
    (when out_dir is given): metrics.csv (pooled over seeds, one row per eta and
    scenario), metrics_per_seed.csv, generalization.csv and failed_cells.csv
    when any cell did not complete.

    Raises:
        KeyboardInterrupt: after the outputs of the finished cells (and
            failed_cells.csv listing the stopped ones) are written
    """
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    if not etas:
        raise ConfigError("sweep needs at least one eta")
    workers = workers if workers is not None else template.workers
    include_time = template.mode == AERIAL
    pooled_records: Dict[tuple, List[EpisodeRecord]] = {}
    pool_lock = threading.Lock()

    def _run(cell: SweepCell) -> CellResult:
        result, train_eval, eval_eval = run_cell(template, cell.eta, cell.seed, out_dir=out_dir, verbose=False)
        with pool_lock:
            pooled_records[(cell.eta, cell.seed, "train")] = train_eval.records
            pooled_records[(cell.eta, cell.seed, "eval")] = eval_eval.records
        return result

    cells = [SweepCell(eta=int(e), seed=int(s)) for e in etas for s in seeds]
    interrupted = False
    try:
        run_cells(cells, _run, workers=workers, verbose=verbose)
    except KeyboardInterrupt:
        interrupted = True

    scenario_names = {"train": template.scenario("train").name, "eval": template.scenario("eval").name}
    rows, per_seed_rows, generalization_rows = [], [], []
    for eta in dict.fromkeys(int(e) for e in etas):
        done = [c for c in cells if c.eta == eta and c.status is CellStatus.COMPLETED]
        for cell in done:
            for role, report in (("train", cell.result.train_report), ("eval", cell.result.eval_report)):
                per_seed_rows.append({
                    "eta": eta, "seed": cell.seed, "scenario": scenario_names[role],
                    **report.as_row(include_time),
                })
        if not done:
            continue
        for role in ("train", "eval"):
            pooled = [r for c in done for r in pooled_records[(eta, c.seed, role)]]
            rows.append({
                "eta": eta, "scenario": scenario_names[role],
                **MetricsReport.from_records(pooled).as_row(include_time),
            })
        train_sr = float(np.mean([c.result.train_report.success_rate for c in done]))
        eval_sr = float(np.mean([c.result.eval_report.success_rate for c in done]))
        generalization_rows.append({
            "eta": eta,
            "seeds": len(done),
            "train_success_rate": train_sr,
            "eval_success_rate": eval_sr,
            "success_drop": float(np.mean([c.result.success_drop for c in done])),
        })

    failed = [c for c in cells if c.status is not CellStatus.COMPLETED]
    if verbose:
        for cell in failed:
            tqdm.write(f"⚠️ [L4] Cell {cell.cell_id} {cell.status.value}: {cell.error_message}")

    report = SweepReport(template.mode, cells, rows, per_seed_rows, generalization_rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "metrics.csv", metrics_fieldnames(template.mode, ["eta", "scenario"]), rows,
                   comment=STD_CONVENTION)
        _write_csv(out / "metrics_per_seed.csv", metrics_fieldnames(template.mode, ["eta", "seed", "scenario"]),
                   per_seed_rows, comment=STD_CONVENTION)
        _write_csv(out / "generalization.csv",
                   ["eta", "seeds", "train_success_rate", "eval_success_rate", "success_drop"],
                   generalization_rows)
        if failed:
            _write_csv(out / "failed_cells.csv", ["eta", "seed", "status", "error"],
                       [{"eta": c.eta, "seed": c.seed, "status": c.status.value, "error": c.error_message}
                        for c in failed])
        if verbose:
            tqdm.write(f"💾 [L4] Sweep outputs written to {out}")
    if interrupted:
        raise KeyboardInterrupt
    return report


def format_table(rows: List[dict]) -> str:
    """Plain-text rendering of metric rows for console summaries."""
    if not rows:
        return "(no rows)"
    columns = list(rows[0].keys())
    cells = [[f"{v:.2f}" if isinstance(v, float) else str(v) for v in (row[c] for c in columns)] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells)
    return "\n".join(lines)
