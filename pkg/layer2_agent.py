"""
Layer 2: TD3 Agent with Delayed Policy Updates

Actor, twin critics, three target networks and the update schedule:

- Critics are regressed every train_step onto the clipped double-Q target
  r + gamma * (1 - done) * min(Q1'(s', a'), Q2'(s', a')) with
  a' = clamp(pi'(s') + clip(N(0, sigma~), -c, c)).
- Every eta-th critic update (DPU interval) the actor takes one
  deterministic policy gradient step through Q1 and all three targets are
  Polyak-blended toward their sources.
- Exploration adds Ornstein-Uhlenbeck noise to the actor output.

Noise and critic inputs live in the unit action box: an action a maps to
(a - center) / half_range, so exploration and smoothing noise scale with
each component's range instead of being absolute.

Checkpoints ("td3-v1") extend the layer-0 network container with the agent
header: config, counters, action box, OU state and the training env spec.
"""

import json
import zipfile
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence, Tuple

import numpy as np

from layer0_nncore import (
    CheckpointError,
    ConfigError,
    DenseNet,
    NonFiniteError,
    ShapeError,
    write_archive,
)
from layer1_replay import ReplayBuffer, TransitionBatch

AGENT_CHECKPOINT_VERSION = "td3-v1"
NETWORK_NAMES = ("actor", "actor_target", "critic1", "critic2", "critic1_target", "critic2_target")


@dataclass
class Td3Config:
    """
    Learning hyperparameters. Noise magnitudes (policy_noise_std, noise_clip,
    ou_sigma, ou_mu) are in unit-box coordinates, where 1.0 is half the width
    of each action component.
    """
    gamma: float = 0.99
    tau: float = 0.005
    eta: int = 2
    policy_noise_std: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 100
    start_steps: int = 1000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_mu: float = 0.0
    ou_dt: float = 1.0
    actor_hidden: Tuple[int, ...] = (256, 256)
    critic_hidden: Tuple[int, ...] = (256, 256)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.actor_hidden = tuple(int(w) for w in self.actor_hidden)
        self.critic_hidden = tuple(int(w) for w in self.critic_hidden)
        self.eta = int(self.eta)
        self.batch_size = int(self.batch_size)
        self.start_steps = int(self.start_steps)
        checks = [
            (0.0 < self.gamma <= 1.0, f"gamma must lie in (0, 1], got {self.gamma}"),
            (0.0 < self.tau <= 1.0, f"tau must lie in (0, 1], got {self.tau}"),
            (self.eta >= 1, f"eta must be >= 1, got {self.eta}"),
            (self.policy_noise_std >= 0.0, f"policy_noise_std must be >= 0, got {self.policy_noise_std}"),
            (self.noise_clip > 0.0, f"noise_clip must be > 0, got {self.noise_clip}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.start_steps >= 0, f"start_steps must be >= 0, got {self.start_steps}"),
            (self.actor_lr > 0.0 and self.critic_lr > 0.0, "learning rates must be positive"),
            (self.ou_theta >= 0.0 and self.ou_sigma >= 0.0, "ou_theta and ou_sigma must be >= 0"),
            (self.ou_dt > 0.0, f"ou_dt must be positive, got {self.ou_dt}"),
            (all(w >= 1 for w in self.actor_hidden + self.critic_hidden), "hidden widths must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["actor_hidden"] = list(self.actor_hidden)
        data["critic_hidden"] = list(self.critic_hidden)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Td3Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown td3 keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Invalid td3 section: {e}")


@dataclass
class OuNoise:
    """Ornstein-Uhlenbeck process: dx = theta (mu - x) dt + sigma sqrt(dt) N(0, 1)."""
    size: int
    theta: float = 0.15
    sigma: float = 0.2
    mu: float = 0.0
    dt: float = 1.0
    state: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.reset()
        else:
            self.state = np.asarray(self.state, dtype=np.float64).copy()
            if self.state.shape != (self.size,):
                raise ShapeError(f"OU state must have width {self.size}, got {self.state.shape}")

    def reset(self):
        self.state = np.full(self.size, self.mu, dtype=np.float64)

    def step(self, rng: np.random.Generator) -> np.ndarray:
        """Advance the process once and return (a copy of) the new state."""
        drift = self.theta * (self.mu - self.state) * self.dt
        diffusion = self.sigma * np.sqrt(self.dt) * rng.standard_normal(self.size)
        self.state = self.state + drift + diffusion
        return self.state.copy()


def ou_step(noise: OuNoise, rng: np.random.Generator) -> np.ndarray:
    return noise.step(rng)


@dataclass
class LossReport:
    critic1_loss: float
    critic2_loss: float
    actor_loss: Optional[float] = None

    @property
    def actor_updated(self) -> bool:
        return self.actor_loss is not None


class Td3Agent:
    """TD3 learner whose actor and targets update once every `eta` critic updates."""

    def __init__(
        self,
        state_dim: int,
        action_low: Sequence[float],
        action_high: Sequence[float],
        config: Optional[Td3Config] = None,
        rng: Optional[np.random.Generator] = None,
        env_spec: Optional[dict] = None,
    ):
        """
        Args:
            state_dim: observation width
            action_low, action_high: action box (actor output range and clamp)
            config: hyperparameters (defaults if None)
            rng: initialization stream for the six networks
            env_spec: plain-dict environment spec the agent is trained on,
                stored in checkpoints so evaluation can rebuild the same dynamics
        """
        self.config = config if config is not None else Td3Config()
        self.state_dim = int(state_dim)
        self.action_low = np.asarray(action_low, dtype=np.float64).reshape(-1)
        self.action_high = np.asarray(action_high, dtype=np.float64).reshape(-1)
        if self.action_low.shape != self.action_high.shape:
            raise ShapeError("action_low and action_high must have the same width")
        self.action_dim = self.action_low.shape[0]
        self.env_spec = dict(env_spec) if env_spec is not None else None
        self._set_action_scale()
        rng = rng if rng is not None else np.random.default_rng()

        cfg = self.config
        adam = dict(adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps)
        self.actor = DenseNet(
            [self.state_dim, *cfg.actor_hidden, self.action_dim],
            output_activation="scaled_tanh",
            output_low=self.action_low,
            output_high=self.action_high,
            rng=rng,
            **adam,
        )
        critic_sizes = [self.state_dim + self.action_dim, *cfg.critic_hidden, 1]
        self.critic1 = DenseNet(critic_sizes, rng=rng, **adam)
        self.critic2 = DenseNet(critic_sizes, rng=rng, **adam)
        self.actor_target = self.actor.clone()
        self.critic1_target = self.critic1.clone()
        self.critic2_target = self.critic2.clone()

        self.ou = OuNoise(self.action_dim, theta=cfg.ou_theta, sigma=cfg.ou_sigma, mu=cfg.ou_mu, dt=cfg.ou_dt)
        self.critic_update_count = 0
        self.actor_update_count = 0

    @classmethod
    def for_env(cls, env_spec, config: Optional[Td3Config] = None, rng=None) -> "Td3Agent":
        return cls(
            env_spec.state_dim, env_spec.action_low, env_spec.action_high,
            config=config, rng=rng, env_spec=env_spec.to_dict(),
        )

    def _set_action_scale(self):
        self.action_center = (self.action_low + self.action_high) * 0.5
        self.action_half = (self.action_high - self.action_low) * 0.5
        # degenerate components map to 0 in the unit box
        self._half_safe = np.where(self.action_half > 0.0, self.action_half, 1.0)

    def to_unit(self, actions) -> np.ndarray:
        """Map env-space actions into [-1, 1] per component."""
        return (np.asarray(actions, dtype=np.float64) - self.action_center) / self._half_safe

    def from_unit(self, units) -> np.ndarray:
        """Map unit-box actions back into the env box (clamped)."""
        return np.clip(self.action_center + self.action_half * np.asarray(units, dtype=np.float64),
                       self.action_low, self.action_high)

    def networks(self) -> dict:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def _check_state(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=np.float64)
        if s.shape[-1:] != (self.state_dim,):
            raise ShapeError(f"state must have width {self.state_dim}, got shape {s.shape}")
        return s

    # ------------------------------------------------------------------
    # Acting
    # ------------------------------------------------------------------

    def select_action(self, state, explore: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Actor output, optionally perturbed by one OU step (scaled to each
        component's half-range) and clamped to the box.

        Args:
            state: observation vector
            explore: add OU noise
            rng: noise stream (required when explore is True)
        """
        action = self.actor.forward(self._check_state(state))
        if not explore:
            return action
        if rng is None:
            raise ValueError("explore=True needs an rng for the OU noise")
        return np.clip(action + self.action_half * self.ou.step(rng), self.action_low, self.action_high)

    def reset_noise(self):
        self.ou.reset()

    # ------------------------------------------------------------------
    # Learning
    # ------------------------------------------------------------------

    def sample_target_noise(self, shape, rng: np.random.Generator) -> np.ndarray:
        """Target policy smoothing noise in unit-box coordinates: clip(N(0, sigma~), -c, c)."""
        c = self.config.noise_clip
        return np.clip(rng.normal(0.0, self.config.policy_noise_std, size=shape), -c, c)

    def compute_targets(self, batch: TransitionBatch, rng: np.random.Generator) -> np.ndarray:
        """
        Clipped double-Q bootstrap targets.

        Returns:
            np.ndarray: (N,) targets r + gamma * (1 - done) * min(Q1', Q2')
        """
        next_units = self.to_unit(self.actor_target.forward(batch.next_states))
        noise = self.sample_target_noise(next_units.shape, rng)
        next_units = self.to_unit(self.from_unit(next_units + noise))
        x = np.concatenate([batch.next_states, next_units], axis=1)
        q1 = self.critic1_target.forward(x)[:, 0]
        q2 = self.critic2_target.forward(x)[:, 0]
        not_done = 1.0 - batch.dones.astype(np.float64)
        return batch.rewards + self.config.gamma * not_done * np.minimum(q1, q2)

    def _critic_update(self, critic: DenseNet, x: np.ndarray, targets: np.ndarray) -> float:
        q = critic.forward(x)[:, 0]
        td = q - targets
        loss = float(np.mean(td * td))
        if not np.isfinite(loss):
            raise NonFiniteError(f"Non-finite critic loss at critic update {self.critic_update_count + 1}")
        grad_out = (2.0 / len(targets)) * td[:, None]
        critic.adam_step(critic.backward(x, grad_out), self.config.critic_lr)
        return loss

    def _actor_update(self, states: np.ndarray) -> float:
        n = states.shape[0]
        actions = self.actor.forward(states)
        x = np.concatenate([states, self.to_unit(actions)], axis=1)
        q = self.critic1.forward(x)[:, 0]
        loss = float(-np.mean(q))
        if not np.isfinite(loss):
            raise NonFiniteError(f"Non-finite actor loss at actor update {self.actor_update_count + 1}")
        # dL/da via the critic's input gradient; critic parameters are not stepped
        critic_grads = self.critic1.backward(x, np.full((n, 1), -1.0 / n))
        d_actions = critic_grads.input[:, self.state_dim:] / self._half_safe
        self.actor.adam_step(self.actor.backward(states, d_actions), self.config.actor_lr)
        return loss

    def soft_update_targets(self):
        tau = self.config.tau
        self.actor_target.soft_update_from(self.actor, tau)
        self.critic1_target.soft_update_from(self.critic1, tau)
        self.critic2_target.soft_update_from(self.critic2, tau)

    def train_step(
        self,
        buffer: ReplayBuffer,
        rng: np.random.Generator,
        noise_rng: Optional[np.random.Generator] = None,
    ) -> LossReport:
        """
        One critic update, plus an actor update and target blend every eta-th call.

        Args:
            buffer: replay buffer to sample from (must be non-empty)
            rng: mini-batch sampling stream
            noise_rng: target smoothing stream (defaults to rng)

        Returns:
            LossReport: critic losses and the actor loss when the actor moved
        """
        if len(buffer) == 0:
            raise ValueError("train_step needs a non-empty replay buffer")
        noise_rng = noise_rng if noise_rng is not None else rng
        batch = buffer.sample(self.config.batch_size, rng)
        targets = self.compute_targets(batch, noise_rng)
        x = np.concatenate([batch.states, self.to_unit(batch.actions)], axis=1)

        report = LossReport(
            critic1_loss=self._critic_update(self.critic1, x, targets),
            critic2_loss=self._critic_update(self.critic2, x, targets),
        )
        self.critic_update_count += 1

        if self.critic_update_count % self.config.eta == 0:
            report.actor_loss = self._actor_update(batch.states)
            self.soft_update_targets()
            self.actor_update_count += 1
        return report

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------

    def header(self) -> dict:
        return {
            "version": AGENT_CHECKPOINT_VERSION,
            "state_dim": self.state_dim,
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "config": self.config.to_dict(),
            "critic_update_count": self.critic_update_count,
            "actor_update_count": self.actor_update_count,
            "env_spec": self.env_spec,
        }

    def save(self, path) -> None:
        arrays = {
            "agent_header": np.array(json.dumps(self.header())),
            "ou_state": self.ou.state,
        }
        for name, net in self.networks().items():
            arrays.update(net.to_arrays(prefix=f"{name}."))
        write_archive(path, arrays)

    @classmethod
    def load(cls, path) -> "Td3Agent":
        """
        Restore an agent written by save().

        Raises:
            CheckpointError: missing/truncated file, wrong version tag or bad arrays
        """
        try:
            with np.load(path, allow_pickle=False) as data:
                arrays = {key: data[key] for key in data.files}
        except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
            raise CheckpointError(f"Cannot read agent checkpoint {path}: {e}")

        try:
            header = json.loads(str(arrays["agent_header"][()]))
        except (KeyError, ValueError, TypeError) as e:
            raise CheckpointError(f"Agent checkpoint {path} has no readable header: {e}")
        version = header.get("version")
        if version != AGENT_CHECKPOINT_VERSION:
            raise CheckpointError(f"Unsupported agent checkpoint version {version!r}, expected {AGENT_CHECKPOINT_VERSION!r}")

        try:
            config = Td3Config.from_dict(header["config"])
            agent = cls.__new__(cls)
            agent.config = config
            agent.state_dim = int(header["state_dim"])
            agent.action_low = np.asarray(header["action_low"], dtype=np.float64)
            agent.action_high = np.asarray(header["action_high"], dtype=np.float64)
            agent.action_dim = agent.action_low.shape[0]
            if agent.action_high.shape != agent.action_low.shape:
                raise ShapeError("action_low and action_high must have the same width")
            agent._set_action_scale()
            env_spec = header.get("env_spec")
            agent.env_spec = dict(env_spec) if env_spec is not None else None
            agent.critic_update_count = int(header["critic_update_count"])
            agent.actor_update_count = int(header["actor_update_count"])
            agent.ou = OuNoise(
                agent.action_dim, theta=config.ou_theta, sigma=config.ou_sigma,
                mu=config.ou_mu, dt=config.ou_dt, state=arrays["ou_state"],
            )
        except (KeyError, ValueError, TypeError, ConfigError, ShapeError) as e:
            raise CheckpointError(f"Agent checkpoint {path} header is inconsistent: {e}")

        for name in NETWORK_NAMES:
            setattr(agent, name, DenseNet.from_arrays(arrays, prefix=f"{name}."))
        if agent.actor.layer_sizes[0] != agent.state_dim or agent.actor.layer_sizes[-1] != agent.action_dim:
            raise CheckpointError(f"Actor shape {agent.actor.layer_sizes} disagrees with header widths")
        return agent


# ======================================================================
# Functional API
# ======================================================================

def select_action(agent: Td3Agent, state, explore: bool, rng=None) -> np.ndarray:
    return agent.select_action(state, explore=explore, rng=rng)


def random_warmup_action(env_spec, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the env's action box."""
    return rng.uniform(np.asarray(env_spec.action_low, dtype=np.float64), np.asarray(env_spec.action_high, dtype=np.float64))


def compute_targets(agent: Td3Agent, batch: TransitionBatch, rng) -> np.ndarray:
    return agent.compute_targets(batch, rng)


def train_step(agent: Td3Agent, buffer: ReplayBuffer, rng, noise_rng=None) -> LossReport:
    return agent.train_step(buffer, rng, noise_rng=noise_rng)


def save_checkpoint(agent: Td3Agent, path) -> None:
    agent.save(path)


def load_checkpoint(path) -> Td3Agent:
    return Td3Agent.load(path)
