"""
Layer 3: Kinematic Navigation Environments

Desk-scale simulators for the two mapless-navigation tasks:

- Aerial: 20-beam 270° LIDAR, 26-dim observation, action
  (linear velocity, vertical velocity, delta yaw), 500-step limit
- Terrestrial: 10-beam 180° LIDAR, 14-dim observation, action
  (linear velocity, angular velocity), 250-step limit

Both use square arenas centered at the origin with circular obstacles
(infinite vertical cylinders for the aerial robot), analytic ray casting and a
binary reward: r_arrive on arrival, r_collide on collision or timeout, 0
otherwise.

Four scenarios are built in: a training and an evaluation arena per mode.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from layer0_nncore import ConfigError, ShapeError

AERIAL = "aerial"
TERRESTRIAL = "terrestrial"
MODES = (AERIAL, TERRESTRIAL)

SCENARIOS_DIR = Path(__file__).parent / "scenarios"

# Reset sampling
MAX_RESET_ATTEMPTS = 10_000
SPAWN_EXTRA_CLEARANCE = 0.2  # meters beyond c_o

_NO_HIT = np.inf


class EnvError(RuntimeError):
    """Raised when the environment is driven outside its episode contract."""


class Outcome(Enum):
    RUNNING = "running"
    ARRIVE = "arrive"
    COLLIDE = "collide"
    TIMEOUT = "timeout"


def wrap_angle(angle):
    """Wrap radians into (-pi, pi]."""
    return math.pi - np.mod(math.pi - angle, 2.0 * math.pi)


# ======================================================================
# Geometry
# ======================================================================

@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class Scenario:
    """Square arena [-h, h]^2 with circular obstacles."""
    name: str
    arena_half_extent: float
    obstacles: Tuple[Circle, ...] = ()

    def __post_init__(self):
        h = self.arena_half_extent
        if not h > 0:
            raise ConfigError(f"Scenario '{self.name}': arena_half_extent must be positive, got {h}")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for c in self.obstacles:
            if not c.radius > 0:
                raise ConfigError(f"Scenario '{self.name}': obstacle radius must be positive, got {c.radius}")
            if abs(c.x) + c.radius >= h or abs(c.y) + c.radius >= h:
                raise ConfigError(f"Scenario '{self.name}': obstacle {c} is not strictly inside the arena")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "arena_half_extent": self.arena_half_extent,
            "obstacles": [[c.x, c.y, c.radius] for c in self.obstacles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        unknown = set(data) - {"name", "arena_half_extent", "obstacles"}
        if unknown:
            raise ConfigError(f"Unknown scenario keys: {sorted(unknown)}")
        try:
            obstacles = tuple(Circle(float(x), float(y), float(r)) for x, y, r in data.get("obstacles", []))
            return cls(str(data["name"]), float(data["arena_half_extent"]), obstacles)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed scenario definition: {e}")

    def clearance(self, x: float, y: float) -> float:
        """Distance from (x, y) to the nearest wall or obstacle surface."""
        h = self.arena_half_extent
        d = min(h - abs(x), h - abs(y))
        for c in self.obstacles:
            d = min(d, math.hypot(x - c.x, y - c.y) - c.radius)
        return d


def raycast(pose: Sequence[float], scenario: Scenario, beam_angles, max_range: float) -> np.ndarray:
    """
    Analytic range per beam against arena walls and obstacle circles.

    Args:
        pose: (x, y, yaw); beam angles are relative to yaw
        scenario: arena geometry
        beam_angles: array of beam offsets in radians
        max_range: sensor cap in meters

    Returns:
        np.ndarray: distance to the first hit per beam, capped at max_range.
                    A pose inside an obstacle reads 0 on every beam.
    """
    x, y, yaw = float(pose[0]), float(pose[1]), float(pose[2])
    angles = yaw + np.asarray(beam_angles, dtype=np.float64)
    dx = np.cos(angles)
    dy = np.sin(angles)
    h = scenario.arena_half_extent

    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (h - x) / dx, np.where(dx < 0, (-h - x) / dx, _NO_HIT))
        ty = np.where(dy > 0, (h - y) / dy, np.where(dy < 0, (-h - y) / dy, _NO_HIT))
    ranges = np.maximum(np.minimum(tx, ty), 0.0)

    if scenario.obstacles:
        cx = np.array([c.x for c in scenario.obstacles])
        cy = np.array([c.y for c in scenario.obstacles])
        r = np.array([c.radius for c in scenario.obstacles])
        fx = x - cx
        fy = y - cy
        # |f + t d|^2 = r^2 with |d| = 1  ->  t^2 + 2 b t + c = 0
        b = dx[:, None] * fx[None, :] + dy[:, None] * fy[None, :]
        c = fx * fx + fy * fy - r * r
        disc = b * b - c[None, :]
        t_near = -b - np.sqrt(np.maximum(disc, 0.0))
        hit = (disc >= 0.0) & (t_near >= 0.0)
        t = np.where(hit, t_near, _NO_HIT)
        t = np.where(c[None, :] <= 0.0, 0.0, t)
        ranges = np.minimum(ranges, t.min(axis=1))

    return np.minimum(ranges, max_range)


# ======================================================================
# Specs
# ======================================================================

@dataclass
class EnvSpec:
    """Sensor layout, action box, reward constants and episode limits."""
    mode: str
    beam_count: int
    fov_degrees: float
    lidar_max_range: float
    action_low: Tuple[float, ...]
    action_high: Tuple[float, ...]
    r_arrive: float
    r_collide: float
    c_d: float
    c_o: float
    max_episode_steps: int
    dt: float = 0.1
    z_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        self.action_low = tuple(float(v) for v in self.action_low)
        self.action_high = tuple(float(v) for v in self.action_high)
        if self.z_bounds is not None:
            self.z_bounds = tuple(float(v) for v in self.z_bounds)
        expected_dim = 3 if self.mode == AERIAL else 2
        if len(self.action_low) != expected_dim or len(self.action_high) != expected_dim:
            raise ConfigError(f"{self.mode} action box must have {expected_dim} components")
        if any(lo > hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ConfigError(f"action_low {self.action_low} exceeds action_high {self.action_high}")
        if int(self.beam_count) < 1:
            raise ConfigError(f"beam_count must be >= 1, got {self.beam_count}")
        self.beam_count = int(self.beam_count)
        if not 0 < self.fov_degrees <= 360:
            raise ConfigError(f"fov_degrees must lie in (0, 360], got {self.fov_degrees}")
        if not self.lidar_max_range > 0:
            raise ConfigError(f"lidar_max_range must be positive, got {self.lidar_max_range}")
        if not 0 < self.c_o <= self.c_d:
            raise ConfigError(f"need 0 < c_o <= c_d, got c_o={self.c_o}, c_d={self.c_d}")
        if int(self.max_episode_steps) < 1:
            raise ConfigError(f"max_episode_steps must be >= 1, got {self.max_episode_steps}")
        self.max_episode_steps = int(self.max_episode_steps)
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.mode == AERIAL:
            if self.z_bounds is None or len(self.z_bounds) != 2 or not self.z_bounds[0] < self.z_bounds[1]:
                raise ConfigError(f"aerial spec needs z_bounds (lo < hi), got {self.z_bounds}")

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def state_dim(self) -> int:
        # ranges + (prev action, planar dist, heading, dz) or (dist, heading, v, w)
        return self.beam_count + (6 if self.mode == AERIAL else 4)

    @property
    def beam_angles(self) -> np.ndarray:
        """Bin-center beam offsets tiling the field of view, radians."""
        fov = math.radians(self.fov_degrees)
        k = np.arange(self.beam_count)
        return -fov / 2.0 + (k + 0.5) * fov / self.beam_count

    def with_overrides(self, **overrides) -> "EnvSpec":
        unknown = set(overrides) - set(self.__dataclass_fields__) - {"mode"}
        if unknown:
            raise ConfigError(f"Unknown env keys: {sorted(unknown)}")
        if overrides.get("mode", self.mode) != self.mode:
            raise ConfigError("mode cannot be changed through env overrides")
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("action_low", "action_high", "z_bounds"):
            if data[key] is not None:
                data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "EnvSpec":
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Invalid env spec: {e}")


def aerial_spec(**overrides) -> EnvSpec:
    spec = EnvSpec(
        mode=AERIAL,
        beam_count=20,
        fov_degrees=270.0,
        lidar_max_range=5.0,
        action_low=(0.0, -0.25, -0.25),
        action_high=(0.25, 0.25, 0.25),
        r_arrive=200.0,
        r_collide=-20.0,
        c_d=0.5,
        c_o=0.5,
        max_episode_steps=500,
        dt=0.1,
        z_bounds=(0.5, 2.5),
    )
    return spec.with_overrides(**overrides) if overrides else spec


def terrestrial_spec(**overrides) -> EnvSpec:
    spec = EnvSpec(
        mode=TERRESTRIAL,
        beam_count=10,
        fov_degrees=180.0,
        lidar_max_range=3.5,
        action_low=(0.0, -0.25),
        action_high=(0.25, 0.25),
        r_arrive=100.0,
        r_collide=-10.0,
        c_d=0.3,
        c_o=0.19,
        max_episode_steps=250,
        dt=0.1,
    )
    return spec.with_overrides(**overrides) if overrides else spec


def make_spec(mode: str, **overrides) -> EnvSpec:
    if mode == AERIAL:
        return aerial_spec(**overrides)
    if mode == TERRESTRIAL:
        return terrestrial_spec(**overrides)
    raise ConfigError(f"mode must be one of {MODES}, got '{mode}'")


# ======================================================================
# Reward
# ======================================================================

def reward_fn(d_t: float, min_x: float, ep: int, spec: EnvSpec) -> Tuple[float, bool, Outcome]:
    """
    Binary reward.

    Arrival (d_t < c_d) wins over collision (min_x < c_o) and timeout
    (ep >= max_episode_steps); collision is reported before timeout.

    Returns:
        tuple: (reward, done, outcome)
    """
    if d_t < spec.c_d:
        return spec.r_arrive, True, Outcome.ARRIVE
    if min_x < spec.c_o:
        return spec.r_collide, True, Outcome.COLLIDE
    if ep >= spec.max_episode_steps:
        return spec.r_collide, True, Outcome.TIMEOUT
    return 0.0, False, Outcome.RUNNING


# ======================================================================
# Scenarios
# ======================================================================

_OBSTACLE_RADIUS = 0.5


def builtin_scenarios() -> Dict[str, Scenario]:
    """The four named arenas: a train and an eval scenario per mode."""
    r = _OBSTACLE_RADIUS
    return {
        "aerial-train": Scenario(
            "aerial-train", 5.0,
            tuple(Circle(sx * 2.0, sy * 2.0, r) for sx in (1, -1) for sy in (1, -1)),
        ),
        "aerial-eval": Scenario("aerial-eval", 5.0, (Circle(0.0, 0.0, r),)),
        "terrestrial-train": Scenario(
            "terrestrial-train", 2.5,
            (Circle(0.0, 1.1, r), Circle(-1.1, -0.8, r), Circle(1.1, -0.8, r)),
        ),
        "terrestrial-eval": Scenario(
            "terrestrial-eval", 2.5,
            tuple(Circle(sx * 1.25, sy * 1.25, r) for sx in (1, -1) for sy in (1, -1)),
        ),
    }


def load_scenario(path) -> Scenario:
    """Read a scenario JSON file ({"name", "arena_half_extent", "obstacles": [[x, y, r], ...]})."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Scenario file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Scenario file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Scenario file {path} must hold a JSON object")
    return Scenario.from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario.to_dict(), f, indent=2)
        f.write("\n")


def resolve_scenario(name_or_path) -> Scenario:
    """Builtin scenario by name, otherwise a scenario file path."""
    if isinstance(name_or_path, Scenario):
        return name_or_path
    builtins = builtin_scenarios()
    if name_or_path in builtins:
        return builtins[name_or_path]
    path = Path(name_or_path)
    if path.suffix == "":
        candidate = SCENARIOS_DIR / f"{name_or_path}.json"
        if candidate.exists():
            return load_scenario(candidate)
        raise ConfigError(f"Unknown scenario '{name_or_path}' (builtins: {sorted(builtins)})")
    return load_scenario(path)


# ======================================================================
# Environment
# ======================================================================

@dataclass
class EnvState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    z: float = 0.0
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0
    prev_action: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ep: int = 0
    done: bool = False
    outcome: Outcome = Outcome.RUNNING
    scan: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def pose(self, aerial: bool) -> Tuple[float, ...]:
        """(x, y, z, yaw) for aerial, (x, y, yaw) for terrestrial."""
        if aerial:
            return (self.x, self.y, self.z, self.yaw)
        return (self.x, self.y, self.yaw)


class NavigationEnv:
    """
    Goal-reaching environment with reset()/step() semantics.

    The env owns its rng stream; exploration noise and learning never draw
    from it.
    """

    def __init__(self, spec: EnvSpec, scenario: Scenario, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.scenario = scenario
        self.rng = rng if rng is not None else np.random.default_rng()
        self.aerial = spec.mode == AERIAL
        self.beam_angles = spec.beam_angles
        self.action_low = np.array(spec.action_low)
        self.action_high = np.array(spec.action_high)
        h = scenario.arena_half_extent
        self.goal_scale = 2.0 * math.sqrt(2.0) * h  # arena diagonal
        self.state = EnvState()
        self.state.done = True  # must reset before stepping

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    # ------------------------------------------------------------------

    def _sample_free_point(self, rng: np.random.Generator, margin: float) -> Tuple[float, float]:
        h = self.scenario.arena_half_extent - margin
        if h <= 0:
            raise ConfigError(f"Scenario '{self.scenario.name}' is too small for clearance {margin:.2f} m")
        x, y = rng.uniform(-h, h, size=2)
        return float(x), float(y)

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Sample a start pose and goal in free space and return the first observation.

        Start and goal keep c_o + 0.2 m from every wall and obstacle and are at
        least half the arena half-extent apart.

        Raises:
            ConfigError: no valid start/goal pair found in MAX_RESET_ATTEMPTS draws
        """
        rng = rng if rng is not None else self.rng
        margin = self.spec.c_o + SPAWN_EXTRA_CLEARANCE
        min_separation = 0.5 * self.scenario.arena_half_extent

        for _ in range(MAX_RESET_ATTEMPTS):
            sx, sy = self._sample_free_point(rng, margin)
            gx, gy = self._sample_free_point(rng, margin)
            if self.scenario.clearance(sx, sy) < margin or self.scenario.clearance(gx, gy) < margin:
                continue
            if math.hypot(gx - sx, gy - sy) < min_separation:
                continue
            break
        else:
            raise ConfigError(
                f"Scenario '{self.scenario.name}' left no free start/goal pair after {MAX_RESET_ATTEMPTS} draws"
            )

        yaw = float(rng.uniform(-math.pi, math.pi))
        state = EnvState(x=sx, y=sy, yaw=yaw)
        if self.aerial:
            z_lo, z_hi = self.spec.z_bounds
            state.z = float(rng.uniform(z_lo, z_hi))
            state.goal = np.array([gx, gy, float(rng.uniform(z_lo, z_hi))])
            state.prev_action = np.zeros(self.action_dim)
        else:
            state.goal = np.array([gx, gy])
        state.scan = self._scan(state)
        self.state = state
        return self._observe()

    # ------------------------------------------------------------------

    def _scan(self, state: EnvState) -> np.ndarray:
        return raycast((state.x, state.y, state.yaw), self.scenario, self.beam_angles, self.spec.lidar_max_range)

    def goal_distance(self) -> float:
        s = self.state
        planar = math.hypot(s.goal[0] - s.x, s.goal[1] - s.y)
        if self.aerial:
            return math.hypot(planar, s.goal[2] - s.z)
        return planar

    def goal_heading(self) -> float:
        s = self.state
        return float(wrap_angle(math.atan2(s.goal[1] - s.y, s.goal[0] - s.x) - s.yaw))

    def _observe(self) -> np.ndarray:
        s = self.state
        ranges = np.clip(s.scan / self.spec.lidar_max_range, 0.0, 1.0)
        planar = math.hypot(s.goal[0] - s.x, s.goal[1] - s.y) / self.goal_scale
        if self.aerial:
            extra = [*s.prev_action, planar, self.goal_heading(), s.goal[2] - s.z]
        else:
            extra = [planar, self.goal_heading(), s.linear_velocity, s.angular_velocity]
        return np.concatenate([ranges, np.asarray(extra, dtype=np.float64)])

    def step(self, action):
        """
        Advance one control period.

        Args:
            action: vector in the action box (clamped if outside)

        Returns:
            tuple: (observation, reward, done, info) where info carries
                   outcome, distance, min_range, ep and episode_time

        Raises:
            EnvError: the episode is already finished
            ShapeError: action width mismatch
        """
        s = self.state
        if s.done:
            raise EnvError("step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.action_dim,):
            raise ShapeError(f"action must have width {self.action_dim}, got {np.shape(action)}")
        a = np.clip(a, self.action_low, self.action_high)
        dt = self.spec.dt

        if self.aerial:
            v, vz, dyaw = a
            s.yaw = float(wrap_angle(s.yaw + dyaw))
            s.z = float(np.clip(s.z + vz * dt, *self.spec.z_bounds))
            s.prev_action = a.copy()
        else:
            v, w = a
            s.yaw = float(wrap_angle(s.yaw + w * dt))
            s.linear_velocity = float(v)
            s.angular_velocity = float(w)
        h = self.scenario.arena_half_extent
        s.x = float(np.clip(s.x + v * math.cos(s.yaw) * dt, -h, h))
        s.y = float(np.clip(s.y + v * math.sin(s.yaw) * dt, -h, h))

        s.scan = self._scan(s)
        min_x = float(s.scan.min())
        d_t = self.goal_distance()
        s.ep += 1
        reward, done, outcome = reward_fn(d_t, min_x, s.ep, self.spec)
        s.done = done
        s.outcome = outcome

        info = {
            "outcome": outcome.value,
            "distance": d_t,
            "min_range": min_x,
            "ep": s.ep,
            "episode_time": s.ep * dt,
        }
        return self._observe(), float(reward), done, info

    def pose(self) -> Tuple[float, ...]:
        return self.state.pose(self.aerial)


def make_env(mode: str, scenario, rng: Optional[np.random.Generator] = None, **overrides) -> NavigationEnv:
    """Build an env from a mode, a scenario (name, path or Scenario) and spec overrides."""
    return NavigationEnv(make_spec(mode, **overrides), resolve_scenario(scenario), rng=rng)
