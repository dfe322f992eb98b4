"""Desk-scale plants: cart-pole swing-up, planar 2-link reacher, point mass
among circular obstacles.

Every spec is a frozen dataclass. Dynamics and costs are vectorised over any
leading batch dimensions, so the same code evaluates one state or a whole
batch of sampled rollouts. Angles are never wrapped inside the dynamics.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


class InvalidStateError(ValueError):
    """Raised when a state or control fed to the dynamics is not finite."""


def wrap_angle(theta):
    """Map angles onto ``[-pi, pi)``."""
    return np.mod(np.asarray(theta) + math.pi, 2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class EnvSpec:
    """Fields shared by all plants. Subclasses add physics, costs and goals."""

    name: ClassVar[str] = "base"
    state_dim: ClassVar[int] = 0
    control_dim: ClassVar[int] = 0

    dt: float = 0.02
    episode_length: int = 200
    control_bound: float = 1.0
    control_weight: float = 0.0
    terminal_weight: float = 10.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if not self.control_bound > 0:
            raise ValueError("control_bound must be positive")

    @property
    def u_min(self) -> Array:
        return np.full(self.control_dim, -self.control_bound)

    @property
    def u_max(self) -> Array:
        return np.full(self.control_dim, self.control_bound)

    def clamp(self, control):
        return np.clip(control, -self.control_bound, self.control_bound)

    # subclass hooks -----------------------------------------------------
    def dynamics(self, state: Array, control: Array) -> Array:
        raise NotImplementedError

    def state_cost(self, state: Array) -> Array:
        raise NotImplementedError

    def initial(self, rng: np.random.Generator) -> tuple[Array, EnvSpec]:
        raise NotImplementedError

    def success(self, states: Array) -> bool:
        raise NotImplementedError

    def task_position(self, states: Array) -> Array:
        raise NotImplementedError

    def scenario(self) -> dict:
        """Per-episode scenario descriptor (goal, obstacles); JSON-able."""
        return {}

    # derived ------------------------------------------------------------
    def running_cost(self, state: Array, control: Array) -> Array:
        control = np.asarray(control, dtype=float)
        return self.state_cost(state) + self.control_weight * np.sum(control**2, axis=-1)

    def terminal_cost(self, state: Array) -> Array:
        return self.terminal_weight * self.state_cost(state)


# ---------------------------------------------------------------------------
# cart-pole


@dataclass(frozen=True)
class CartpoleSpec(EnvSpec):
    """Frictionless cart-pole; ``theta = 0`` is upright, ``pi`` is hanging.

    State is ``[x, x_dot, theta, theta_dot]``; control is the cart force in N.
    """

    name: ClassVar[str] = "cartpole"
    state_dim: ClassVar[int] = 4
    control_dim: ClassVar[int] = 1

    dt: float = 0.02
    episode_length: int = 200
    control_bound: float = 10.0
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.81
    # cost weights
    angle_weight: float = 1.0
    position_weight: float = 0.2
    velocity_weight: float = 0.5
    angular_velocity_weight: float = 0.05
    control_weight: float = 1e-3
    terminal_weight: float = 10.0
    # initial-state ranges (half widths)
    init_position_range: float = 0.5
    init_angle_range: float = 0.3
    # success thresholds
    success_angle: float = 0.1
    success_velocity: float = 0.5
    success_angular_velocity: float = 0.5

    def __post_init__(self) -> None:
        super().__post_init__()
        if min(self.cart_mass, self.pole_mass, self.pole_half_length, self.gravity) <= 0:
            raise ValueError("cart-pole physical parameters must be positive")

    def _deriv(self, s: Array, force: Array) -> Array:
        x_dot, theta, omega = s[..., 1], s[..., 2], s[..., 3]
        total = self.cart_mass + self.pole_mass
        ml = self.pole_mass * self.pole_half_length
        sin, cos = np.sin(theta), np.cos(theta)
        tmp = (force + ml * omega * omega * sin) / total
        alpha = (self.gravity * sin - cos * tmp) / (
            self.pole_half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total)
        )
        acc = tmp - ml * alpha * cos / total
        return np.stack([x_dot, acc, omega, alpha], axis=-1)

    def dynamics(self, state: Array, control: Array) -> Array:
        force = np.asarray(control)[..., 0]
        dt = self.dt
        k1 = self._deriv(state, force)
        k2 = self._deriv(state + 0.5 * dt * k1, force)
        k3 = self._deriv(state + 0.5 * dt * k2, force)
        k4 = self._deriv(state + dt * k3, force)
        return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def energy(self, state: Array) -> Array:
        """Total mechanical energy (pole treated as a uniform rod)."""
        x_dot, theta, omega = state[..., 1], state[..., 2], state[..., 3]
        mp, l = self.pole_mass, self.pole_half_length
        kinetic = (
            0.5 * (self.cart_mass + mp) * x_dot**2
            + mp * l * x_dot * omega * np.cos(theta)
            + 0.5 * (4.0 / 3.0) * mp * l * l * omega**2
        )
        return kinetic + mp * self.gravity * l * np.cos(theta)

    def state_cost(self, state: Array) -> Array:
        s = np.asarray(state, dtype=float)
        return (
            self.angle_weight * wrap_angle(s[..., 2]) ** 2
            + self.position_weight * s[..., 0] ** 2
            + self.velocity_weight * s[..., 1] ** 2
            + self.angular_velocity_weight * s[..., 3] ** 2
        )

    def initial(self, rng):
        x = rng.uniform(-self.init_position_range, self.init_position_range)
        theta = math.pi + rng.uniform(-self.init_angle_range, self.init_angle_range)
        return np.array([x, 0.0, theta, 0.0]), self

    def success(self, states):
        final = np.asarray(states)[-1]
        return bool(
            abs(wrap_angle(final[2])) <= self.success_angle
            and abs(final[1]) <= self.success_velocity
            and abs(final[3]) <= self.success_angular_velocity
        )

    def task_position(self, states):
        return np.asarray(states)[..., :1]


# ---------------------------------------------------------------------------
# planar reacher


@dataclass(frozen=True)
class ReacherSpec(EnvSpec):
    """Kinematic 2-link planar arm driven by joint accelerations.

    State is ``[q1, q2, q1_dot, q2_dot]``. Goals are drawn from an annulus of
    reachable end-effector positions.
    """

    name: ClassVar[str] = "reacher2"
    state_dim: ClassVar[int] = 4
    control_dim: ClassVar[int] = 2

    dt: float = 0.02
    episode_length: int = 250
    control_bound: float = 8.0
    link_lengths: tuple[float, float] = (0.5, 0.4)
    start_pose: tuple[float, float] = (0.3, 0.8)
    goal: tuple[float, float] = (0.6, 0.3)
    goal_radius_range: tuple[float, float] = (0.3, 0.8)
    position_weight: float = 10.0
    velocity_weight: float = 0.01
    control_weight: float = 1e-4
    terminal_weight: float = 10.0
    success_radius: float = 0.05
    stay_radius: float = 0.10

    def end_effector(self, state: Array) -> Array:
        q1, q2 = state[..., 0], state[..., 1]
        l1, l2 = self.link_lengths
        x = l1 * np.cos(q1) + l2 * np.cos(q1 + q2)
        y = l1 * np.sin(q1) + l2 * np.sin(q1 + q2)
        return np.stack([x, y], axis=-1)

    def dynamics(self, state, control):
        # semi-implicit Euler double integrator on joint angles
        vel = state[..., 2:] + self.dt * control
        pos = state[..., :2] + self.dt * vel
        return np.concatenate([pos, vel], axis=-1)

    def state_cost(self, state):
        s = np.asarray(state, dtype=float)
        err = self.end_effector(s) - np.asarray(self.goal)
        return self.position_weight * np.sum(err**2, axis=-1) + self.velocity_weight * np.sum(
            s[..., 2:] ** 2, axis=-1
        )

    def initial(self, rng):
        lo, hi = self.goal_radius_range
        r = rng.uniform(lo, hi)
        phi = rng.uniform(-math.pi, math.pi)
        episode = dataclasses.replace(self, goal=(r * math.cos(phi), r * math.sin(phi)))
        return np.array([*self.start_pose, 0.0, 0.0]), episode

    def success(self, states):
        dist = np.linalg.norm(self.end_effector(np.asarray(states)) - np.asarray(self.goal), axis=-1)
        # reached within success_radius at some step and stayed within stay_radius afterwards
        outside = np.flatnonzero(dist > self.stay_radius)
        start = outside[-1] + 1 if outside.size else 0
        return bool(np.any(dist[start:] <= self.success_radius))

    def task_position(self, states):
        return self.end_effector(np.asarray(states))

    def scenario(self):
        return {"goal": list(self.goal)}


# ---------------------------------------------------------------------------
# point mass with obstacles


@dataclass(frozen=True)
class PointmassSpec(EnvSpec):
    """Damped 2-D double integrator in a 2x2 m workspace with circular obstacles.

    State is ``[x, y, vx, vy]``; control is acceleration.
    """

    name: ClassVar[str] = "pointmass_obstacles"
    state_dim: ClassVar[int] = 4
    control_dim: ClassVar[int] = 2

    dt: float = 0.05
    episode_length: int = 300
    control_bound: float = 2.0
    damping: float = 0.5
    workspace: float = 1.0
    start: tuple[float, float] = (-0.8, -0.8)
    goal: tuple[float, float] = (0.7, 0.7)
    obstacles: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 0.15), (0.4, 0.3, 0.15))
    num_obstacles: int = 2
    obstacle_radius_range: tuple[float, float] = (0.1, 0.2)
    safety_margin: float = 0.02
    collision_penalty: float = 10000.0
    position_weight: float = 1.0
    velocity_weight: float = 0.01
    control_weight: float = 1e-3
    terminal_weight: float = 10.0
    success_radius: float = 0.05

    def __post_init__(self) -> None:
        super().__post_init__()
        if any(r <= 0 for _, _, r in self.obstacles):
            raise ValueError("obstacle radii must be positive")
        if max(abs(self.goal[0]), abs(self.goal[1])) > self.workspace:
            raise ValueError("goal outside workspace")

    @property
    def damping_factor(self) -> float:
        return math.exp(-self.damping * self.dt)

    def dynamics(self, state, control):
        vel = self.damping_factor * (state[..., 2:] + self.dt * control)
        pos = state[..., :2] + self.dt * vel
        return np.concatenate([pos, vel], axis=-1)

    def in_collision(self, state) -> Array:
        pos = np.asarray(state, dtype=float)[..., :2]
        hit = np.zeros(pos.shape[:-1], dtype=bool)
        for cx, cy, r in self.obstacles:
            d2 = (pos[..., 0] - cx) ** 2 + (pos[..., 1] - cy) ** 2
            hit |= d2 <= (r + self.safety_margin) ** 2
        return hit

    def state_cost(self, state):
        s = np.asarray(state, dtype=float)
        err = s[..., :2] - np.asarray(self.goal)
        cost = self.position_weight * np.sum(err**2, axis=-1)
        cost = cost + self.velocity_weight * np.sum(s[..., 2:] ** 2, axis=-1)
        return cost + self.collision_penalty * self.in_collision(s)

    def initial(self, rng):
        w = self.workspace
        goal = tuple(rng.uniform(0.3 * w, 0.9 * w, size=2))
        obstacles = []
        start, g = np.asarray(self.start), np.asarray(goal)
        for _ in range(self.num_obstacles):
            frac = rng.uniform(0.25, 0.75)
            centre = start + frac * (g - start) + rng.uniform(-0.25, 0.25, size=2)
            radius = rng.uniform(*self.obstacle_radius_range)
            obstacles.append((float(centre[0]), float(centre[1]), float(radius)))
        episode = dataclasses.replace(
            self, goal=(float(goal[0]), float(goal[1])), obstacles=tuple(obstacles)
        )
        return np.array([*self.start, 0.0, 0.0]), episode

    def success(self, states):
        states = np.asarray(states)
        if np.any(self.in_collision(states)):
            return False
        dist = np.linalg.norm(states[:, :2] - np.asarray(self.goal), axis=-1)
        return bool(np.any(dist <= self.success_radius))

    def task_position(self, states):
        return np.asarray(states)[..., :2]

    def scenario(self):
        return {"goal": list(self.goal), "obstacles": [list(o) for o in self.obstacles]}


ENV_TYPES: dict[str, type[EnvSpec]] = {
    cls.name: cls for cls in (CartpoleSpec, ReacherSpec, PointmassSpec)
}


def make_env(name: str, **params) -> EnvSpec:
    """Construct an env spec by name; unknown parameter names raise ``TypeError``."""
    try:
        cls = ENV_TYPES[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; expected one of {sorted(ENV_TYPES)}")
    converted = {}
    for f in dataclasses.fields(cls):
        if f.name in params:
            v = params[f.name]
            if isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            converted[f.name] = v
    unknown = set(params) - set(converted)
    if unknown:
        raise TypeError(f"unknown {name} parameters: {sorted(unknown)}")
    return cls(**converted)


# ---------------------------------------------------------------------------
# functional interface


@dataclass
class Trajectory:
    states: Array  # (H + 1, state_dim)
    controls: Array  # (H, control_dim)
    total_cost: float


@dataclass
class Episode:
    """A closed-loop run: ``states`` has ``T + 1`` rows, ``controls`` ``T``."""

    spec: EnvSpec
    seed: int
    states: Array
    controls: Array
    costs: Array = field(default_factory=lambda: np.zeros(0))
    diagnostics: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return is_success(self.spec, self.states)

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.costs))


def reset(spec: EnvSpec, seed: int) -> tuple[Array, EnvSpec]:
    """Draw an initial state and the episode's concrete spec (goal, obstacles)."""
    return spec.initial(np.random.default_rng(seed))


def step(spec: EnvSpec, state, control) -> Array:
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(control))):
        raise InvalidStateError("non-finite state or control")
    return spec.dynamics(state, spec.clamp(control))


def running_cost(spec: EnvSpec, state, control):
    return spec.running_cost(np.asarray(state, dtype=float), np.asarray(control, dtype=float))


def terminal_cost(spec: EnvSpec, state):
    return spec.terminal_cost(np.asarray(state, dtype=float))


def rollout_costs(model: EnvSpec, start, controls) -> Array:
    """Total costs of a batch of control sequences ``(N, H, control_dim)`` from one start."""
    controls = np.asarray(controls, dtype=float)
    n, horizon, _ = controls.shape
    state = np.broadcast_to(np.asarray(start, dtype=float), (n, model.state_dim))
    total = np.zeros(n)
    for h in range(horizon):
        u = controls[:, h]
        total += model.running_cost(state, u)
        state = model.dynamics(state, u)
    return total + model.terminal_cost(state)


def rollout(spec: EnvSpec, start, controls, model: EnvSpec | None = None) -> Trajectory:
    """Open-loop rollout of one control sequence, accumulating the total cost."""
    model = spec if model is None else model
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 2 or controls.shape[0] < 1:
        raise ValueError("rollout needs a (H, control_dim) control sequence with H >= 1")
    controls = model.clamp(controls)
    states = [np.asarray(start, dtype=float)]
    total = 0.0
    for u in controls:
        total += float(model.running_cost(states[-1], u))
        states.append(step(model, states[-1], u))
    total += float(model.terminal_cost(states[-1]))
    return Trajectory(np.array(states), controls, total)


def is_success(spec: EnvSpec, states) -> bool:
    return spec.success(np.asarray(states, dtype=float))
