"""Damped double pendulum: energy, RK4 integration and (state, next state) pairs.

Point masses on massless rods, absolute angles from the downward vertical,
viscous damping torques -c1*omega1 and -c2*omega2 at the joints. States are
``(theta1, omega1, theta2, omega2)``; every function accepts a single state
or an (N, 4) batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidConfig, NumericalFailure


@dataclass(frozen=True)
class PendulumConfig:
    l1: float = 1.0
    l2: float = 1.0
    m1: float = 1.0
    m2: float = 5.0
    c1: float = 0.001
    c2: float = 0.001
    g: float = 9.81
    # 0.1 s between input and target; coarser steps let RK4 error outrun the
    # tiny damping and emit targets with more energy than their inputs
    dt: float = 0.001
    steps_per_sample: int = 100

    def __post_init__(self):
        if min(self.l1, self.l2, self.m1, self.m2, self.dt) <= 0:
            raise InvalidConfig("lengths, masses and dt must be positive")
        if min(self.c1, self.c2) < 0:
            raise InvalidConfig("friction coefficients must be non-negative")
        if self.steps_per_sample < 1:
            raise InvalidConfig("steps_per_sample must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def pendulum_energy(state, config: PendulumConfig = PendulumConfig()):
    """Total mechanical energy in joules."""
    s = np.asarray(state, dtype=np.float64)
    th1, w1, th2, w2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    c = config
    kinetic = 0.5 * c.m1 * c.l1 ** 2 * w1 ** 2 + 0.5 * c.m2 * (
        c.l1 ** 2 * w1 ** 2 + c.l2 ** 2 * w2 ** 2 + 2.0 * c.l1 * c.l2 * w1 * w2 * np.cos(th1 - th2))
    potential = -(c.m1 + c.m2) * c.g * c.l1 * np.cos(th1) - c.m2 * c.g * c.l2 * np.cos(th2)
    return kinetic + potential


def energy_grad(state, config: PendulumConfig = PendulumConfig()):
    """Gradient of :func:`pendulum_energy` with respect to the state."""
    s = np.asarray(state, dtype=np.float64)
    th1, w1, th2, w2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    c = config
    cd, sd = np.cos(th1 - th2), np.sin(th1 - th2)
    cross = c.m2 * c.l1 * c.l2 * w1 * w2
    g = np.empty_like(s)
    g[..., 0] = -cross * sd + (c.m1 + c.m2) * c.g * c.l1 * np.sin(th1)
    g[..., 1] = (c.m1 + c.m2) * c.l1 ** 2 * w1 + c.m2 * c.l1 * c.l2 * w2 * cd
    g[..., 2] = cross * sd + c.m2 * c.g * c.l2 * np.sin(th2)
    g[..., 3] = c.m2 * c.l2 ** 2 * w2 + c.m2 * c.l1 * c.l2 * w1 * cd
    return g


def derivatives(state, config: PendulumConfig = PendulumConfig()):
    s = np.asarray(state, dtype=np.float64)
    th1, w1, th2, w2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    c = config
    d = th1 - th2
    cd, sd = np.cos(d), np.sin(d)
    # mass matrix [[a, b], [b, e]] acting on (alpha1, alpha2)
    a = (c.m1 + c.m2) * c.l1 ** 2
    b = c.m2 * c.l1 * c.l2 * cd
    e = c.m2 * c.l2 ** 2
    f1 = -c.m2 * c.l1 * c.l2 * w2 ** 2 * sd - (c.m1 + c.m2) * c.g * c.l1 * np.sin(th1) - c.c1 * w1
    f2 = c.m2 * c.l1 * c.l2 * w1 ** 2 * sd - c.m2 * c.g * c.l2 * np.sin(th2) - c.c2 * w2
    det = a * e - b * b
    alpha1 = (e * f1 - b * f2) / det
    alpha2 = (a * f2 - b * f1) / det
    out = np.stack([w1, alpha1, w2, alpha2], axis=-1)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite pendulum derivative")
    return out


def pendulum_step(state, config: PendulumConfig = PendulumConfig(), dt: float | None = None):
    """One classical RK4 step; angles are not wrapped."""
    h = config.dt if dt is None else dt
    s = np.asarray(state, dtype=np.float64)
    k1 = derivatives(s, config)
    k2 = derivatives(s + 0.5 * h * k1, config)
    k3 = derivatives(s + 0.5 * h * k2, config)
    k4 = derivatives(s + h * k3, config)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(state, n_steps: int, config: PendulumConfig = PendulumConfig(), dt: float | None = None):
    s = np.asarray(state, dtype=np.float64)
    for _ in range(n_steps):
        s = pendulum_step(s, config, dt)
    return s


def sample_initial_states(n: int, rng) -> np.ndarray:
    th = rng.uniform(-np.pi / 2, np.pi / 2, size=(n, 2))
    om = rng.uniform(-1.0, 1.0, size=(n, 2))
    return np.stack([th[:, 0], om[:, 0], th[:, 1], om[:, 1]], axis=1)


def pendulum_dataset(config: PendulumConfig, n_trajectories: int, traj_len: int, rng):
    """Roll trajectories and emit ``traj_len`` consecutive (x, target) pairs per trajectory.

    Targets are the state ``steps_per_sample`` integrator steps after the input.
    Returns arrays ``(X, Y)`` of shape (n_trajectories * traj_len, 4), ordered
    trajectory-major.
    """
    if n_trajectories < 1 or traj_len < 1:
        raise InvalidConfig("n_trajectories and traj_len must be positive")
    s = sample_initial_states(n_trajectories, rng)
    states = [s]
    for _ in range(traj_len):
        s = integrate(s, config.steps_per_sample, config)
        states.append(s)
    traj = np.stack(states, axis=1)  # (n_traj, traj_len + 1, 4)
    X = traj[:, :-1].reshape(-1, 4)
    Y = traj[:, 1:].reshape(-1, 4)
    return X, Y
