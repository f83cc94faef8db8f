"""Discrete-time agent dynamics and the two vehicle models.

Provides exact zero-order-hold discretization, the underwater-vehicle diving
model (depth, pitch, pitch rate driven by a stern-plane angle), the
feedback-linearized road-vehicle longitudinal model (position, velocity,
acceleration driven by desired acceleration), formation offsets, and leader
trajectory generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (
    BoxNotInterior,
    DegenerateInertia,
    DimensionMismatch,
    UncontrollablePair,
)


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time pair (A, B) with a per-agent input box.

    The box must contain the origin strictly; controllability of (A, B)
    is verified at construction via the rank of the controllability
    block matrix.
    """

    A: np.ndarray
    B: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B rows {B.shape[0]} != state dim {A.shape[0]}")
        lo = np.asarray(self.input_lower, dtype=float).ravel()
        hi = np.asarray(self.input_upper, dtype=float).ravel()
        if lo.shape[0] != B.shape[1] or hi.shape[0] != B.shape[1]:
            raise DimensionMismatch("input box length must match input dimension")
        object.__setattr__(self, "input_lower", lo)
        object.__setattr__(self, "input_upper", hi)
        if not (np.all(lo < 0.0) and np.all(hi > 0.0)):
            raise BoxNotInterior(f"origin not interior to box [{lo}, {hi}]")
        if not controllable(A, B):
            raise UncontrollablePair("(A, B) fails the controllability rank test")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def input_in_box(self, u: np.ndarray, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float).ravel()
        return bool(
            np.all(u >= self.input_lower - tol) and np.all(u <= self.input_upper + tol)
        )


def controllable(A: np.ndarray, B: np.ndarray) -> bool:
    """Rank test on [B, AB, ..., A^{n-1}B]."""
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    ctrb = np.hstack(blocks)
    return int(np.linalg.matrix_rank(ctrb)) == n


@dataclass(frozen=True)
class Trajectory:
    """Horizon-indexed state/input sequences.

    ``states`` has N_p + 1 rows, ``inputs`` N_p rows.  The same type is
    reused for assumed, predicted, and optimal roles; ``role`` is a tag
    only.
    """

    states: np.ndarray
    inputs: np.ndarray
    role: str = "assumed"

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        u = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "inputs", u)
        if s.shape[0] != u.shape[0] + 1:
            raise DimensionMismatch(
                f"states rows {s.shape[0]} must be inputs rows {u.shape[0]} + 1"
            )

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def dynamics_consistent(self, model: SystemModel, tol: float = 1e-9) -> bool:
        pred = self.states[:-1] @ model.A.T + self.inputs @ model.B.T
        return bool(np.max(np.abs(pred - self.states[1:])) <= tol)


@dataclass(frozen=True)
class AUVParams:
    """Physical parameters of the diving model.

    The pitch-dynamics denominator is ``pitch_inertia - m_qdot`` and must
    be nonzero.  ``weight`` and ``buoyancy`` are forces in newtons.
    """

    surge_speed: float
    m_qdot: float
    m_uq: float
    m_uuds: float
    z_g: float
    z_b: float
    weight: float
    buoyancy: float
    pitch_inertia: float
    stern_lower: float = -math.pi / 6
    stern_upper: float = math.pi / 6


@dataclass(frozen=True)
class CAVParams:
    """Parameters of the longitudinal road-vehicle model.

    Only ``tau`` enters the linear model; the remaining physical fields
    feed :func:`feedback_linearization_torque` so a desired acceleration
    can be mapped back to a driveline torque.
    """

    tau: float
    input_lower: float = -3.0
    input_upper: float = 3.0
    spacing: float = 20.0
    mass: float = 1500.0
    tire_radius: float = 0.30
    efficiency: float = 0.90
    drag_coeff: float = 0.50
    rolling_coeff: float = 0.01
    gravity: float = 9.81
    slope: float = 0.0

    def __post_init__(self):
        if self.tau <= 0.0:
            raise DegenerateInertia("driveline lag tau must be positive")
        if self.spacing <= 0.0:
            raise DimensionMismatch("spacing must be positive")


@dataclass(frozen=True)
class FormationOffset:
    """Per-agent target displacement from the leader.

    The control target is x_i -> x_0 - delta_i; the leader offset is zero
    by construction.  ``vectors`` holds delta_1..delta_N.
    """

    vectors: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "vectors", v)

    @classmethod
    def zero(cls, follower_count: int, state_dim: int) -> "FormationOffset":
        return cls(np.zeros((follower_count, state_dim)))

    @classmethod
    def platoon(cls, follower_count: int, spacing: float, state_dim: int) -> "FormationOffset":
        v = np.zeros((follower_count, state_dim))
        v[:, 0] = spacing * np.arange(1, follower_count + 1)
        return cls(v)

    def of(self, agent: int) -> np.ndarray:
        """Offset vector for agent id, 0 meaning the leader (zero)."""
        if agent == 0:
            return np.zeros(self.vectors.shape[1])
        return self.vectors[agent - 1]


def zoh_discretize(A_c, B_c, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization.

    Computes A = exp(A_c dt) and B = (integral of exp(A_c s) ds) B_c via a
    single matrix exponential of the augmented block [[A_c, B_c], [0, 0]].
    """
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c[:, None]
    if dt <= 0.0:
        raise DimensionMismatch("dt must be positive")
    n, m = B_c.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    phi = expm(aug * dt)
    return phi[:n, :n], phi[:n, n:]


def auv_continuous_model(p: AUVParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous diving dynamics for state [depth, pitch, pitch rate]."""
    den = p.pitch_inertia - p.m_qdot
    if den == 0.0:
        raise DegenerateInertia("pitch inertia minus added mass is zero")
    restoring = p.z_g * p.weight - p.z_b * p.buoyancy
    A_c = np.array(
        [
            [0.0, -p.surge_speed, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, -restoring / den, p.m_uq * p.surge_speed / den],
        ]
    )
    B_c = np.array([[0.0], [0.0], [p.m_uuds * p.surge_speed**2 / den]])
    return A_c, B_c


def cav_continuous_model(p: CAVParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous longitudinal dynamics for state [position, velocity, accel].

    The input column is [0, 0, 1/tau]: with first-order driveline lag the
    chain is p' = v, v' = a, a' = (u - a)/tau.
    """
    A_c = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0 / p.tau]])
    B_c = np.array([[0.0], [0.0], [1.0 / p.tau]])
    return A_c, B_c


def feedback_linearization_torque(p: CAVParams, v: float, a: float, u: float) -> float:
    """Driveline torque realizing desired acceleration u at (v, a)."""
    grade = p.rolling_coeff * math.cos(p.slope) + math.sin(p.slope)
    return (p.tire_radius / p.efficiency) * (
        p.drag_coeff * v * (2.0 * p.tau * a + v) + p.mass * p.gravity * grade + p.mass * u
    )


def plant_step(model: SystemModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One step of x(t+1) = A x + B u.  The plant does not clip inputs."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.shape[0] != model.state_dim:
        raise DimensionMismatch(f"state length {x.shape[0]} != {model.state_dim}")
    if u.shape[0] != model.input_dim:
        raise DimensionMismatch(f"input length {u.shape[0]} != {model.input_dim}")
    return model.A @ x + model.B @ u


@dataclass(frozen=True)
class LeaderProfile:
    """Leader acceleration as a function of continuous time.

    ``kind`` is ``"cav_sine"`` for the closed-form piecewise profile
    (zero until 2 s, sin(pi (t - 5)) until 6 s, zero after) or ``"table"``
    for step-interpolated (time, value) samples.
    """

    kind: str
    table: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def value(self, time: float) -> float:
        if self.kind == "cav_sine":
            if time <= 2.0 or time > 6.0:
                return 0.0
            return math.sin(math.pi * (time - 5.0))
        if self.kind == "table":
            out = 0.0
            for t_k, v_k in self.table:
                if time >= t_k:
                    out = v_k
                else:
                    break
            return out
        raise DimensionMismatch(f"unknown profile kind {self.kind!r}")


def leader_trajectory(
    model: SystemModel,
    x0: np.ndarray,
    horizon: int,
    profile: LeaderProfile | None = None,
) -> Trajectory:
    """Leader broadcast over the horizon: zero-input propagation A^k x0.

    The broadcast is always the autonomous rollout from the current leader
    state, matching the model followers assume.  When a profile drives the
    true leader, its state advances separately through :func:`plant_step`
    with u_0(t) sampled from the profile; the ``profile`` argument is
    accepted here only to make that contract explicit and does not alter
    the broadcast.
    """
    del profile
    x0 = np.asarray(x0, dtype=float).ravel()
    states = np.empty((horizon + 1, model.state_dim))
    states[0] = x0
    for k in range(horizon):
        states[k + 1] = model.A @ states[k]
    return Trajectory(
        states=states, inputs=np.zeros((horizon, model.input_dim)), role="assumed"
    )
