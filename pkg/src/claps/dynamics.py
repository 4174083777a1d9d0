"""Second-order unicycle dynamics in state-space and body-twist form.

Two equivalent representations of the same constrained mechanical system:

* state space: generalized coordinates q = (x, y, theta) with a
  configuration-dependent no-side-slip constraint row A(q) and input map
  B(q), integrated with classical explicit schemes;
* body frame: pose g and twist xi, where the constraint row, inertia and
  input map become configuration-independent, the twist rate follows from
  a precomputed constraint projector, and the pose is reconstructed with
  group exponentials.

All steppers have batched cores operating on (N, 3) arrays; the single
state ``step`` API wraps batches of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import se2
from .se2 import Pose, Twist

# Inertia estimate fitted for the simulated robot from constant-wrench
# rollouts: diag(mass, mass, rotational inertia).
JETBOT_INERTIA = (2.8, 2.8, 0.007)

LIE_METHODS = ("fe", "se", "heun", "rk2", "cf4")
SS_METHODS = ("fe", "se", "heun", "rk2", "rk4")


@dataclass(frozen=True)
class ControlInput:
    """Body-fixed wrench: forward force (N) and yaw torque (N*m)."""

    fx: float
    tz: float

    @classmethod
    def from_array(cls, a) -> "ControlInput":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.tz])


@dataclass(frozen=True)
class LieState:
    """Pose plus body twist."""

    pose: Pose
    twist: Twist

    @classmethod
    def from_arrays(cls, pose, twist) -> "LieState":
        return cls(Pose.from_array(pose), Twist.from_array(twist))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pose.as_array(), self.twist.as_array()


def _check_spd(m, name):
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric 3x3 matrix")
    if np.any(np.linalg.eigvalsh(m) <= 0):
        raise ValueError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True)
class SSModel:
    """Generalized-coordinate model: inertia plus q-dependent A(q), B(q)."""

    inertia: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inertia", _check_spd(self.inertia, "inertia"))

    def constraint_row(self, theta) -> np.ndarray:
        return np.array([np.sin(theta), -np.cos(theta), 0.0])

    def constraint_row_dot(self, theta, thetadot) -> np.ndarray:
        return np.array([thetadot * np.cos(theta), thetadot * np.sin(theta), 0.0])

    def input_map(self, theta) -> np.ndarray:
        return np.array([[np.cos(theta), 0.0], [np.sin(theta), 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class LieModel:
    """Body-frame model with precomputed constraint projector.

    The projector P = M^-1 A^T (A M^-1 A^T)^-1 A is an oblique projection;
    (I - P) applied to the unconstrained twist rate enforces the constraint
    without solving for multipliers at every step.
    """

    inertia: np.ndarray
    constraint: np.ndarray
    input_map: np.ndarray
    proj: np.ndarray = field(init=False)
    proj_complement: np.ndarray = field(init=False)
    inertia_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        m = _check_spd(self.inertia, "inertia")
        a = np.atleast_2d(np.asarray(self.constraint, dtype=float))
        b = np.asarray(self.input_map, dtype=float)
        p, ip = projection_matrix(m, a)
        object.__setattr__(self, "inertia", m)
        object.__setattr__(self, "constraint", a)
        object.__setattr__(self, "input_map", b)
        object.__setattr__(self, "proj", p)
        object.__setattr__(self, "proj_complement", ip)
        object.__setattr__(self, "inertia_inv", np.linalg.inv(m))


def unicycle_ss_model(inertia_diag=JETBOT_INERTIA) -> SSModel:
    return SSModel(np.diag(inertia_diag))


def unicycle_lie_model(inertia_diag=JETBOT_INERTIA) -> LieModel:
    ss = unicycle_ss_model(inertia_diag)
    q0 = np.zeros(3)
    return LieModel(
        convert_inertia(ss.inertia, q0),
        convert_constraint(ss.constraint_row(q0[2]), q0),
        convert_input(ss.input_map(q0[2]), q0),
    )


# ---------------------------------------------------------------------------
# state-space <-> body-frame conversion


def body_jacobian(q) -> np.ndarray:
    """Map generalized velocities to body twists: blockdiag(R(theta)^-1, 1)."""
    theta = np.asarray(q, dtype=float)[..., 2]
    c, s = np.cos(theta), np.sin(theta)
    j = np.zeros(np.shape(theta) + (3, 3))
    j[..., 0, 0] = c
    j[..., 0, 1] = s
    j[..., 1, 0] = -s
    j[..., 1, 1] = c
    j[..., 2, 2] = 1.0
    return j


def _jacobian_pinv(q) -> np.ndarray:
    j = body_jacobian(q)
    if np.linalg.matrix_rank(j) < 3:
        raise ValueError("body Jacobian is rank deficient")
    return np.linalg.pinv(j)


def convert_constraint(a_row, q) -> np.ndarray:
    """Pfaffian row(s) on generalized velocities -> body-frame constraint.

    Rows are sign-canonicalized (first nonzero entry positive); scaling a
    constraint row never changes the constraint set or the projector.
    """
    a = np.atleast_2d(np.asarray(a_row, dtype=float)) @ _jacobian_pinv(q)
    for row in a:
        nz = row[np.abs(row) > 1e-12]
        if nz.size and nz[0] < 0:
            row *= -1.0
    return a


def convert_inertia(m, q) -> np.ndarray:
    jp = _jacobian_pinv(q)
    return jp.T @ np.asarray(m, dtype=float) @ jp


def convert_input(b, q) -> np.ndarray:
    return _jacobian_pinv(q).T @ np.asarray(b, dtype=float)


def projection_matrix(inertia, constraint) -> tuple[np.ndarray, np.ndarray]:
    """Return (P, I - P) for the constraint projector described on LieModel."""
    m = np.asarray(inertia, dtype=float)
    a = np.atleast_2d(np.asarray(constraint, dtype=float))
    m_inv = np.linalg.inv(m)
    gram = a @ m_inv @ a.T
    if abs(np.linalg.det(gram)) < 1e-15:
        raise ValueError("constraint rows are dependent: A M^-1 A^T is singular")
    p = m_inv @ a.T @ np.linalg.solve(gram, a)
    return p, np.eye(3) - p


# ---------------------------------------------------------------------------
# accelerations


def _coriolis(xi, inertia) -> np.ndarray:
    """ad(xi)^T M xi, batched over leading axes of xi."""
    xi = np.asarray(xi, dtype=float)
    m = xi @ np.asarray(inertia, dtype=float).T
    return np.stack(
        [
            xi[..., 2] * m[..., 1],
            -xi[..., 2] * m[..., 0],
            xi[..., 1] * m[..., 0] - xi[..., 0] * m[..., 1],
        ],
        axis=-1,
    )


def eps_accel(xi, u, model: LieModel, drag=None) -> np.ndarray:
    """Constrained twist rate (I - P) M^-1 (ad(xi)^T M xi + B u [- D xi]).

    ``drag`` optionally adds a viscous force -diag(drag) @ xi (used by the
    ground-truth simulator; the nominal model has none).
    """
    xi = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    force = _coriolis(xi, model.inertia) + u @ model.input_map.T
    if drag is not None:
        force = force - xi * np.asarray(drag, dtype=float)
    free = force @ model.inertia_inv.T
    return free @ model.proj_complement.T


def eps_accel_multiplier(xi, u, model: LieModel, drag=None) -> np.ndarray:
    """Twist rate via the explicit Lagrange-multiplier solve.

    Independent of the projector route in :func:`eps_accel`; the two must
    agree to machine precision and tests hold them to 1e-12.
    """
    xi = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    a = model.constraint
    force = _coriolis(xi, model.inertia) + u @ model.input_map.T
    if drag is not None:
        force = force - xi * np.asarray(drag, dtype=float)
    gram = a @ model.inertia_inv @ a.T
    rhs = (force @ model.inertia_inv.T) @ a.T
    lam = -np.linalg.solve(gram, rhs[..., None])[..., 0]
    return (force + lam @ a) @ model.inertia_inv.T


def ss_accel(q, dq, u, model: SSModel) -> np.ndarray:
    """Generalized accelerations from the multiplier-eliminated equations."""
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    u = np.asarray(u, dtype=float)
    if q.ndim == 1:
        return _ss_accel_batch(q[None], dq[None], u[None], model)[0]
    return _ss_accel_batch(q, dq, u, model)


def _ss_accel_batch(q, dq, u, model: SSModel) -> np.ndarray:
    theta = q[..., 2]
    c, s = np.cos(theta), np.sin(theta)
    m_inv = np.linalg.inv(model.inertia)
    # generalized force from body wrench: B(q) u with B = [[c,0],[s,0],[0,1]]
    force = np.stack([c * u[..., 0], s * u[..., 0], u[..., 1]], axis=-1)
    free = force @ m_inv.T
    # single constraint row a = [s, -c, 0]; adot @ dq = thetadot*(c*xd + s*yd)
    a_m_a = s * s * m_inv[0, 0] - 2 * s * c * m_inv[0, 1] + c * c * m_inv[1, 1]
    adot_dq = dq[..., 2] * (c * dq[..., 0] + s * dq[..., 1])
    a_free = s * free[..., 0] - c * free[..., 1]
    lam = -(a_free + adot_dq) / a_m_a
    force = force + np.stack([s * lam, -c * lam, np.zeros_like(lam)], axis=-1)
    return force @ m_inv.T


# ---------------------------------------------------------------------------
# integrators: body-frame (pose reconstructed with exponentials)


def _lie_fe(pose, xi, u, dt, accel):
    xi_new = xi + dt * accel(xi, u)
    return se2.compose(pose, se2.exp(dt * xi)), xi_new


def _lie_se(pose, xi, u, dt, accel):
    xi_new = xi + dt * accel(xi, u)
    return se2.compose(pose, se2.exp(dt * xi_new)), xi_new


def _lie_heun(pose, xi, u, dt, accel):
    k1 = accel(xi, u)
    xi2 = xi + dt * k1
    k2 = accel(xi2, u)
    xi_new = xi + 0.5 * dt * (k1 + k2)
    return se2.compose(pose, se2.exp(0.5 * dt * (xi + xi2))), xi_new


def _lie_rk2(pose, xi, u, dt, accel):
    k1 = accel(xi, u)
    xi_mid = xi + 0.5 * dt * k1
    k2 = accel(xi_mid, u)
    xi_new = xi + dt * k2
    return se2.compose(pose, se2.exp(dt * xi_mid)), xi_new


def _lie_cf4(pose, xi, u, dt, accel):
    # commutator-free fourth order: classical RK4 stage twists feed two
    # stacked exponentials for the pose reconstruction
    x1 = xi
    k1 = accel(x1, u)
    x2 = xi + 0.5 * dt * k1
    k2 = accel(x2, u)
    x3 = xi + 0.5 * dt * k2
    k3 = accel(x3, u)
    x4 = xi + dt * k3
    k4 = accel(x4, u)
    xi_new = xi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    e1 = dt / 12.0 * (3 * x1 + 2 * x2 + 2 * x3 - x4)
    e2 = dt / 12.0 * (-x1 + 2 * x2 + 2 * x3 + 3 * x4)
    return se2.compose(se2.compose(pose, se2.exp(e1)), se2.exp(e2)), xi_new


_LIE_STEPPERS = {"fe": _lie_fe, "se": _lie_se, "heun": _lie_heun, "rk2": _lie_rk2, "cf4": _lie_cf4}


def lie_step_batch(pose, xi, u, dt, method, model: LieModel, drag=None):
    """One body-frame step on (N, 3) pose/twist batches; returns new arrays."""
    try:
        stepper = _LIE_STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown body-frame integrator {method!r}; pick from {LIE_METHODS}")

    def accel(x, uu):
        return eps_accel(x, uu, model, drag=drag)

    return stepper(np.asarray(pose, dtype=float), np.asarray(xi, dtype=float),
                   np.asarray(u, dtype=float), dt, accel)


# ---------------------------------------------------------------------------
# integrators: state space


def _ss_fe(q, dq, u, dt, accel):
    return q + dt * dq, dq + dt * accel(q, dq, u)


def _ss_se(q, dq, u, dt, accel):
    dq_new = dq + dt * accel(q, dq, u)
    return q + dt * dq_new, dq_new


def _ss_heun(q, dq, u, dt, accel):
    a1 = accel(q, dq, u)
    q2, dq2 = q + dt * dq, dq + dt * a1
    a2 = accel(q2, dq2, u)
    return q + 0.5 * dt * (dq + dq2), dq + 0.5 * dt * (a1 + a2)


def _ss_rk2(q, dq, u, dt, accel):
    a1 = accel(q, dq, u)
    qm, dqm = q + 0.5 * dt * dq, dq + 0.5 * dt * a1
    a2 = accel(qm, dqm, u)
    return q + dt * dqm, dq + dt * a2


def _ss_rk4(q, dq, u, dt, accel):
    a1 = accel(q, dq, u)
    q2, dq2 = q + 0.5 * dt * dq, dq + 0.5 * dt * a1
    a2 = accel(q2, dq2, u)
    q3, dq3 = q + 0.5 * dt * dq2, dq + 0.5 * dt * a2
    a3 = accel(q3, dq3, u)
    q4, dq4 = q + dt * dq3, dq + dt * a3
    a4 = accel(q4, dq4, u)
    q_new = q + dt / 6.0 * (dq + 2 * dq2 + 2 * dq3 + dq4)
    dq_new = dq + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    return q_new, dq_new


_SS_STEPPERS = {"fe": _ss_fe, "se": _ss_se, "heun": _ss_heun, "rk2": _ss_rk2, "rk4": _ss_rk4}


def ss_step_batch(q, dq, u, dt, method, model: SSModel):
    """One state-space step on (N, 3) coordinate/velocity batches."""
    try:
        stepper = _SS_STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown state-space integrator {method!r}; pick from {SS_METHODS}")

    def accel(qq, dqq, uu):
        return _ss_accel_batch(qq, dqq, uu, model)

    return stepper(np.asarray(q, dtype=float), np.asarray(dq, dtype=float),
                   np.asarray(u, dtype=float), dt, accel)


def step(state, u, dt, method, space, model) -> "LieState | tuple[np.ndarray, np.ndarray]":
    """Advance one step.

    ``space`` is "lie" (state: LieState, model: LieModel) or "ss"
    (state: (q, dq) arrays, model: SSModel). Unknown method/space pairs
    raise ValueError.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u_arr = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    if space == "lie":
        pose, xi = state.as_arrays()
        p, x = lie_step_batch(pose[None], xi[None], u_arr[None], dt, method, model)
        return LieState.from_arrays(p[0], x[0])
    if space == "ss":
        q, dq = state
        qn, dqn = ss_step_batch(np.asarray(q, float)[None], np.asarray(dq, float)[None],
                                u_arr[None], dt, method, model)
        return qn[0], dqn[0]
    raise ValueError(f"unknown space {space!r}; pick 'lie' or 'ss'")


# ---------------------------------------------------------------------------
# high-accuracy reference


def reference_terminal_batch(pose, xi, u, horizon, model: LieModel, dt=1e-3,
                             richardson=False, drag=None):
    """Terminal (pose, twist) of the constant-input flow, used as oracle.

    Fourth-order body-frame integration at a fine step; at dt=1e-3 the
    truncation error sits below float64 roundoff for the speeds treated
    here. ``richardson=True`` re-runs at dt/2 and raises if the two
    answers differ by more than 1e-10, guarding against mis-use on stiffer
    inputs.
    """

    def run(h):
        n = max(1, round(horizon / h))
        hh = horizon / n
        p = np.array(pose, dtype=float, copy=True)
        x = np.array(xi, dtype=float, copy=True)
        uu = np.asarray(u, dtype=float)
        for _ in range(n):
            p, x = lie_step_batch(p, x, uu, hh, "cf4", model, drag=drag)
        return p, x

    p1, x1 = run(dt)
    if richardson:
        p2, x2 = run(dt / 2)
        gap = max(np.max(np.abs(se2.group_error(p1, p2))), np.max(np.abs(x1 - x2)))
        if gap > 1e-10:
            raise RuntimeError(f"reference self-check failed: halving dt moved the answer by {gap:.2e}")
        return p2, x2
    return p1, x1


def reference_trajectory(s0: LieState, u, horizon, model: LieModel, dt=1e-3,
                         richardson=True) -> LieState:
    """Single-state wrapper over :func:`reference_terminal_batch`."""
    pose, xi = s0.as_arrays()
    u_arr = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    p, x = reference_terminal_batch(pose[None], xi[None], u_arr[None], horizon, model,
                                    dt=dt, richardson=richardson)
    return LieState.from_arrays(p[0], x[0])


def kinetic_energy(xi, model: LieModel):
    xi = np.asarray(xi, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", xi, model.inertia, xi)
