import numpy as np
import pytest

from claps import dynamics, se2
from claps.dynamics import (
    ControlInput,
    LieModel,
    LieState,
    SSModel,
    body_jacobian,
    convert_constraint,
    convert_inertia,
    convert_input,
    eps_accel,
    eps_accel_multiplier,
    projection_matrix,
    ss_accel,
    unicycle_lie_model,
    unicycle_ss_model,
)
from claps.se2 import Pose, Twist


@pytest.fixture(scope="module")
def lie_model():
    return unicycle_lie_model()


@pytest.fixture(scope="module")
def ss_model():
    return unicycle_ss_model()


def constrained_twists(rng, n):
    """Random twists with zero lateral component."""
    xi = rng.normal(size=(n, 3))
    xi[:, 1] = 0.0
    return xi


# ---------------------------------------------------------------------------
# body Jacobian and conversions


def test_body_jacobian_at_zero_is_identity():
    assert np.allclose(body_jacobian([0.0, 0.0, 0.0]), np.eye(3))


def test_body_jacobian_quarter_turn():
    expected = np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 1]], dtype=float)
    assert np.allclose(body_jacobian([0.0, 0.0, np.pi / 2]), expected, atol=1e-15)


def test_body_jacobian_full_rank_everywhere():
    for theta in np.linspace(-np.pi, np.pi, 17):
        assert np.linalg.matrix_rank(body_jacobian([0, 0, theta])) == 3


def test_body_jacobian_matches_finite_difference_twist():
    # along a smooth trajectory q(t), J_K(q) qdot must match the twist
    # vee(g^-1 gdot) obtained by finite differences of the pose, to O(h)
    def traj(t):
        return np.array([np.sin(t), 0.5 * np.cos(2 * t), 0.3 * t + 0.2 * np.sin(t)])

    def traj_dot(t):
        return np.array([np.cos(t), -np.sin(2 * t), 0.3 + 0.2 * np.cos(t)])

    h = 1e-6
    for t in np.linspace(0.1, 3.0, 7):
        q = traj(t)
        xi_jac = body_jacobian(q) @ traj_dot(t)
        g0 = Pose.from_array(traj(t - h)).matrix()
        g1 = Pose.from_array(traj(t + h)).matrix()
        g = Pose.from_array(q).matrix()
        xi_fd = se2.vee(np.linalg.solve(g, (g1 - g0) / (2 * h))[None])[0]
        assert np.allclose(xi_jac, xi_fd, atol=1e-6)


def test_convert_constraint_unicycle(ss_model):
    for theta in np.linspace(-3, 3, 9):
        a = convert_constraint(ss_model.constraint_row(theta), [0.0, 0.0, theta])
        assert np.allclose(a, [[0.0, 1.0, 0.0]], atol=1e-14)


def test_convert_input_unicycle(ss_model):
    for theta in (-2.0, 0.0, 1.3):
        b = convert_input(ss_model.input_map(theta), [0.0, 0.0, theta])
        assert np.allclose(b, [[1, 0], [0, 0], [0, 1]], atol=1e-14)


def test_convert_inertia_diagonal_invariant(ss_model):
    for theta in (-2.0, 0.4, 2.9):
        m = convert_inertia(ss_model.inertia, [0.0, 0.0, theta])
        assert np.allclose(m, ss_model.inertia, atol=1e-13)


# ---------------------------------------------------------------------------
# projector


def test_projection_unicycle_elementary(lie_model):
    e2 = np.zeros((3, 3))
    e2[1, 1] = 1.0
    assert np.allclose(lie_model.proj, e2, atol=1e-14)


def test_projection_idempotent_random_spd():
    rng = np.random.default_rng(11)
    for _ in range(20):
        w = rng.normal(size=(3, 3))
        m = w @ w.T + 3 * np.eye(3)
        a = rng.normal(size=(1, 3))
        p, ip = projection_matrix(m, a)
        assert np.allclose(p @ p, p, atol=1e-12)
        assert np.allclose(p + ip, np.eye(3), atol=1e-15)


def test_projection_annihilates_constraint_direction():
    rng = np.random.default_rng(12)
    for _ in range(20):
        w = rng.normal(size=(3, 3))
        m = w @ w.T + 3 * np.eye(3)
        a = rng.normal(size=(1, 3))
        _, ip = projection_matrix(m, a)
        v = rng.normal(size=3)
        assert abs(a @ ip @ v) < 1e-12


def test_projection_rejects_dependent_rows():
    with pytest.raises(ValueError):
        projection_matrix(np.eye(3), np.array([[0, 1, 0], [0, 2, 0]], dtype=float))


# ---------------------------------------------------------------------------
# accelerations


def test_eps_accel_equilibrium(lie_model):
    assert np.allclose(eps_accel(np.zeros(3), np.zeros(2), lie_model), 0.0)


def test_eps_accel_straight_coasting(lie_model):
    # forward coasting: the Coriolis force is purely lateral and projected out
    assert np.allclose(eps_accel([0.8, 0.0, 0.0], np.zeros(2), lie_model), 0.0, atol=1e-15)


def test_eps_accel_arc_coasting_lateral_exactly_zero(lie_model):
    acc = eps_accel([0.8, 0.0, 0.6], np.zeros(2), lie_model)
    assert acc[1] == 0.0
    assert np.allclose(acc, eps_accel_multiplier([0.8, 0.0, 0.6], np.zeros(2), lie_model), atol=1e-15)


def test_eps_accel_matches_multiplier_form_random_models():
    rng = np.random.default_rng(13)
    for _ in range(50):
        w = rng.normal(size=(3, 3))
        m = w @ w.T + 3 * np.eye(3)
        a_row = rng.normal(size=(1, 3))
        model = LieModel(m, a_row, rng.normal(size=(3, 2)))
        # constrained twist: project a random vector onto ker(A)
        v = rng.normal(size=3)
        xi = v - a_row[0] * (a_row[0] @ v) / (a_row[0] @ a_row[0])
        u = rng.normal(size=2)
        lhs = eps_accel(xi, u, model)
        rhs = eps_accel_multiplier(xi, u, model)
        assert np.max(np.abs(lhs - rhs)) < 1e-12
        assert abs(a_row[0] @ lhs) < 1e-12  # constraint preserved in rate


def test_ss_accel_rest(ss_model):
    assert np.allclose(ss_accel(np.zeros(3), np.zeros(3), np.zeros(2), ss_model), 0.0)


def test_ss_accel_straight_line(ss_model):
    f = 1.4
    acc = ss_accel([0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [f, 0.0], ss_model)
    assert np.allclose(acc, [f / ss_model.inertia[0, 0], 0.0, 0.0], atol=1e-12)


def test_ss_accel_consistent_with_eps_accel(lie_model, ss_model):
    # qddot = d/dt(J_K^+ xi) = Jdot_K^+ xi + J_K^+ xidot on constrained states
    rng = np.random.default_rng(14)
    for _ in range(30):
        q = np.array([rng.normal(), rng.normal(), rng.uniform(-3, 3)])
        xi = np.array([rng.normal(), 0.0, rng.normal()])
        u = rng.normal(size=2)
        c, s = np.cos(q[2]), np.sin(q[2])
        jp = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)  # J_K^+
        dq = jp @ xi
        xidot = eps_accel(xi, u, lie_model)
        thetadot = xi[2]
        jp_dot = thetadot * np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0]], dtype=float)
        qddot_lie = jp_dot @ xi + jp @ xidot
        qddot_ss = ss_accel(q, dq, u, ss_model)
        assert np.max(np.abs(qddot_lie - qddot_ss)) < 1e-9


# ---------------------------------------------------------------------------
# steppers


def test_step_rejects_unknown_pairings(lie_model, ss_model):
    s = LieState(Pose.identity(), Twist(0.3, 0.0, 0.0))
    with pytest.raises(ValueError):
        dynamics.step(s, ControlInput(0, 0), 0.1, "rk4", "lie", lie_model)
    with pytest.raises(ValueError):
        dynamics.step((np.zeros(3), np.zeros(3)), ControlInput(0, 0), 0.1, "cf4", "ss", ss_model)
    with pytest.raises(ValueError):
        dynamics.step(s, ControlInput(0, 0), 0.1, "fe", "nope", lie_model)
    with pytest.raises(ValueError):
        dynamics.step(s, ControlInput(0, 0), -0.1, "fe", "lie", lie_model)


def test_lie_fe_pure_forward(lie_model):
    s = LieState(Pose.identity(), Twist(0.4, 0.0, 0.0))
    out = dynamics.step(s, ControlInput(0.0, 0.0), 0.25, "fe", "lie", lie_model)
    assert np.allclose(out.pose.as_array(), [0.1, 0.0, 0.0], atol=1e-15)
    assert np.allclose(out.twist.as_array(), [0.4, 0.0, 0.0], atol=1e-15)


def test_cf4_exact_on_constant_twist(lie_model):
    # coasting arc has zero twist rate, so the flow is exp(dt * xi) and a
    # single CF4 step reproduces it to machine precision
    xi = np.array([0.5, 0.0, 0.7])
    dt = 0.37
    s = LieState(Pose(0.2, -0.1, 0.3), Twist.from_array(xi))
    out = dynamics.step(s, ControlInput(0.0, 0.0), dt, "cf4", "lie", lie_model)
    expected = se2.compose(s.pose.as_array(), se2.exp(dt * xi))
    assert np.max(np.abs(out.pose.as_array() - expected)) < 1e-12
    assert np.max(np.abs(out.twist.as_array() - xi)) < 1e-12


def test_constraint_preserved_all_lie_methods(lie_model):
    rng = np.random.default_rng(15)
    for method in dynamics.LIE_METHODS:
        pose = np.zeros((4, 3))
        xi = constrained_twists(rng, 4)
        u = rng.normal(size=(4, 2))
        for _ in range(50):
            pose, xi = dynamics.lie_step_batch(pose, xi, u, 0.02, method, lie_model)
        assert np.max(np.abs(lie_model.constraint @ xi.T)) < 1e-9


def test_ss_lie_trajectory_agreement(lie_model, ss_model):
    # matched starts, deterministic input: terminal poses agree to within
    # the integrators' own error at each order
    rng = np.random.default_rng(16)
    cases = [("fe", "fe", 5e-2), ("heun", "heun", 2e-3), ("rk4", "cf4", 1e-6)]
    for ss_m, lie_m, tol in cases:
        xi0 = np.array([0.3, 0.0, 0.4])
        u = np.array([0.2, 0.01])
        q, dq = np.zeros((1, 3)), (body_jacobian([0, 0, 0]).T @ xi0)[None]
        pose, xi = np.zeros((1, 3)), xi0[None]
        dt, n = 0.01, 100
        for _ in range(n):
            q, dq = dynamics.ss_step_batch(q, dq, u[None], dt, ss_m, ss_model)
            pose, xi = dynamics.lie_step_batch(pose, xi, u[None], dt, lie_m, lie_model)
        err = np.max(np.abs(se2.group_error(se2.kinematics_map(q), pose)))
        assert err < tol, (ss_m, lie_m, err)


def test_energy_drift_bounded_by_order(lie_model):
    # no input, no drag: continuous dynamics conserve kinetic energy, so
    # integrator drift must shrink with method order
    xi0 = np.array([[0.5, 0.0, 0.8]])
    drift = {}
    for method in ("fe", "rk2", "cf4"):
        pose, xi = np.zeros((1, 3)), xi0.copy()
        for _ in range(200):
            pose, xi = dynamics.lie_step_batch(pose, xi, np.zeros((1, 2)), 0.01, method, lie_model)
        e0 = dynamics.kinetic_energy(xi0, lie_model)[0]
        e1 = dynamics.kinetic_energy(xi, lie_model)[0]
        drift[method] = abs(e1 - e0) / e0
    assert drift["fe"] < 1e-2
    assert drift["rk2"] <= drift["fe"] + 1e-12
    assert drift["cf4"] <= drift["rk2"] + 1e-12
    assert drift["cf4"] < 1e-10


# ---------------------------------------------------------------------------
# reference oracle


def test_reference_constant_twist_exact(lie_model):
    xi = np.array([0.4, 0.0, 0.5])
    s = LieState(Pose.identity(), Twist.from_array(xi))
    out = dynamics.reference_trajectory(s, ControlInput(0.0, 0.0), 1.0, lie_model)
    assert np.max(np.abs(out.pose.as_array() - se2.exp(xi))) < 1e-11


def test_reference_richardson_self_check(lie_model):
    s = LieState(Pose.identity(), Twist(0.3, 0.0, 0.2))
    # richardson=True raises if halving the step moves the answer > 1e-10
    dynamics.reference_trajectory(s, ControlInput(0.3, 0.5), 1.0, lie_model, richardson=True)


def test_reference_agrees_with_coarse_cf4(lie_model):
    rng = np.random.default_rng(17)
    for _ in range(10):
        xi0 = np.array([rng.uniform(0.1, 0.5), 0.0, rng.uniform(0, 0.5)])
        u = np.array([rng.uniform(0, 0.5) * 2.8, rng.uniform(0, 2) * 0.007])
        s = LieState(Pose.identity(), Twist.from_array(xi0))
        ref = dynamics.reference_trajectory(s, u, 1.0, lie_model, richardson=False)
        pose, xi = np.zeros((1, 3)), xi0[None]
        for _ in range(1000):
            pose, xi = dynamics.lie_step_batch(pose, xi, u[None], 1e-3, "cf4", lie_model)
        assert np.max(np.abs(se2.group_error(ref.pose.as_array(), pose[0]))) < 1e-9


# ---------------------------------------------------------------------------
# convergence (smoke level; the full study runs in the acceptance suite)


def measured_order(space, method, dts, model):
    xi0 = np.array([0.3, 0.0, 0.4])
    u = np.array([0.3 * 2.8, 0.5 * 0.007])
    lie = unicycle_lie_model()
    ref_pose, _ = dynamics.reference_terminal_batch(
        np.zeros((1, 3)), xi0[None], u[None], 1.0, lie, richardson=False)
    errs = []
    for dt in dts:
        n = round(1.0 / dt)
        h = 1.0 / n  # nearest step that divides the horizon exactly
        if space == "lie":
            pose, xi = np.zeros((1, 3)), xi0[None]
            for _ in range(n):
                pose, xi = dynamics.lie_step_batch(pose, xi, u[None], h, method, model)
        else:
            q, dq = np.zeros((1, 3)), (body_jacobian([0, 0, 0]).T @ xi0)[None]
            for _ in range(n):
                q, dq = dynamics.ss_step_batch(q, dq, u[None], h, method, model)
            pose = se2.kinematics_map(q)
        errs.append(np.linalg.norm(se2.group_error(ref_pose, pose)))
    errs = np.asarray(errs)
    keep = errs > 1e-12  # below this the measurement is roundoff, not truncation
    slope, _ = np.polyfit(np.log(np.asarray(dts)[keep]), np.log(errs[keep]), 1)
    return slope


@pytest.mark.parametrize(
    "space,method,lo,hi",
    [
        ("lie", "fe", 0.8, 1.2),
        ("lie", "heun", 1.8, 2.2),
        ("lie", "cf4", 3.5, 4.5),
        ("ss", "rk4", 3.5, 4.5),
    ],
)
def test_measured_order_smoke(space, method, lo, hi, lie_model, ss_model):
    model = lie_model if space == "lie" else ss_model
    slope = measured_order(space, method, [3e-3, 1e-2, 3e-2, 1e-1], model)
    assert lo <= slope <= hi, slope
