"""Approximate Gaussian one-step predictors.

Both predictors roll the nominal model forward with forward-Euler substeps
and propagate a joint covariance over (pose error, twist error) by
finite-difference linearization of each substep (central differences,
step 1e-6). The body-frame predictor linearizes in left-invariant error
coordinates (pose error = log(nominal^-1 * perturbed)); the state-space
predictor linearizes in plain coordinate differences with the angle
wrapped.

Wrench-noise covariance enters per substep as an additive G Q G^T term
(the standard filter convention; default), which keeps the pose block
full rank. When a study needs the predictor to mirror the simulator's
noise-held-per-planning-step model exactly, ``per_substep=False`` carries
the wrench through an augmented error state (pose, twist, wrench) so its
effect accumulates coherently; that exact linearization is rank-deficient
in the pose block (two noise channels, three pose coordinates) and relies
on the regularization floor. Data-fit covariance baselines (uncentered
second moment, bias + MLE covariance) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, se2
from .dynamics import ControlInput, LieModel, LieState, SSModel
from .se2 import Pose, Twist

FRAME_LIE = "exp-coords-left"
FRAME_SS = "generalized"

FD_STEP = 1e-6


def regularize_cov(cov, d=3) -> np.ndarray:
    """Symmetrize and floor eigenvalues at 1e-12 x trace scale (never raises)."""
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    tr = np.einsum("...ii->...", sym)
    floor = 1e-12 * np.maximum(1.0, tr / d)
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, floor[..., None])
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True)
class NoiseConfig:
    """Wrench covariance assumed by a predictor (may mismatch the world)."""

    q_wrench: np.ndarray
    per_substep: bool = True

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q_wrench, dtype=float))
        if q.shape == (1, 2):
            q = np.diag(q[0])
        if q.shape != (2, 2) or np.any(np.linalg.eigvalsh(0.5 * (q + q.T)) < -1e-15):
            raise ValueError("wrench covariance must be 2x2 PSD")
        object.__setattr__(self, "q_wrench", 0.5 * (q + q.T))

    @classmethod
    def diagonal(cls, var_fx, var_tz, per_substep=True) -> "NoiseConfig":
        return cls(np.diag([var_fx, var_tz]), per_substep)


@dataclass(frozen=True)
class GaussianPrediction:
    """Expected next pose/twist with a 3x3 pose covariance.

    ``frame`` records the error coordinates of ``cov``: body-frame
    exponential coordinates or generalized-coordinate differences.
    """

    pose: Pose
    twist: Twist
    cov: np.ndarray
    frame: str

    def __post_init__(self):
        object.__setattr__(self, "cov", regularize_cov(self.cov))


def _ensemble_offsets(n_err, step):
    """Perturbation matrix (1 + 2*n_err, n_err): nominal, then +/- pairs."""
    offs = np.zeros((1 + 2 * n_err, n_err))
    for j in range(n_err):
        offs[1 + 2 * j, j] = step
        offs[2 + 2 * j, j] = -step
    return offs


def _fd_jacobian(values, step):
    """Central differences over an ensemble laid out as in _ensemble_offsets.

    values: (n, 1 + 2*m, k) -> (n, k, m)
    """
    plus = values[:, 1::2, :]
    minus = values[:, 2::2, :]
    return np.transpose((plus - minus) / (2.0 * step), (0, 2, 1))


class InEKFPredictor:
    """Body-frame predictor: Gaussian pose uncertainty on the algebra."""

    name = "inekf"
    frame = FRAME_LIE

    def __init__(self, model: LieModel, noise: NoiseConfig, substep_hz=60, dt_plan=0.5):
        self.model = model
        self.noise = noise
        self.n_substeps = round(substep_hz * dt_plan)
        self.dt = dt_plan / self.n_substeps

    def mean_batch(self, pose0, xi0, u):
        pose = np.array(pose0, dtype=float, copy=True)
        xi = np.array(xi0, dtype=float, copy=True)
        u = np.asarray(u, dtype=float)
        for _ in range(self.n_substeps):
            pose, xi = dynamics.lie_step_batch(pose, xi, u, self.dt, "fe", self.model)
        return pose, xi

    def predict_batch(self, pose0, xi0, u):
        pose0 = np.atleast_2d(np.asarray(pose0, dtype=float))
        xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        n = len(pose0)
        h = FD_STEP
        q_aug = self.noise.q_wrench

        if self.noise.per_substep:
            m = 6
            sigma = np.zeros((n, 6, 6))
        else:
            m = 8
            sigma = np.zeros((n, 8, 8))
            sigma[:, 6:, 6:] = q_aug

        offs = _ensemble_offsets(m, h)  # (cols, m)
        cols = len(offs)
        pose = pose0
        xi = xi0
        for _ in range(self.n_substeps):
            # fresh ensemble around the current nominal
            eps = offs[None, :, :3]
            pose_e = se2.compose(pose[:, None, :], se2.exp(eps))
            xi_e = xi[:, None, :] + offs[None, :, 3:6]
            if m == 8:
                u_e = u[:, None, :] + offs[None, :, 6:8]
            else:
                u_e = np.broadcast_to(u[:, None, :], (n, cols, 2))
            flat = lambda a: a.reshape(n * cols, -1)
            pe, xe = dynamics.lie_step_batch(flat(pose_e), flat(xi_e), flat(u_e),
                                             self.dt, "fe", self.model)
            pe = pe.reshape(n, cols, 3)
            xe = xe.reshape(n, cols, 3)
            pose_n, xi_n = pe[:, 0, :], xe[:, 0, :]
            eps_out = se2.log(se2.compose(se2.inverse(pose_n)[:, None, :], pe))
            dxi_out = xe - xi_n[:, None, :]
            jac = _fd_jacobian(np.concatenate([eps_out, dxi_out], axis=-1), h)  # (n, 6, m)
            if m == 8:
                f = np.zeros((n, 8, 8))
                f[:, :6, :] = jac
                f[:, 6:, 6:] = np.eye(2)
                sigma = f @ sigma @ np.swapaxes(f, -1, -2)
            else:
                f = jac[:, :, :6]
                g = self._noise_jacobian(pose, xi, u)
                sigma = f @ sigma @ np.swapaxes(f, -1, -2) + g @ q_aug @ np.swapaxes(g, -1, -2)
            pose, xi = pose_n, xi_n
        covs = regularize_cov(sigma[:, :3, :3])
        return pose, xi, covs

    def _noise_jacobian(self, pose, xi, u):
        """Per-substep wrench-to-error map for independent injection."""
        n = len(pose)
        h = FD_STEP
        offs = _ensemble_offsets(2, h)
        cols = len(offs)
        u_e = u[:, None, :] + offs[None, :, :]
        pose_e = np.broadcast_to(pose[:, None, :], (n, cols, 3)).reshape(-1, 3)
        xi_e = np.broadcast_to(xi[:, None, :], (n, cols, 3)).reshape(-1, 3)
        pe, xe = dynamics.lie_step_batch(pose_e, xi_e, u_e.reshape(-1, 2),
                                         self.dt, "fe", self.model)
        pe = pe.reshape(n, cols, 3)
        xe = xe.reshape(n, cols, 3)
        eps_out = se2.log(se2.compose(se2.inverse(pe[:, 0, :])[:, None, :], pe))
        dxi_out = xe - xe[:, 0, None, :]
        return _fd_jacobian(np.concatenate([eps_out, dxi_out], axis=-1), h)

    def predict(self, s0: LieState, u: ControlInput) -> GaussianPrediction:
        pose0, xi0 = s0.as_arrays()
        u_arr = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
        p, x, c = self.predict_batch(pose0[None], xi0[None], u_arr[None])
        return GaussianPrediction(Pose.from_array(p[0]), Twist.from_array(x[0]), c[0], self.frame)


class SSEKFPredictor:
    """Generalized-coordinate predictor: Gaussian uncertainty on (q, qdot)."""

    name = "ssekf"
    frame = FRAME_SS

    def __init__(self, model: SSModel, noise: NoiseConfig, substep_hz=60, dt_plan=0.5):
        self.model = model
        self.noise = noise
        self.n_substeps = round(substep_hz * dt_plan)
        self.dt = dt_plan / self.n_substeps

    @staticmethod
    def state_from_lie(pose0, xi0):
        """Matched start: q = pose coords, qdot = J_K(q)^+ xi."""
        pose0 = np.asarray(pose0, dtype=float)
        xi0 = np.asarray(xi0, dtype=float)
        jp = np.swapaxes(dynamics.body_jacobian(pose0), -1, -2)  # orthogonal inverse
        dq = (jp @ xi0[..., None])[..., 0]
        return pose0.copy(), dq

    def mean_batch(self, pose0, xi0, u):
        q, dq = self.state_from_lie(pose0, xi0)
        u = np.asarray(u, dtype=float)
        for _ in range(self.n_substeps):
            q, dq = dynamics.ss_step_batch(q, dq, u, self.dt, "fe", self.model)
        xi = (dynamics.body_jacobian(q) @ dq[..., None])[..., 0]
        return se2.kinematics_map(q), xi

    def predict_batch(self, pose0, xi0, u):
        pose0 = np.atleast_2d(np.asarray(pose0, dtype=float))
        xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        q, dq = self.state_from_lie(pose0, xi0)
        n = len(q)
        h = FD_STEP
        q_aug = self.noise.q_wrench

        if self.noise.per_substep:
            m = 6
            sigma = np.zeros((n, 6, 6))
        else:
            m = 8
            sigma = np.zeros((n, 8, 8))
            sigma[:, 6:, 6:] = q_aug

        offs = _ensemble_offsets(m, h)
        cols = len(offs)
        for _ in range(self.n_substeps):
            q_e = q[:, None, :] + offs[None, :, :3]
            dq_e = dq[:, None, :] + offs[None, :, 3:6]
            if m == 8:
                u_e = u[:, None, :] + offs[None, :, 6:8]
            else:
                u_e = np.broadcast_to(u[:, None, :], (n, cols, 2))
            flat = lambda a: a.reshape(n * cols, -1)
            qe, dqe = dynamics.ss_step_batch(flat(q_e), flat(dq_e), flat(u_e),
                                             self.dt, "fe", self.model)
            qe = qe.reshape(n, cols, 3)
            dqe = dqe.reshape(n, cols, 3)
            q_n, dq_n = qe[:, 0, :], dqe[:, 0, :]
            dq_out = qe - q_n[:, None, :]
            dq_out[..., 2] = se2.wrap_angle(dq_out[..., 2])
            ddq_out = dqe - dq_n[:, None, :]
            jac = _fd_jacobian(np.concatenate([dq_out, ddq_out], axis=-1), h)
            if m == 8:
                f = np.zeros((n, 8, 8))
                f[:, :6, :] = jac
                f[:, 6:, 6:] = np.eye(2)
                sigma = f @ sigma @ np.swapaxes(f, -1, -2)
            else:
                f = jac[:, :, :6]
                g = self._noise_jacobian(q, dq, u)
                sigma = f @ sigma @ np.swapaxes(f, -1, -2) + g @ q_aug @ np.swapaxes(g, -1, -2)
            q, dq = q_n, dq_n
        covs = regularize_cov(sigma[:, :3, :3])
        xi = (dynamics.body_jacobian(q) @ dq[..., None])[..., 0]
        return se2.kinematics_map(q), xi, covs

    def _noise_jacobian(self, q, dq, u):
        n = len(q)
        h = FD_STEP
        offs = _ensemble_offsets(2, h)
        cols = len(offs)
        u_e = u[:, None, :] + offs[None, :, :]
        q_e = np.broadcast_to(q[:, None, :], (n, cols, 3)).reshape(-1, 3)
        dq_e = np.broadcast_to(dq[:, None, :], (n, cols, 3)).reshape(-1, 3)
        qe, dqe = dynamics.ss_step_batch(q_e, dq_e, u_e.reshape(-1, 2), self.dt, "fe", self.model)
        qe = qe.reshape(n, cols, 3)
        dqe = dqe.reshape(n, cols, 3)
        dq_out = qe - qe[:, 0, None, :]
        dq_out[..., 2] = se2.wrap_angle(dq_out[..., 2])
        ddq_out = dqe - dqe[:, 0, None, :]
        return _fd_jacobian(np.concatenate([dq_out, ddq_out], axis=-1), h)

    def predict(self, s0: LieState, u: ControlInput) -> GaussianPrediction:
        pose0, xi0 = s0.as_arrays()
        u_arr = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
        p, x, c = self.predict_batch(pose0[None], xi0[None], u_arr[None])
        return GaussianPrediction(Pose.from_array(p[0]), Twist.from_array(x[0]), c[0], self.frame)


# ---------------------------------------------------------------------------
# data-fit covariance baselines


def prediction_errors(records, predictor) -> np.ndarray:
    """Body-frame one-step errors log(pred^-1 truth) for every record."""
    if not records:
        raise ValueError("no records")
    pose0 = np.array([r.s0.pose.as_array() for r in records])
    xi0 = np.array([r.s0.twist.as_array() for r in records])
    u = np.array([r.u_des.as_array() for r in records])
    truth = np.array([r.s1.pose.as_array() for r in records])
    pred_pose, _ = predictor.mean_batch(pose0, xi0, u)
    return se2.group_error(pred_pose, truth)


def second_moment_cov(records, predictor) -> np.ndarray:
    """Uncentered second moment of the one-step errors (PSD, regularized)."""
    e = prediction_errors(records, predictor)
    return regularize_cov(e.T @ e / len(e))


def mle_bias_cov(records, predictor) -> tuple[np.ndarray, np.ndarray]:
    """Mean error (bias) and centered covariance of the one-step errors."""
    e = prediction_errors(records, predictor)
    b = e.mean(axis=0)
    centered = e - b
    return b, regularize_cov(centered.T @ centered / len(e))
