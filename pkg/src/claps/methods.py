"""The eight benchmarked uncertainty methods.

Every method shares the same expected next pose (the body-frame
forward-Euler rollout of the nominal model) and the same assumed wrench
noise; they differ in how uncertainty is represented and calibrated:

* SS-EKF / InEKF: chi-square ellipsoid of the propagated covariance in
  generalized / exponential coordinates, no calibration;
* InEKF+2M / InEKF+MLE: the propagated covariance replaced by a constant
  data-fit matrix (uncentered second moment, or bias + centered MLE);
* SS-PP+CP / Lie-PP+CP: conformal balls around the point prediction;
* SS-EKF+CP: conformal Mahalanobis calibration in generalized coordinates;
* CLAPS: conformal Mahalanobis calibration in exponential coordinates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import dynamics, se2
from .conformal import (
    CalibrationResult,
    ScoreKind,
    calibrate_from_scores,
    scores_pairwise,
)
from .dynamics import ControlInput, LieState
from .estimate import (
    FRAME_LIE,
    FRAME_SS,
    GaussianPrediction,
    InEKFPredictor,
    NoiseConfig,
    SSEKFPredictor,
    mle_bias_cov,
    second_moment_cov,
)
from .se2 import Pose, Twist


@dataclass(frozen=True)
class MethodSpec:
    name: str
    score_kind: ScoreKind
    conformal: bool
    cov_source: str  # "inekf" | "ssekf" | "2m" | "mle"


METHODS = {
    m.name: m
    for m in (
        MethodSpec("SS-EKF", ScoreKind.MAHALANOBIS_SS, False, "ssekf"),
        MethodSpec("InEKF", ScoreKind.CLAPS_MAHALANOBIS_LIE, False, "inekf"),
        MethodSpec("InEKF+2M", ScoreKind.CLAPS_MAHALANOBIS_LIE, False, "2m"),
        MethodSpec("InEKF+MLE", ScoreKind.CLAPS_MAHALANOBIS_LIE, False, "mle"),
        MethodSpec("SS-PP+CP", ScoreKind.L2_SS, True, "ssekf"),
        MethodSpec("Lie-PP+CP", ScoreKind.L2_LIE, True, "inekf"),
        MethodSpec("SS-EKF+CP", ScoreKind.MAHALANOBIS_SS, True, "ssekf"),
        MethodSpec("CLAPS", ScoreKind.CLAPS_MAHALANOBIS_LIE, True, "inekf"),
    )
}

METHOD_NAMES = list(METHODS)


def method_slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.lower())


def dataset_fingerprint(records) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(np.concatenate([r.s0.pose.as_array(), r.s0.twist.as_array(),
                                 r.u_des.as_array(), r.s1.pose.as_array(),
                                 r.s1.twist.as_array()]).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class BasePredictions:
    """Shared per-case prediction ingredients, batched over cases."""

    mean_pose: np.ndarray  # (n, 3) body-frame FE rollout, shared by all methods
    mean_twist: np.ndarray
    lie_cov: np.ndarray  # (n, 3, 3) exponential-coordinate covariance
    ss_cov: np.ndarray  # (n, 3, 3) generalized-coordinate covariance


class MethodBank:
    """Builds predictions and calibrations for any subset of METHODS."""

    def __init__(self, noise: NoiseConfig, model_inertia_diag=dynamics.JETBOT_INERTIA,
                 substep_hz=60, dt_plan=0.5):
        self.lie_predictor = InEKFPredictor(
            dynamics.unicycle_lie_model(model_inertia_diag), noise, substep_hz, dt_plan)
        self.ss_predictor = SSEKFPredictor(
            dynamics.unicycle_ss_model(model_inertia_diag), noise, substep_hz, dt_plan)
        self.q_2m = None
        self.mle_bias = None
        self.q_mle = None

    # -- data-fit covariances -------------------------------------------------

    def fit_data_covariances(self, records) -> None:
        self.q_2m = second_moment_cov(records, self.lie_predictor)
        self.mle_bias, self.q_mle = mle_bias_cov(records, self.lie_predictor)

    def set_data_covariances(self, q_2m, mle_bias, q_mle) -> None:
        self.q_2m = np.asarray(q_2m, dtype=float)
        self.mle_bias = np.asarray(mle_bias, dtype=float)
        self.q_mle = np.asarray(q_mle, dtype=float)

    # -- predictions -----------------------------------------------------------

    def base_predictions(self, pose0, xi0, u) -> BasePredictions:
        pose0 = np.atleast_2d(np.asarray(pose0, dtype=float))
        xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        mean_pose, mean_twist, lie_cov = self.lie_predictor.predict_batch(pose0, xi0, u)
        _, _, ss_cov = self.ss_predictor.predict_batch(pose0, xi0, u)
        return BasePredictions(mean_pose, mean_twist, lie_cov, ss_cov)

    def base_for_records(self, records) -> BasePredictions:
        pose0 = np.array([r.s0.pose.as_array() for r in records])
        xi0 = np.array([r.s0.twist.as_array() for r in records])
        u = np.array([r.u_des.as_array() for r in records])
        return self.base_predictions(pose0, xi0, u)

    def _require_fit(self, spec: MethodSpec):
        if spec.cov_source in ("2m", "mle") and self.q_2m is None:
            raise ValueError(f"{spec.name} needs data-fit covariances; call fit_data_covariances")

    def method_arrays(self, name: str, base: BasePredictions):
        """Per-method (means, covs, frame) arrays over the batch."""
        spec = METHODS[name]
        self._require_fit(spec)
        n = len(base.mean_pose)
        if spec.cov_source == "ssekf":
            return base.mean_pose, base.ss_cov, FRAME_SS
        if spec.cov_source == "inekf":
            return base.mean_pose, base.lie_cov, FRAME_LIE
        if spec.cov_source == "2m":
            return base.mean_pose, np.broadcast_to(self.q_2m, (n, 3, 3)), FRAME_LIE
        means = se2.compose(base.mean_pose, se2.exp(self.mle_bias))
        return means, np.broadcast_to(self.q_mle, (n, 3, 3)), FRAME_LIE

    def prediction(self, name: str, base: BasePredictions, i: int = 0) -> GaussianPrediction:
        means, covs, frame = self.method_arrays(name, base)
        return GaussianPrediction(Pose.from_array(means[i]),
                                  Twist.from_array(base.mean_twist[i]), covs[i], frame)

    def predict_one(self, name: str, s0: LieState, u: ControlInput) -> GaussianPrediction:
        pose0, xi0 = s0.as_arrays()
        base = self.base_predictions(pose0[None], xi0[None], u.as_array()[None])
        return self.prediction(name, base)

    # -- calibration ------------------------------------------------------------

    def calibration_scores(self, name: str, records, base: BasePredictions = None) -> np.ndarray:
        spec = METHODS[name]
        if base is None:
            base = self.base_for_records(records)
        truths = np.array([r.s1.pose.as_array() for r in records])
        means, covs, _ = self.method_arrays(name, base)
        return scores_pairwise(spec.score_kind, truths, means, covs)

    def calibrate_method(self, name: str, records, alpha: float,
                         base: BasePredictions = None,
                         fingerprints=None) -> CalibrationResult:
        """Split-conformal result for CP methods; the chi-square region in
        score units for the uncalibrated baselines."""
        spec = METHODS[name]
        self._require_fit(spec)
        if not spec.conformal:
            return CalibrationResult.uncalibrated(alpha, spec.score_kind)
        scores = self.calibration_scores(name, records, base)
        return calibrate_from_scores(scores, alpha, spec.score_kind, fingerprints)
