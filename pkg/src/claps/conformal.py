"""Nonconformity scores, split-conformal calibration, and membership tests.

Calibration ranks per-record scores and takes the ceil((1-alpha)(n+1))-th
smallest as the radius q_hat; the region is closed (score <= q_hat), which
keeps the order-statistic guarantee and makes boundary cases
deterministic. For Mahalanobis-type scores the calibrated region is
equivalently the chi-square-level ellipsoid of the covariance scaled by
zeta = q_hat^2 / chi2_quantile(alpha, 3).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import se2
from .estimate import FRAME_LIE, FRAME_SS, GaussianPrediction


class ScoreKind(str, enum.Enum):
    """How the disagreement between a prediction and an outcome is scored."""

    CLAPS_MAHALANOBIS_LIE = "claps-mahalanobis-lie"
    MAHALANOBIS_SS = "mahalanobis-ss"
    L2_SS = "l2-ss"
    L2_LIE = "l2-lie"


LIE_KINDS = (ScoreKind.CLAPS_MAHALANOBIS_LIE, ScoreKind.L2_LIE)
SS_KINDS = (ScoreKind.MAHALANOBIS_SS, ScoreKind.L2_SS)
MAHALANOBIS_KINDS = (ScoreKind.CLAPS_MAHALANOBIS_LIE, ScoreKind.MAHALANOBIS_SS)


def chi2_quantile(alpha: float, d: int) -> float:
    """x with P(chi2_d <= x) = 1 - alpha, inverted from the regularized
    lower incomplete gamma CDF to |CDF(x) - (1-alpha)| < 1e-10."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    target = 1.0 - alpha

    def f(x):
        return special.gammainc(d / 2.0, x / 2.0) - target

    hi = float(d)
    while f(hi) < 0.0:
        hi *= 2.0
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-13, rtol=8.9e-16))


def _error_vectors(kind: ScoreKind, poses, pred: GaussianPrediction) -> np.ndarray:
    """Per-query error vectors in the score's coordinates, shape (n, 3)."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    mean = pred.pose.as_array()
    if kind in LIE_KINDS:
        return se2.group_error(np.broadcast_to(mean, poses.shape), poses)
    dq = se2.kinematics_inv(poses) - se2.kinematics_inv(mean)
    dq[..., 2] = se2.wrap_angle(dq[..., 2])
    return dq


def _check_frame(kind: ScoreKind, pred: GaussianPrediction) -> None:
    if kind is ScoreKind.CLAPS_MAHALANOBIS_LIE and pred.frame != FRAME_LIE:
        raise ValueError("body-frame Mahalanobis score needs an exp-coordinate covariance")
    if kind is ScoreKind.MAHALANOBIS_SS and pred.frame != FRAME_SS:
        raise ValueError("state-space Mahalanobis score needs a generalized-coordinate covariance")


def score_batch(kind: ScoreKind, poses, pred: GaussianPrediction) -> np.ndarray:
    kind = ScoreKind(kind)
    _check_frame(kind, pred)
    e = _error_vectors(kind, poses, pred)
    if kind in MAHALANOBIS_KINDS:
        solved = np.linalg.solve(pred.cov, e.T).T
        return np.sqrt(np.einsum("...i,...i->...", e, solved))
    return np.linalg.norm(e, axis=-1)


def score(kind: ScoreKind, truth, pred: GaussianPrediction) -> float:
    """Nonconformity of one outcome pose against a Gaussian prediction."""
    truth_arr = truth.as_array() if isinstance(truth, se2.Pose) else np.asarray(truth, dtype=float)
    return float(score_batch(kind, truth_arr[None], pred)[0])


def scores_pairwise(kind: ScoreKind, truths, means, covs=None) -> np.ndarray:
    """One score per (truth, prediction) pair; the bulk path used by
    calibration and evaluation pipelines. ``covs`` is (n, 3, 3) and only
    consulted for Mahalanobis kinds; frame bookkeeping is the caller's."""
    kind = ScoreKind(kind)
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if kind in LIE_KINDS:
        e = se2.group_error(means, truths)
    else:
        e = se2.kinematics_inv(truths) - se2.kinematics_inv(means)
        e[..., 2] = se2.wrap_angle(e[..., 2])
    if kind in MAHALANOBIS_KINDS:
        solved = np.linalg.solve(covs, e[..., None])[..., 0]
        return np.sqrt(np.einsum("...i,...i->...", e, solved))
    return np.linalg.norm(e, axis=-1)


def split_quantile(scores, alpha: float) -> float:
    """ceil((1-alpha)(n+1))-th smallest score; +inf when that rank exceeds n."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no calibration scores")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    rank = math.ceil((1.0 - alpha) * (scores.size + 1))
    if rank > scores.size:
        return math.inf
    return float(np.sort(scores)[rank - 1])


@dataclass(frozen=True)
class CalibrationResult:
    """Output of offline calibration; immutable and JSON-serializable."""

    alpha: float
    n_cal: int
    q_hat: float
    zeta: float
    score_kind: ScoreKind
    chi2_q: float
    vacuous: bool = False
    fingerprints: dict = field(default_factory=dict)

    @classmethod
    def uncalibrated(cls, alpha: float, kind: ScoreKind, d: int = 3) -> "CalibrationResult":
        """Gaussian chi-square region expressed in score units (zeta = 1);
        used by the baselines that skip conformal calibration."""
        if ScoreKind(kind) not in MAHALANOBIS_KINDS:
            raise ValueError("uncalibrated regions are only defined for Mahalanobis scores")
        c = chi2_quantile(alpha, d)
        return cls(alpha=alpha, n_cal=0, q_hat=math.sqrt(c), zeta=1.0,
                   score_kind=ScoreKind(kind), chi2_q=c)

    def to_json(self) -> str:
        payload = {
            "alpha": self.alpha, "n_cal": self.n_cal, "q_hat": self.q_hat,
            "zeta": self.zeta, "score_kind": self.score_kind.value,
            "chi2_q": self.chi2_q, "vacuous": self.vacuous,
            "fingerprints": self.fingerprints,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        d = json.loads(text)
        d["score_kind"] = ScoreKind(d["score_kind"])
        return cls(**d)


def calibrate(predictor, records, alpha: float, kind: ScoreKind,
              fingerprints=None) -> CalibrationResult:
    """Offline split-conformal calibration over transition records.

    ``predictor`` is either a callable (s0, u) -> GaussianPrediction or an
    object exposing ``predict_batch`` (used in bulk when available); it
    must be fixed before seeing these records.
    """
    kind = ScoreKind(kind)
    if not records:
        raise ValueError("calibration dataset is empty")
    truths = np.array([r.s1.pose.as_array() for r in records])
    if hasattr(predictor, "predict_batch"):
        pose0 = np.array([r.s0.pose.as_array() for r in records])
        xi0 = np.array([r.s0.twist.as_array() for r in records])
        u = np.array([r.u_des.as_array() for r in records])
        means, _, covs = predictor.predict_batch(pose0, xi0, u)
        scores = scores_pairwise(kind, truths, means, covs)
    else:
        scores = np.array([
            score(kind, r.s1.pose, predictor(r.s0, r.u_des)) for r in records
        ])
    return calibrate_from_scores(scores, alpha, kind, fingerprints)


def calibrate_from_scores(scores, alpha: float, kind: ScoreKind,
                          fingerprints=None) -> CalibrationResult:
    """Calibration when per-record scores are already available (the batched
    pipelines compute them in bulk)."""
    kind = ScoreKind(kind)
    q_hat = split_quantile(scores, alpha)
    chi2_q = chi2_quantile(alpha, 3)
    vacuous = math.isinf(q_hat)
    zeta = math.inf if vacuous else q_hat * q_hat / chi2_q
    return CalibrationResult(alpha=alpha, n_cal=int(len(scores)), q_hat=q_hat,
                             zeta=zeta, score_kind=kind, chi2_q=chi2_q,
                             vacuous=vacuous, fingerprints=fingerprints or {})


def contains_batch(poses, pred: GaussianPrediction, cal: CalibrationResult) -> np.ndarray:
    """Closed-region membership for many query poses against one prediction."""
    if cal.vacuous:
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        return np.ones(len(poses), dtype=bool)
    return score_batch(cal.score_kind, poses, pred) <= cal.q_hat


def contains(query, pred: GaussianPrediction, cal: CalibrationResult) -> bool:
    query_arr = query.as_array() if isinstance(query, se2.Pose) else np.asarray(query, dtype=float)
    return bool(contains_batch(query_arr[None], pred, cal)[0])
