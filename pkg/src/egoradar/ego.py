"""3D radar ego-motion from a single-frame point cloud.

Static detections satisfy ``v_r = -(sin az cos el, cos az cos el, sin el) . v``.
RANSAC separates them from movers, a pseudoinverse least-squares fit gives
the initial velocity, and an orthogonal-distance refinement treats the
measured angles as noisy too.  Doppler aliasing is handled by testing a
small set of global fold indices ``k`` (true = measured - 2 k v_max).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class EgoMotionError(RuntimeError):
    pass


class NoConsensusError(EgoMotionError):
    pass


class OdrError(EgoMotionError):
    pass


@dataclass(frozen=True)
class OdrWeights:
    """Residual weights for the angle terms relative to the Doppler term.

    ``eta1_sq = sigma_v**2 / sigma_theta**2`` and
    ``eta2_sq = sigma_v**2 / sigma_phi**2``.  Angle sigmas are radians unless
    built with ``angle_unit="deg"``.
    """

    sigma_v: float = 0.085
    sigma_theta: float = 0.25
    sigma_phi: float = 0.25

    def __post_init__(self):
        if min(self.sigma_v, self.sigma_theta, self.sigma_phi) <= 0:
            raise ValueError("ODR sigmas must be strictly positive")

    @classmethod
    def from_sigmas(cls, sigma_v: float, sigma_theta: float, sigma_phi: float, angle_unit: str = "rad"):
        if angle_unit == "deg":
            sigma_theta, sigma_phi = np.deg2rad(sigma_theta), np.deg2rad(sigma_phi)
        elif angle_unit != "rad":
            raise ValueError(f"angle_unit must be 'rad' or 'deg', got {angle_unit!r}")
        return cls(float(sigma_v), float(sigma_theta), float(sigma_phi))

    @property
    def eta1_sq(self) -> float:
        return self.sigma_v ** 2 / self.sigma_theta ** 2

    @property
    def eta2_sq(self) -> float:
        return self.sigma_v ** 2 / self.sigma_phi ** 2


@dataclass(frozen=True)
class RansacParams:
    sample_size: int = 4
    inlier_threshold_m_per_s: float = 0.1
    max_trials: int = 2000
    rng_seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise ValueError("sample_size must be >= 3")
        if not self.inlier_threshold_m_per_s > 0:
            raise ValueError("inlier threshold must be > 0")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")


@dataclass(frozen=True)
class OdrOptions:
    step_tol: float = 1e-8
    rel_decrease_tol: float = 1e-10
    max_iter: int = 200


@dataclass(frozen=True)
class EgoParams:
    ransac: RansacParams = RansacParams()
    weights: OdrWeights = OdrWeights()
    odr: OdrOptions = OdrOptions()
    candidate_ks: tuple[int, ...] = (-1, 0, 1)
    low_elevation_rad: float = 1e-3


@dataclass
class OdrResult:
    velocity: np.ndarray
    azimuths: np.ndarray
    elevations: np.ndarray
    objective: float
    initial_objective: float
    iterations: int
    converged: bool
    no_decrease: bool = False


@dataclass
class EgoMotionEstimate:
    velocity: np.ndarray
    ambiguity_k: int
    inlier_indices: np.ndarray
    refined_azimuths: np.ndarray
    refined_elevations: np.ndarray
    refined_dopplers: np.ndarray
    final_objective: float
    lsr_velocity: np.ndarray
    inliers_per_k: dict[int, int] = field(default_factory=dict)
    low_confidence_vz: bool = False
    odr_no_decrease: bool = False

    @property
    def num_inliers(self) -> int:
        return len(self.inlier_indices)


# --------------------------------------------------------------------------
# linear model

def direction_matrix(azimuths, elevations) -> np.ndarray:
    """Rows (sin az cos el, cos az cos el, sin el)."""
    az = np.asarray(azimuths, float)
    el = np.asarray(elevations, float)
    ce = np.cos(el)
    return np.stack([np.sin(az) * ce, np.cos(az) * ce, np.sin(el)], axis=-1)


def predicted_doppler(velocity, azimuths, elevations) -> np.ndarray:
    return -direction_matrix(azimuths, elevations) @ np.asarray(velocity, float)


def _pinv_sym(m: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Pseudoinverse of (batched) symmetric 3x3 matrices via SVD."""
    w, s, uh = np.linalg.svd(m)
    cutoff = rtol * s[..., :1]
    s_inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return np.swapaxes(uh, -1, -2) @ (s_inv[..., :, None] * np.swapaxes(w, -1, -2))


def lsr_solve(dopplers, azimuths, elevations) -> np.ndarray:
    """Minimum-norm least squares ``(P^T P)^+ P^T (-Q)``."""
    q = np.asarray(dopplers, float)
    if q.size == 0:
        raise EgoMotionError("lsr_solve needs at least one detection")
    p = direction_matrix(azimuths, elevations)
    return _pinv_sym(p.T @ p) @ (p.T @ -q)


def _lsr_batch(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """lsr_solve for stacked samples: p (T, s, 3), q (T, s) -> (T, 3)."""
    pt = np.swapaxes(p, 1, 2)
    return (_pinv_sym(pt @ p) @ (pt @ -q[..., None]))[..., 0]


# --------------------------------------------------------------------------
# RANSAC

def unfold(dopplers, k: int, v_max: float) -> np.ndarray:
    return np.asarray(dopplers, float) - 2.0 * k * v_max


def ransac_static_set(dopplers, azimuths, elevations, params: RansacParams = RansacParams(),
                      k: int = 0, v_max: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Largest consensus set under the static-scene model.

    Returns ``(velocity, inlier_indices)``; the velocity is refit on all
    inliers of the winning trial.  Ties go to the earliest trial.
    """
    q = unfold(dopplers, k, v_max) if k else np.asarray(dopplers, float)
    n = len(q)
    s = params.sample_size
    if n < s:
        raise NoConsensusError(f"{n} detections, need at least {s}")
    p = direction_matrix(azimuths, elevations)
    rng = np.random.default_rng(params.rng_seed)
    # one independent permutation prefix per trial
    samples = np.argsort(rng.random((params.max_trials, n)), axis=1)[:, :s]
    models = _lsr_batch(p[samples], q[samples])  # (T, 3)
    resid = np.abs(q[None, :] + models @ p.T)  # (T, N)
    counts = (resid <= params.inlier_threshold_m_per_s).sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < s:
        raise NoConsensusError(f"best trial has {counts[best]} inliers < sample size {s}")
    inliers = np.flatnonzero(resid[best] <= params.inlier_threshold_m_per_s)
    velocity = lsr_solve(q[inliers], np.asarray(azimuths)[inliers], np.asarray(elevations)[inliers])
    return velocity, inliers


# --------------------------------------------------------------------------
# orthogonal distance refinement

def odr_objective(velocity, az_hat, el_hat, dopplers, azimuths, elevations, weights: OdrWeights,
                  doppler_weight: float = 1.0) -> float:
    r = _odr_residuals(np.asarray(velocity, float), np.asarray(az_hat, float), np.asarray(el_hat, float),
                       np.asarray(dopplers, float), np.asarray(azimuths, float), np.asarray(elevations, float),
                       np.sqrt(weights.eta1_sq), np.sqrt(weights.eta2_sq), np.sqrt(doppler_weight))
    return float(sum(np.dot(x, x) for x in r))


def _odr_residuals(v, th, ph, q, th0, ph0, e1, e2, w):
    sth, cth, sph, cph = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    r3 = w * (sth * cph * v[0] + cth * cph * v[1] + sph * v[2] + q)
    return e1 * (th - th0), e2 * (ph - ph0), r3


def odr_refine(dopplers, azimuths, elevations, init_velocity, weights: OdrWeights = OdrWeights(),
               options: OdrOptions = OdrOptions(), doppler_weight: float = 1.0) -> OdrResult:
    """Minimise sum eta1^2 (A-az)^2 + eta2^2 (E-el)^2 + w [d(A,E).v + v_r]^2.

    Levenberg-Marquardt with Marquardt (diagonal) scaling and gain-ratio
    damping control.  The Jacobian is an arrowhead: each detection couples
    only to the velocity and its own two angles, so every step is solved
    with a 3x3 Schur complement in O(N).
    """
    q = np.asarray(dopplers, float)
    th0 = np.asarray(azimuths, float)
    ph0 = np.asarray(elevations, float)
    e1, e2 = np.sqrt(weights.eta1_sq), np.sqrt(weights.eta2_sq)
    sw = np.sqrt(doppler_weight)
    v = np.asarray(init_velocity, float).copy()
    th, ph = th0.copy(), ph0.copy()

    def cost(v, th, ph):
        r1, r2, r3 = _odr_residuals(v, th, ph, q, th0, ph0, e1, e2, sw)
        return float(r1 @ r1 + r2 @ r2 + r3 @ r3), (r1, r2, r3)

    f, res = cost(v, th, ph)
    f0 = f
    if not np.isfinite(f):
        raise OdrError(f"non-finite initial objective (velocity={v})")
    if f == 0.0:
        return OdrResult(v, th, ph, f, f0, 0, True)

    mu, nu = None, 2.0
    converged = False
    accepted_any = False
    it = 0
    while it < options.max_iter:
        it += 1
        r1, r2, r3 = res
        sth, cth, sph, cph = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        d = sw * np.stack([sth * cph, cth * cph, sph], axis=1)  # dr3/dv   (N, 3)
        a = sw * (cth * cph * v[0] - sth * cph * v[1])  # dr3/dA
        b = sw * (-sth * sph * v[0] - cth * sph * v[1] + cph * v[2])  # dr3/dE
        # normal-equation blocks
        a_vv = d.T @ d
        g_v = d.T @ r3
        g_t = e1 * r1 + a * r3
        g_p = e2 * r2 + b * r3
        b11 = e1 * e1 + a * a
        b22 = e2 * e2 + b * b
        b12 = a * b
        diag_v = np.maximum(np.diag(a_vv), 1e-12)
        if mu is None:
            mu = 1e-3
        while True:
            # damped blocks (Marquardt scaling on the diagonal)
            m11 = b11 * (1 + mu)
            m22 = b22 * (1 + mu)
            det = m11 * m22 - b12 * b12
            i11, i22, i12 = m22 / det, m11 / det, -b12 / det
            # C_i = [d_i a_i, d_i b_i]
            # C B^-1 C^T summed, C B^-1 g summed
            w11 = i11 * a * a + 2 * i12 * a * b + i22 * b * b
            schur = a_vv + mu * np.diag(diag_v) - (d * w11[:, None]).T @ d
            bg_t = i11 * g_t + i12 * g_p
            bg_p = i12 * g_t + i22 * g_p
            rhs = -g_v + d.T @ (a * bg_t + b * bg_p)
            try:
                dv = np.linalg.solve(schur, rhs)
            except np.linalg.LinAlgError:
                dv = np.linalg.lstsq(schur, rhs, rcond=None)[0]
            cdv = d @ dv  # C_i^T dv = (a_i * d_i.dv, b_i * d_i.dv)
            ht = -g_t - a * cdv
            hp = -g_p - b * cdv
            dth = i11 * ht + i12 * hp
            dph = i12 * ht + i22 * hp
            v_new, th_new, ph_new = v + dv, th + dth, ph + dph
            f_new, res_new = cost(v_new, th_new, ph_new)
            if not np.isfinite(f_new):
                raise OdrError(f"non-finite objective at iteration {it} (velocity={v}, mu={mu})")
            # predicted decrease of the Gauss-Newton model
            jd3 = d @ dv + a * dth + b * dph
            jd1, jd2 = e1 * dth, e2 * dph
            lin = r1 + jd1, r2 + jd2, r3 + jd3
            pred = f - float(sum(x @ x for x in lin))
            step = float(np.sqrt(dv @ dv + dth @ dth + dph @ dph))
            rho = (f - f_new) / pred if pred > 0 else -1.0
            if rho > 0 and f_new < f:
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e16 or step < options.step_tol:
                if not accepted_any:
                    log.warning("ODR could not decrease the objective; keeping initial solution")
                    return OdrResult(np.asarray(init_velocity, float).copy(), th0.copy(), ph0.copy(),
                                     f0, f0, it, False, no_decrease=True)
                return OdrResult(v, th, ph, f, f0, it, True)
        accepted_any = True
        rel = (f - f_new) / f
        v, th, ph, f, res = v_new, th_new, ph_new, f_new, res_new
        mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
        nu = 2.0
        if step < options.step_tol or rel < options.rel_decrease_tol or f == 0.0:
            converged = True
            break
    return OdrResult(v, th, ph, f, f0, it, converged)


# --------------------------------------------------------------------------
# ambiguity resolution and the full estimator

def _as_columns(pointcloud):
    """Accept an (N, >=4) array (range, doppler, az, el, ...) or Detection objects."""
    if isinstance(pointcloud, np.ndarray):
        arr = pointcloud
    else:
        arr = np.array([(d.range_m, d.doppler_m_per_s, d.azimuth_rad, d.elevation_rad) for d in pointcloud],
                       float).reshape(-1, 4)
    return arr[:, 1], arr[:, 2], arr[:, 3]


def _order_key(k: int, count: int):
    return (-count, abs(k), k)


def resolve_ambiguity(dopplers, azimuths, elevations, v_max: float, candidate_ks=(-1, 0, 1),
                      params: EgoParams = EgoParams(), angle_correction=None) -> tuple[int, EgoMotionEstimate]:
    """Pick the fold index with the largest RANSAC consensus, then refine with ODR.

    ``angle_correction(k, az, el) -> (az, el)``, when given, maps measured
    angles to the angles implied by fold hypothesis ``k`` (e.g. to undo a
    TDM compensation that used the folded Doppler).
    """
    ks = tuple(int(k) for k in candidate_ks)
    if not ks:
        raise EgoMotionError("empty candidate k set")
    q = np.asarray(dopplers, float)
    az = np.asarray(azimuths, float)
    el = np.asarray(elevations, float)
    angles = {k: angle_correction(k, az, el) if angle_correction else (az, el) for k in ks}
    trials = {}
    for k in ks:
        try:
            trials[k] = ransac_static_set(q, *angles[k], params.ransac, k, v_max)
        except NoConsensusError as exc:
            log.debug("k=%d: %s", k, exc)
    if not trials:
        raise NoConsensusError(f"no consensus for any k in {ks}")
    best_k = min(trials, key=lambda k: _order_key(k, len(trials[k][1])))
    v_lsr, inliers = trials[best_k]
    az, el = angles[best_k]
    qk = unfold(q[inliers], best_k, v_max)
    odr = odr_refine(qk, az[inliers], el[inliers], v_lsr, params.weights, params.odr)
    est = EgoMotionEstimate(
        velocity=odr.velocity,
        ambiguity_k=best_k,
        inlier_indices=inliers,
        refined_azimuths=odr.azimuths,
        refined_elevations=odr.elevations,
        refined_dopplers=predicted_doppler(odr.velocity, odr.azimuths, odr.elevations),
        final_objective=odr.objective,
        lsr_velocity=v_lsr,
        inliers_per_k={k: len(t[1]) for k, t in trials.items()},
        low_confidence_vz=bool(np.all(np.abs(el[inliers]) < params.low_elevation_rad)),
        odr_no_decrease=odr.no_decrease,
    )
    return best_k, est


def estimate(pointcloud, v_max: float, params: EgoParams = EgoParams(), angle_correction=None,
             ) -> EgoMotionEstimate:
    """Ego velocity for one frame; ``params.candidate_ks == (0,)`` disables unfolding."""
    q, az, el = _as_columns(pointcloud)
    if len(q) == 0:
        raise EgoMotionError("empty point cloud")
    return resolve_ambiguity(q, az, el, v_max, params.candidate_ks, params, angle_correction)[1]
