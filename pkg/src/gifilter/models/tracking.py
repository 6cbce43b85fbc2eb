"""Nine-dimensional constrained target-tracking model.

State is (position, velocity, acceleration) in a Cartesian chart, with the
acceleration an Ornstein-Uhlenbeck process constrained to stay orthogonal
to the velocity (equivalently, the speed is conserved).  The diffusion
variance is degenerate: noise enters only the acceleration block through
the projection onto the plane orthogonal to the velocity.  Observations
are range, polar angle, azimuth (all relative to a missile with known
state), the relative speed, and a fictitious zero observation of the
velocity-acceleration inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import SingularObservationError, SingularStateError
from ..flow import DiffusionModel
from ..geometry import ConnectorField
from ..observation import ObservationModel

MissileState = Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]

SPEED_FLOOR = 1e-6
RANGE_FLOOR = 1e-6

OBS_ANGULAR_MASK = np.array([False, False, True, False, False])


def constant_velocity_missile(p0, v0, a0=None) -> MissileState:
    """Missile trajectory with constant velocity (the benchmark default)."""
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    a0 = np.zeros(3) if a0 is None else np.asarray(a0, dtype=float)

    def state(t: float):
        return p0 + t * v0, v0, a0

    return state


@dataclass(frozen=True)
class Tracking9DParams:
    """Time constant, noise intensity, and observation variance constants.

    ``gamma_noise`` is the acceleration noise intensity (gamma = sqrt(lam c1)
    in the underlying OU parametrization; we parametrize by gamma directly).
    ``s0 .. s5`` and ``sigma_f`` set the range-dependent observation
    variances; ``missile`` maps an observation time to the known missile
    (position, velocity, acceleration).
    """

    lam: float = 0.5
    gamma_noise: float = 5.0
    s0: float = 1e-6
    s1: float = 1e-2
    s2: float = 1e-6
    s3: float = 1e-2
    s4: float = 1e-6
    s5: float = 1e-8
    sigma_f: float = 1.0
    missile: MissileState = field(
        default_factory=lambda: constant_velocity_missile(
            np.zeros(3), np.array([250.0, 0.0, 0.0])
        )
    )

    def __post_init__(self):
        if self.lam <= 0.0 or self.gamma_noise <= 0.0:
            raise ValueError("lam and gamma_noise must be positive")
        if min(self.s0, self.s5) <= 0.0 or self.sigma_f <= 0.0:
            raise ValueError("s0, s5 and sigma_f must be positive")
        if min(self.s1, self.s2, self.s3, self.s4) < 0.0:
            raise ValueError("variance constants must be non-negative")
        if self.s1 + self.s2 <= 0.0 or self.s3 + self.s4 <= 0.0:
            raise ValueError("angle variances must be positive")


def split_state(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return x[0:3], x[3:6], x[6:9]


def pack_state(p, v, a) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=float), np.asarray(v, dtype=float),
                           np.asarray(a, dtype=float)])


def validate_state(x: np.ndarray, rtol: float = 1e-8) -> None:
    """Check the constraint manifold membership: |v| > 0 and v . a = 0."""
    _, v, a = split_state(x)
    speed = float(np.linalg.norm(v))
    if speed < SPEED_FLOOR:
        raise SingularStateError(f"speed {speed:.3e} below {SPEED_FLOOR:.0e}")
    cross = abs(float(v @ a))
    if cross > rtol * speed * max(float(np.linalg.norm(a)), 1e-300):
        raise SingularStateError("acceleration is not orthogonal to velocity")


def project_state(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Re-project onto the constraint manifold of the reference state.

    The velocity is rescaled to the reference speed and the acceleration is
    projected orthogonal to the new velocity.
    """
    p, v, a = split_state(x)
    speed_ref = float(np.linalg.norm(ref[3:6]))
    nv = float(np.linalg.norm(v))
    if nv < SPEED_FLOOR:
        raise SingularStateError("cannot project a state with vanishing speed")
    v_new = v * (speed_ref / nv)
    a_new = a - v_new * float(v_new @ a) / float(v_new @ v_new)
    return pack_state(p, v_new, a_new)


def accel_ratio(x: np.ndarray) -> float:
    """|a|^2 / |v|^2, the drift coefficient keeping v . a constant."""
    _, v, a = split_state(x)
    return float(a @ a) / float(v @ v)


def velocity_projection(v: np.ndarray) -> np.ndarray:
    """Projection onto the orthogonal complement of v."""
    return np.eye(3) - np.outer(v, v) / float(v @ v)


def tracking_connector() -> ConnectorField:
    """State-space connector of the degenerate diffusion metric.

    gamma(x)(z, s) = S(z (x) s) v / (2 |v|^2), with the middle block of S the
    symmetrization z_a s_a^T + s_a z_a^T and the bottom block
    -(z_v s_a^T + s_v z_a^T).  The derivative is the full chart derivative,
    including the variation of the 1/|v|^2 factor; it reduces to
    S(z (x) s) w_v / (2 |v|^2) when the direction keeps the speed constant.
    """

    def gamma(x, ze, si):
        v = x[3:6]
        inv2 = 0.5 / float(v @ v)
        zv, za = ze[3:6], ze[6:9]
        sv, sa = si[3:6], si[6:9]
        sav = float(sa @ v)
        zav = float(za @ v)
        out = np.zeros(9)
        out[3:6] = (za * sav + sa * zav) * inv2
        out[6:9] = -(zv * sav + sv * zav) * inv2
        return out

    def dgamma(x, w, ze, si):
        v = x[3:6]
        vv = float(v @ v)
        inv2 = 0.5 / vv
        wv = w[3:6]
        zv, za = ze[3:6], ze[6:9]
        sv, sa = si[3:6], si[6:9]
        saw = float(sa @ wv)
        zaw = float(za @ wv)
        out = np.zeros(9)
        out[3:6] = (za * saw + sa * zaw) * inv2
        out[6:9] = -(zv * saw + sv * zaw) * inv2
        radial = 2.0 * float(v @ wv) / vv
        if radial != 0.0:
            out -= radial * gamma(x, ze, si)
        return out

    def contract(x, chi):
        v = x[3:6]
        inv2 = 0.5 / float(v @ v)
        chi_aa = chi[6:9, 6:9]
        chi_va = chi[3:6, 6:9]
        chi_av = chi[6:9, 3:6]
        out = np.zeros(9)
        out[3:6] = (chi_aa + chi_aa.T) @ v * inv2
        out[6:9] = -(chi_va + chi_av.T) @ v * inv2
        return out

    return ConnectorField(dim=9, gamma=gamma, dgamma=dgamma, contract_fn=contract)


def tracking_diffusion(params: Tracking9DParams) -> DiffusionModel:
    lam = params.lam
    gam2 = params.gamma_noise ** 2

    def xi(x):
        _, v, a = split_state(x)
        vv = float(v @ v)
        if vv < SPEED_FLOOR ** 2:
            raise SingularStateError("speed collapsed during flow evaluation")
        rho = float(a @ a) / vv
        proj_a = a - v * float(v @ a) / vv
        return np.concatenate([v, a, -rho * v - lam * proj_a])

    def dxi(x):
        _, v, a = split_state(x)
        vv = float(v @ v)
        rho = float(a @ a) / vv
        proj = np.eye(3) - np.outer(v, v) / vv
        q_mat = np.outer(v, a) / vv
        out = np.zeros((9, 9))
        out[0:3, 3:6] = np.eye(3)
        out[3:6, 6:9] = np.eye(3)
        out[6:9, 3:6] = lam * q_mat - rho * np.eye(3)
        out[6:9, 6:9] = -lam * proj - 2.0 * q_mat
        return out

    def d2xi_contract(x, chi):
        _, v, a = split_state(x)
        vv = float(v @ v)
        chi_aa = chi[6:9, 6:9]
        chi_va = chi[3:6, 6:9]
        chi_av = chi[6:9, 3:6]
        out = np.zeros(9)
        out[6:9] = (-2.0 / vv) * (np.trace(chi_aa) * v + (chi_va + chi_av) @ a)
        return out

    def alpha(x):
        _, v, _ = split_state(x)
        out = np.zeros((9, 9))
        out[6:9, 6:9] = gam2 * velocity_projection(v)
        return out

    def noise_matrix(x):
        _, v, _ = split_state(x)
        out = np.zeros((9, 3))
        out[6:9, :] = params.gamma_noise * velocity_projection(v)
        return out

    # Gamma(x)(sigma sigma(x)) vanishes identically, so b coincides with xi
    return DiffusionModel(
        dim=9,
        xi=xi,
        dxi=dxi,
        d2xi_contract=d2xi_contract,
        alpha=alpha,
        conn=tracking_connector(),
        drift_b=xi,
        ddrift_b=dxi,
        d2drift_b_contract=d2xi_contract,
        noise_matrix=noise_matrix,
        constrain=project_state,
    )


def spherical_to_cartesian(y: np.ndarray) -> np.ndarray:
    r, th, ph = y
    return np.array([
        r * math.sin(th) * math.cos(ph),
        r * math.sin(th) * math.sin(ph),
        r * math.cos(th),
    ])


def cartesian_to_spherical(d: np.ndarray) -> np.ndarray:
    """Inverse spherical transform: range, angle from vertical, azimuth."""
    r = float(np.linalg.norm(d))
    if r < RANGE_FLOOR:
        raise SingularObservationError(f"range {r:.3e} below {RANGE_FLOOR:.0e}")
    rho_xy = math.hypot(float(d[0]), float(d[1]))
    if rho_xy < RANGE_FLOOR:
        raise SingularObservationError("direction too close to vertical for azimuth")
    theta = math.acos(max(-1.0, min(1.0, float(d[2]) / r)))
    phi = math.atan2(float(d[1]), float(d[0]))
    return np.array([r, theta, phi])


def _spherical_jacobian(y: np.ndarray) -> np.ndarray:
    """D h at spherical coordinates y = (r, theta, phi)."""
    r, th, ph = y
    st, ct = math.sin(th), math.cos(th)
    sp, cp = math.sin(ph), math.cos(ph)
    return np.array([
        [st * cp, r * ct * cp, -r * st * sp],
        [st * sp, r * ct * sp, r * st * cp],
        [ct, -r * st, 0.0],
    ])


def _spherical_hessian(y: np.ndarray) -> np.ndarray:
    """D^2 h at y, indexed [component, coord_i, coord_j]."""
    r, th, ph = y
    st, ct = math.sin(th), math.cos(th)
    sp, cp = math.sin(ph), math.cos(ph)
    out = np.zeros((3, 3, 3))
    # h1 = r sin(th) cos(ph)
    out[0, 0, 1] = out[0, 1, 0] = ct * cp
    out[0, 0, 2] = out[0, 2, 0] = -st * sp
    out[0, 1, 1] = -r * st * cp
    out[0, 1, 2] = out[0, 2, 1] = -r * ct * sp
    out[0, 2, 2] = -r * st * cp
    # h2 = r sin(th) sin(ph)
    out[1, 0, 1] = out[1, 1, 0] = ct * sp
    out[1, 0, 2] = out[1, 2, 0] = st * cp
    out[1, 1, 1] = -r * st * sp
    out[1, 1, 2] = out[1, 2, 1] = r * ct * cp
    out[1, 2, 2] = -r * st * sp
    # h3 = r cos(th)
    out[2, 0, 1] = out[2, 1, 0] = -st
    out[2, 1, 1] = -r * ct
    return out


def _inverse_map_derivatives(d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Phi(d), DPhi(d), D2Phi(d)) from the forward map's derivatives.

    Differentiating h(Phi(d)) = d twice gives
    D2Phi(u, w) = -Dh^{-1} D2h(DPhi u, DPhi w).
    """
    y = cartesian_to_spherical(d)
    dh = _spherical_jacobian(y)
    dphi = np.linalg.inv(dh)
    d2h = _spherical_hessian(y)
    inner = np.einsum("mab,ai,bj->mij", d2h, dphi, dphi)
    d2phi = -np.einsum("km,mij->kij", dphi, inner)
    return y, dphi, d2phi


def _beta_h(params: Tracking9DParams, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal variance entries h_k(r) with first and second r-derivatives."""
    h = np.array([
        r * r * params.s0,
        params.s1 / r + params.s2,
        params.s3 / r + params.s4,
        r * r * params.s5,
        params.sigma_f ** 2,
    ])
    dh = np.array([
        2.0 * r * params.s0,
        -params.s1 / r ** 2,
        -params.s3 / r ** 2,
        2.0 * r * params.s5,
        0.0,
    ])
    ddh = np.array([
        2.0 * params.s0,
        2.0 * params.s1 / r ** 3,
        2.0 * params.s3 / r ** 3,
        2.0 * params.s5,
        0.0,
    ])
    return h, dh, ddh


def observation_connector(params: Tracking9DParams) -> ConnectorField:
    """Closed-form Levi-Civita connector of the diagonal observation metric.

    Only the range coordinate enters the metric, so the derivative along a
    direction w is w^1 times the r-derivative of the coefficients.
    """

    def _pieces(r: float):
        h, dh, ddh = _beta_h(params, r)
        ratio = dh / h
        kvec = np.zeros(5)
        kvec[:4] = dh[:4] / h[:4] ** 2
        return h, dh, ddh, ratio, kvec

    def gamma(y, u, v):
        r = float(y[0])
        if r < RANGE_FLOOR:
            raise SingularObservationError("observation connector undefined at r ~ 0")
        h, _, _, ratio, kvec = _pieces(r)
        # u * v elementwise keeps the result exactly symmetric under swap
        out = -0.5 * (u[0] * v + v[0] * u) * ratio
        out[0] += 0.5 * h[0] * float(np.sum(kvec * (u * v)))
        return out

    def dgamma(y, w, u, v):
        r = float(y[0])
        if r < RANGE_FLOOR:
            raise SingularObservationError("observation connector undefined at r ~ 0")
        h, dh, ddh, ratio, kvec = _pieces(r)
        dratio = ddh / h - ratio ** 2
        dkvec = np.zeros(5)
        dkvec[:4] = ddh[:4] / h[:4] ** 2 - 2.0 * dh[:4] ** 2 / h[:4] ** 3
        out = -0.5 * (u[0] * v + v[0] * u) * dratio
        out[0] += 0.5 * dh[0] * float(np.sum(kvec * (u * v)))
        out[0] += 0.5 * h[0] * float(np.sum(dkvec * (u * v)))
        return out * float(w[0])

    return ConnectorField(dim=5, gamma=gamma, dgamma=dgamma)


def tracking_observation(params: Tracking9DParams, time: float = 0.0) -> ObservationModel:
    """Observation model with the missile state frozen at one observation time."""
    p_m, v_m, _ = params.missile(time)
    p_m = np.asarray(p_m, dtype=float)
    v_m = np.asarray(v_m, dtype=float)

    def psi(x):
        p, v, a = split_state(x)
        sph = cartesian_to_spherical(p - p_m)
        w = v - v_m
        nw = float(np.linalg.norm(w))
        if nw < SPEED_FLOOR:
            raise SingularObservationError("relative speed is numerically zero")
        return np.concatenate([sph, [nw, float(a @ v)]])

    def dpsi(x):
        p, v, a = split_state(x)
        _, dphi, _ = _inverse_map_derivatives(p - p_m)
        w = v - v_m
        nw = float(np.linalg.norm(w))
        if nw < SPEED_FLOOR:
            raise SingularObservationError("relative speed is numerically zero")
        out = np.zeros((5, 9))
        out[0:3, 0:3] = dphi
        out[3, 3:6] = w / nw
        out[4, 3:6] = a
        out[4, 6:9] = v
        return out

    def d2psi(x):
        p, v, a = split_state(x)
        _, _, d2phi = _inverse_map_derivatives(p - p_m)
        w = v - v_m
        nw = float(np.linalg.norm(w))
        out = np.zeros((5, 9, 9))
        out[0:3, 0:3, 0:3] = d2phi
        out[3, 3:6, 3:6] = (np.eye(3) - np.outer(w, w) / (nw * nw)) / nw
        out[4, 3:6, 6:9] = np.eye(3)
        out[4, 6:9, 3:6] = np.eye(3)
        return out

    def beta(y):
        r = float(y[0])
        if r < RANGE_FLOOR:
            raise SingularObservationError(f"range {r:.3e} below {RANGE_FLOOR:.0e}")
        h, _, _ = _beta_h(params, r)
        return np.diag(h)

    def dbeta(y):
        r = float(y[0])
        _, dh, _ = _beta_h(params, r)
        out = np.zeros((5, 5, 5))
        out[0] = np.diag(dh)
        return out

    return ObservationModel(
        dim_obs=5,
        psi=psi,
        dpsi=dpsi,
        d2psi=d2psi,
        beta=beta,
        conn_obs=observation_connector(params),
        dbeta=dbeta,
        angular_mask=OBS_ANGULAR_MASK.copy(),
    )


def tracking9d_build(
    params: Tracking9DParams, time: float = 0.0
) -> tuple[DiffusionModel, ObservationModel]:
    """Assemble the tracking model; the observation side is frozen at ``time``."""
    return tracking_diffusion(params), tracking_observation(params, time)
