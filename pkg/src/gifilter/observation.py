"""Observation-side geometry: the map psi, its covariance metric, and AILPs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import SingularMetricError
from .flow import PropagationBundle
from .geometry import Bilinear3, ConnectorField, exp_map_series, symmetrize


def wrap_angles(w: np.ndarray, angular_mask: Optional[np.ndarray]) -> np.ndarray:
    """Reduce angular components of a residual to (-pi, pi]."""
    if angular_mask is None or not np.any(angular_mask):
        return w
    out = np.array(w, dtype=float)
    wrapped = -(np.mod(-out[angular_mask] + np.pi, 2.0 * np.pi) - np.pi)
    out[angular_mask] = wrapped
    return out


@dataclass(frozen=True)
class ObservationModel:
    """Callable bundle for a nonlinear observation with metric covariance.

    ``psi`` maps state points to observation points; ``dpsi`` is its q x p
    Jacobian and ``d2psi`` its (q, p, p) second derivative.  ``beta`` is the
    observation covariance metric (symmetric positive definite wherever
    evaluated) with connector ``conn_obs``; ``dbeta`` optionally supplies
    the analytic partials of beta used when deriving the connector
    numerically.  ``angular_mask`` flags observation coordinates that live
    on a circle, so residuals can be wrapped before use.
    """

    dim_obs: int
    psi: Callable[[np.ndarray], np.ndarray]
    dpsi: Callable[[np.ndarray], np.ndarray]
    d2psi: Callable[[np.ndarray], np.ndarray]
    beta: Callable[[np.ndarray], np.ndarray]
    conn_obs: ConnectorField
    dbeta: Optional[Callable[[np.ndarray], np.ndarray]] = None
    angular_mask: Optional[np.ndarray] = None

    def normalize(self, y: np.ndarray) -> np.ndarray:
        """Fold angular coordinates of an observation point into (-pi, pi]."""
        return wrap_angles(y, self.angular_mask)

    def residual(self, y_obs: np.ndarray, y_ref: np.ndarray) -> np.ndarray:
        """Chart difference y_obs - y_ref with angular wrap applied."""
        return wrap_angles(np.asarray(y_obs, dtype=float) - np.asarray(y_ref, dtype=float),
                           self.angular_mask)


@dataclass(frozen=True)
class ObservationEvent:
    time: float
    y: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observation has non-finite coordinates")


def beta_sqrt(beta: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix via eigendecomposition."""
    beta = symmetrize(np.asarray(beta, dtype=float))
    eigs, vecs = np.linalg.eigh(beta)
    if eigs[0] <= 0.0:
        raise SingularMetricError(f"observation covariance not SPD (min eig {eigs[0]:.3e})")
    return (vecs * np.sqrt(eigs)) @ vecs.T


def map_second_fundamental_form(
    obs: ObservationModel, state_conn: ConnectorField, x: np.ndarray
) -> Bilinear3:
    """Second fundamental form of psi at x, as a (q, p, p) bilinear map.

    nabla dpsi(v, w) = D2psi(v, w) - Dpsi Gamma(v, w)
                     + Gamma_bar(psi(x))(Dpsi v, Dpsi w).
    """
    x = np.asarray(x, dtype=float)
    coeffs = np.array(obs.d2psi(x), dtype=float)
    jac = np.asarray(obs.dpsi(x), dtype=float)
    if not state_conn.flat:
        coeffs -= np.einsum("ka,aij->kij", jac, state_conn.coefficients(x))
    if not obs.conn_obs.flat:
        gbar = obs.conn_obs.coefficients(obs.psi(x))
        coeffs += np.einsum("kab,ai,bj->kij", gbar, jac, jac)
    coeffs = 0.5 * (coeffs + coeffs.transpose(0, 2, 1))
    return Bilinear3(base=x, coeffs=coeffs)


def ailp_observation(
    bundle: PropagationBundle, obs: ObservationModel, state_conn: ConnectorField
) -> np.ndarray:
    """Intrinsic location correction of psi(X_delta) in the tangent space at y_delta.

    Combines the propagated covariance with the second fundamental form of
    psi and transports the state correction through the Jacobian:
    (1/2) {D2psi(Xi) - J Gamma(Xi) + Gamma_bar(J Xi J^T)} + J m_delta.
    """
    x_delta = bundle.x_delta
    xi = bundle.xi_delta.mat
    jac = np.asarray(obs.dpsi(x_delta), dtype=float)
    out = np.einsum("kij,ij->k", np.asarray(obs.d2psi(x_delta), dtype=float), xi)
    if not state_conn.flat:
        out -= jac @ state_conn.contract(x_delta, xi)
    if not obs.conn_obs.flat:
        y_delta = obs.psi(x_delta)
        out += obs.conn_obs.contract(y_delta, jac @ xi @ jac.T)
    return 0.5 * out + jac @ bundle.m_delta


def sample_observation(
    obs: ObservationModel,
    true_state: np.ndarray,
    rng: np.random.Generator,
    time: float = 0.0,
) -> ObservationEvent:
    """Draw one noisy observation of psi(true_state).

    The noise is a zero-mean Gaussian in the tangent space at psi(X), with
    covariance beta there, pushed to the observation manifold through the
    exponential map of the observation connector.  For a flat observation
    geometry this reduces to Y = psi(X) + beta^(1/2) V.
    """
    y_center = np.asarray(obs.psi(np.asarray(true_state, dtype=float)), dtype=float)
    root = beta_sqrt(obs.beta(y_center))
    v = root @ rng.standard_normal(obs.dim_obs)
    if obs.conn_obs.flat:
        y = y_center + v
    else:
        y = exp_map_series(y_center, v, obs.conn_obs)
    return ObservationEvent(time=time, y=obs.normalize(y))
