"""Fisher information, PCRLB, and the selection cost with its derivatives.

The per-target information recursion is

    J = J_P + p * sum_n u_n * Mbar_n,          J_P = (Qn + G J_prev^-1 G^T)^-1

with Mbar_n = H_n^T Sigma_bar_n^-1 H_n the per-node measurement
information at unit power.  The selection cost is -log det J; its
gradient entry is -tr(J^-1 M_n) and the Hessian entry tr(M_m J^-2 M_n)
with M_n = p * Mbar_n (a Gram form, hence PSD).

All 4x4 inverses go through Cholesky; a failed factorisation raises
NotSPDError rather than returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidArgumentError, NotSPDError
from .scenario import MotionModel, Scenario, TargetState, measurement_covariance_base, measurement_jacobian

_SYM_TOL = 1e-10


@dataclass(frozen=True)
class FisherState:
    """4x4 information matrix for one target at one frame."""

    J: np.ndarray
    frame: int = 0


@dataclass(frozen=True)
class MeasInfoSet:
    """Per-node unit-power measurement information matrices, stacked (N,4,4)."""

    Mbar: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.Mbar.shape[0]


@dataclass(frozen=True)
class SelectionContext:
    """The (prior info, measurement info) pair a selector works against."""

    jp: np.ndarray
    mbar: MeasInfoSet


def _as_matrix(J) -> np.ndarray:
    return J.J if isinstance(J, FisherState) else np.asarray(J, dtype=float)


def _check_spd(J: np.ndarray, what: str = "matrix"):
    if np.max(np.abs(J - J.T)) > _SYM_TOL * max(1.0, float(np.max(np.abs(J)))):
        raise NotSPDError(f"{what} is not symmetric")
    try:
        return cho_factor(J, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"{what} is not positive-definite") from exc


def spd_inverse(J: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Cholesky-based inverse of an SPD matrix."""
    c = _check_spd(J, what)
    inv = cho_solve(c, np.eye(J.shape[0]))
    return 0.5 * (inv + inv.T)


def initial_info(sigma_r: float = 10.0, sigma_v: float = 5.0) -> FisherState:
    """Frame-0 information: inverse of diag(sr^2, sv^2, sr^2, sv^2)."""
    if sigma_r <= 0 or sigma_v <= 0:
        raise InvalidArgumentError("initial sigmas must be positive")
    J0 = np.diag([sigma_r**-2, sigma_v**-2, sigma_r**-2, sigma_v**-2])
    return FisherState(J=J0, frame=0)


def prior_info(model: MotionModel, j_prev: FisherState) -> np.ndarray:
    """One-step prediction information (Qn + G J_prev^-1 G^T)^-1."""
    j_prev_inv = spd_inverse(_as_matrix(j_prev), "previous information")
    pred_cov = model.Qn + model.G @ j_prev_inv @ model.G.T
    return spd_inverse(pred_cov, "predicted covariance")


def meas_info_set(sc: Scenario, s_pred: TargetState) -> MeasInfoSet:
    """Mbar_n = H_n^T Sigma_bar_n^-1 H_n for every node, at the prediction."""
    mats = np.empty((sc.n_nodes, 4, 4))
    for n in range(sc.n_nodes):
        H = measurement_jacobian(sc, s_pred, n)
        sigma_bar_inv = np.diag(1.0 / np.diag(measurement_covariance_base(sc, s_pred, n)))
        M = H.T @ sigma_bar_inv @ H
        mats[n] = 0.5 * (M + M.T)
    return MeasInfoSet(Mbar=mats)


def _check_selection(u: np.ndarray, n: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise InvalidArgumentError(f"selection vector must have length {n}")
    if np.any(u < -1e-6) or np.any(u > 1.0 + 1e-6):
        raise InvalidArgumentError("selection entries must lie in [0, 1]")
    return np.clip(u, 0.0, 1.0)


def fim(Jp: np.ndarray, u: np.ndarray, p: float, m: MeasInfoSet,
        frame: int = 0) -> FisherState:
    """J = Jp + p * sum_n u_n Mbar_n."""
    if p <= 0:
        raise InvalidArgumentError("power must be positive")
    u = _check_selection(u, m.n_nodes)
    J = _as_matrix(Jp) + p * np.einsum("n,nij->ij", u, m.Mbar)
    return FisherState(J=0.5 * (J + J.T), frame=frame)


def pcrlb(J: FisherState) -> np.ndarray:
    """PCRLB matrix C = J^-1."""
    return spd_inverse(_as_matrix(J), "information matrix")


def cost_logdet(J: FisherState) -> float:
    """Selection cost log det C = -log det J."""
    c = _check_spd(_as_matrix(J), "information matrix")
    return -2.0 * float(np.sum(np.log(np.diag(c[0]))))


def grad_u(J: FisherState, p: float, m: MeasInfoSet) -> np.ndarray:
    """Gradient of the cost w.r.t. u: entry n is -tr(J^-1 p Mbar_n)."""
    Jinv = spd_inverse(_as_matrix(J), "information matrix")
    # tr(J^-1 M_n) = <J^-1, M_n> since both are symmetric
    return -p * np.einsum("ij,nij->n", Jinv, m.Mbar)


def hess_u(J: FisherState, p: float, m: MeasInfoSet) -> np.ndarray:
    """Hessian w.r.t. u: entry (m,n) = tr(J^-1 M_m J^-1 M_n).

    PSD because it is the Gram matrix of the whitened informations
    J^-1/2 M_n J^-1/2; matches central finite differences of the cost.
    """
    Jinv = spd_inverse(_as_matrix(J), "information matrix")
    B = p * np.einsum("ij,njk->nik", Jinv, m.Mbar)   # J^-1 M_n, stacked
    H = np.einsum("mij,nji->mn", B, B)               # tr(B_m B_n)
    return 0.5 * (H + H.T)
