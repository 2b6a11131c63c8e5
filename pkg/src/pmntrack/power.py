"""Fixed-point water-filling power allocation across targets.

Each target's power solves

    p_q = max(mu_wf - tr(A_q^-1 Jp_q) / tr(A_q^-1 St_q), Pmin),
    A_q = Jp_q + p_q St_q,

and the common water level mu_wf is raised until the budget
sum_q p_q = Pt is met.  The trace ratio is a generalized Rayleigh
quotient of (St^-1 Jp), so it stays inside that pencil's eigenvalue
range for any p >= 0; this both bounds the fixed point and supplies
the bracket for the outer bisection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .errors import InvalidArgumentError
from .fisher import spd_inverse

_FP_TOL = 1e-10
_FP_ITERS = 100


@dataclass(frozen=True)
class PowerProblem:
    """Per-target (prior info, aggregate measurement info) plus the budget."""

    jp: np.ndarray        # (Q, 4, 4) SPD prior information
    st: np.ndarray        # (Q, 4, 4) PSD selected measurement information
    Pt: float
    Pmin: float

    def __post_init__(self):
        jp = np.asarray(self.jp, dtype=float)
        st = np.asarray(self.st, dtype=float)
        if jp.ndim != 3 or jp.shape != st.shape or jp.shape[1:] != (4, 4):
            raise InvalidArgumentError("jp and st must be stacked (Q,4,4)")
        if self.Pmin < 0 or self.Pt < self.n_targets * self.Pmin - 1e-12:
            raise InvalidArgumentError("need Pt >= Q * Pmin >= 0")
        for q in range(self.n_targets):
            spd_inverse(jp[q], f"prior information of target {q}")
            if np.max(np.abs(st[q])) == 0.0 or np.linalg.eigvalsh(st[q])[-1] <= 0:
                raise InvalidArgumentError(
                    f"target {q} has no measurement information (empty selection?)")

    @property
    def n_targets(self) -> int:
        return np.asarray(self.jp).shape[0]


@dataclass(frozen=True)
class PowerResult:
    p: np.ndarray
    mu_wf: float
    all_floored: bool
    converged: bool


def _ratio_parts(Jp: np.ndarray, St: np.ndarray, p: float):
    """A^-1 Jp and A^-1 St for A = Jp + p St (one joint solve)."""
    try:
        X = np.linalg.solve(Jp + p * St, np.hstack([Jp, St]))
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError("information matrix is singular") from exc
    return X[:, :4], X[:, 4:]


def _trace_ratio(Jp: np.ndarray, St: np.ndarray, p: float) -> float:
    B1, B2 = _ratio_parts(Jp, St, p)
    num = float(np.trace(B1))
    den = float(np.trace(B2))
    if den <= 0:
        raise InvalidArgumentError("measurement information vanished")
    return num / den


def fp_power_update(Jp: np.ndarray, St: np.ndarray, mu_wf: float,
                    p_prev: float, Pmin: float) -> float:
    """One fixed-point iterate, floored at Pmin."""
    if p_prev < 0:
        raise InvalidArgumentError("power must be nonnegative")
    return max(mu_wf - _trace_ratio(Jp, St, p_prev), Pmin)


def _converge_target(Jp: np.ndarray, St: np.ndarray, mu_wf: float,
                     Pmin: float, p0: float) -> tuple[float, bool]:
    """Per-target fixed point at a given water level.

    The plain iteration converges in a handful of steps when the trace
    ratio varies slowly in p; when it oscillates (steep ratio) it is cut
    off early and the same root is taken by bisection on
    g(p) = p + ratio(p) - mu_wf, which is increasing wherever the plain
    map fails to contract.
    """
    p = max(p0, Pmin)
    prev_delta = np.inf
    for i in range(_FP_ITERS):
        p_next = fp_power_update(Jp, St, mu_wf, p, Pmin)
        delta = abs(p_next - p)
        if delta < _FP_TOL * max(1.0, p) or (i >= 6 and delta > 0.8 * prev_delta):
            break                     # settled or oscillating
        prev_delta = delta
        p = p_next
    p = p_next

    # floored case: the unfloored root sits below Pmin
    if p <= Pmin and Pmin + _trace_ratio(Jp, St, Pmin) - mu_wf >= 0.0:
        return Pmin, True

    # Newton polish on g(p) = p + ratio(p) - mu_wf; the step-based stop
    # above can sit far from the root when the contraction is weak
    for _ in range(30):
        B1, B2 = _ratio_parts(Jp, St, p)
        num, den = float(np.trace(B1)), float(np.trace(B2))
        g = p + num / den - mu_wf
        if abs(g) < 1e-13 * max(1.0, mu_wf):
            return max(p, Pmin), True
        d_num = -float(np.sum(B2.T * B1))          # tr(B2 B1)
        d_den = -float(np.sum(B2.T * B2))
        g_prime = 1.0 + (d_num * den - num * d_den) / (den * den)
        if not np.isfinite(g_prime) or g_prime < 0.1:
            break
        p_new = p - g / g_prime
        if p_new <= Pmin:
            if Pmin + _trace_ratio(Jp, St, Pmin) - mu_wf >= 0.0:
                return Pmin, True
            p_new = 0.5 * (p + Pmin)
        p = p_new

    def g_fn(pq: float) -> float:
        return pq + _trace_ratio(Jp, St, pq) - mu_wf

    lo, hi = Pmin, max(mu_wf, Pmin) + 1.0
    if g_fn(lo) >= 0.0:
        return Pmin, True
    while g_fn(hi) < 0.0:
        hi *= 2.0
        if hi > 1e12:
            return p, False
    root = brentq(g_fn, lo, hi, xtol=_FP_TOL, rtol=4 * np.finfo(float).eps)
    return max(float(root), Pmin), True


def rayleigh_bounds(Jp: np.ndarray, St: np.ndarray) -> tuple[float, float]:
    """Eigenvalue range of St^-1 Jp (restricted to St's range if singular).

    The fixed-point trace ratio lies inside these bounds for any p >= 0
    when St is invertible.
    """
    St = 0.5 * (St + St.T)
    w, V = np.linalg.eigh(St)
    keep = w > max(1e-12 * max(w[-1], 0.0), 0.0)
    if not np.any(keep):
        raise InvalidArgumentError("St has no positive eigenvalues")
    if np.all(keep):
        vals = eigh(0.5 * (Jp + Jp.T), St, eigvals_only=True)
    else:
        Vr = V[:, keep]
        vals = eigh(Vr.T @ Jp @ Vr, np.diag(w[keep]), eigvals_only=True)
    return float(vals[0]), float(vals[-1])


def solve_water_level(prob: PowerProblem) -> PowerResult:
    """Root-find the water level; per-target fixed points per candidate.

    The converged total power is continuous and nondecreasing in mu_wf,
    so the budget residual has a bracketed root; the bracket upper end
    starts at Pt + max_q lambda_max(St_q^-1 Jp_q), where every target is
    already unfloored past the budget, and expands geometrically if
    needed.  The residual is solved well past the documented 1e-6 * Pt
    tolerance, leaving the per-target fixed points as the only error.
    """
    Q = prob.n_targets
    jp = np.asarray(prob.jp, dtype=float)
    st = np.asarray(prob.st, dtype=float)
    state = {"p": np.full(Q, max(prob.Pt / Q, prob.Pmin)), "ok": True}

    def totals(mu: float) -> np.ndarray:
        p = np.empty(Q)
        for q in range(Q):
            p[q], conv = _converge_target(jp[q], st[q], mu, prob.Pmin,
                                          state["p"][q])
            state["ok"] = state["ok"] and conv
        state["p"] = p
        return p

    lam_hi = max(rayleigh_bounds(jp[q], st[q])[1] for q in range(Q))
    lo, hi = 0.0, prob.Pt + lam_hi
    for _ in range(60):
        if totals(hi).sum() >= prob.Pt:
            break
        hi *= 2.0
    else:
        p = state["p"]
        return PowerResult(p=p, mu_wf=hi, converged=False,
                           all_floored=bool(np.all(p <= prob.Pmin + 1e-12)))

    if totals(lo).sum() >= prob.Pt:
        mu = lo                        # budget met at the floor already
    else:
        mu = float(brentq(lambda m: totals(m).sum() - prob.Pt, lo, hi,
                          xtol=1e-13, rtol=4 * np.finfo(float).eps,
                          maxiter=300))
    p = totals(mu)
    excess = p.sum() - prob.Pt
    if excess > 0:
        # spread the residual root-finding slack over the unfloored
        # targets so the budget invariant holds exactly
        free = p > prob.Pmin + 1e-12
        if np.any(free):
            p = p.copy()
            p[free] -= excess / free.sum()
            p = np.maximum(p, prob.Pmin)
    all_floored = bool(np.all(p <= prob.Pmin + 1e-12))
    budget_ok = abs(p.sum() - prob.Pt) <= 1e-6 * max(prob.Pt, 1.0)
    return PowerResult(p=p, mu_wf=mu, all_floored=all_floored,
                       converged=state["ok"] and budget_ok)
