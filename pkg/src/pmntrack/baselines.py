"""Reference selectors and the power-allocation oracle.

Exhaustive search is the selection ground truth (and the DAN label
source); nearest-node selection is the geometric benchmark; the
projected-gradient power solver is the convex oracle the fixed-point
water-filling allocator is tested against.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterator

import numpy as np

from .errors import EnumerationCapError, InvalidArgumentError
from .fisher import MeasInfoSet, spd_inverse
from .power import PowerProblem
from .scenario import Scenario, TargetState

ES_DEFAULT_CAP = 10**6


def subset_iter(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All k-subsets of range(n), each exactly once, lexicographic order."""
    if not (0 <= k <= n):
        raise InvalidArgumentError("need 0 <= k <= n")
    return itertools.combinations(range(n), k)


def exhaustive_select(Jp: np.ndarray, m: MeasInfoSet, p: float, nmax: int,
                      cap: int = ES_DEFAULT_CAP) -> np.ndarray:
    """Cost-minimizing nmax-subset by full enumeration.

    Ties resolve to the lexicographically first subset.  Refuses to
    enumerate more than ``cap`` subsets.
    """
    n = m.n_nodes
    n_subsets = math.comb(n, nmax)
    if n_subsets > cap:
        raise EnumerationCapError(
            f"C({n},{nmax}) = {n_subsets} exceeds cap {cap}; "
            "shrink N or Nmax (or raise the cap) to enumerate")
    idx = np.array(list(subset_iter(n, nmax)), dtype=int)     # (S, nmax)
    J = Jp[None, :, :] + p * m.Mbar[idx].sum(axis=1)          # (S, 4, 4)
    L = np.linalg.cholesky(J)
    cost = -2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    best = int(np.argmin(cost))                               # first minimum
    out = np.zeros(n)
    out[idx[best]] = 1.0
    return out


def nearest_select(sc: Scenario, s_pred: TargetState, nmax: int) -> np.ndarray:
    """The nmax nodes closest to the predicted position; ties to low index."""
    pos = s_pred.position
    dists = np.array([np.linalg.norm(pos - nd.position) for nd in sc.nodes])
    order = np.argsort(dists, kind="stable")
    out = np.zeros(sc.n_nodes)
    out[order[:nmax]] = 1.0
    return out


# ---------------------------------------------------------------------------
# Convex power-allocation oracle
# ---------------------------------------------------------------------------

def project_power(p: np.ndarray, Pt: float, Pmin: float) -> np.ndarray:
    """Euclidean projection onto {p >= Pmin, sum p <= Pt}.

    Shift by the floor, clip, and if the budget is exceeded project onto
    the shifted simplex with the exact sort-and-threshold rule.
    """
    q = np.asarray(p, dtype=float) - Pmin
    budget = Pt - Pmin * q.shape[0]
    if budget < -1e-12:
        raise InvalidArgumentError("Pt must cover Q * Pmin")
    clipped = np.maximum(q, 0.0)
    if clipped.sum() <= budget:
        return clipped + Pmin
    srt = np.sort(q)[::-1]
    csum = np.cumsum(srt)
    ks = np.arange(1, q.shape[0] + 1)
    thr = (csum - budget) / ks
    k = int(np.max(np.nonzero(srt - thr > 0)[0])) + 1
    tau = (csum[k - 1] - budget) / k
    return np.maximum(q - tau, 0.0) + Pmin


def power_objective(prob: PowerProblem, p: np.ndarray) -> float:
    """sum_q log det(Jp_q + p_q * St_q), the quantity power allocation maximises."""
    total = 0.0
    for Jp, St, pq in zip(prob.jp, prob.st, p):
        sign, ld = np.linalg.slogdet(Jp + pq * St)
        if sign <= 0:
            raise InvalidArgumentError("information matrix lost definiteness")
        total += ld
    return float(total)


def power_gradient(prob: PowerProblem, p: np.ndarray) -> np.ndarray:
    g = np.empty(len(p))
    for q, (Jp, St, pq) in enumerate(zip(prob.jp, prob.st, p)):
        A_inv = spd_inverse(Jp + pq * St, "information matrix")
        g[q] = np.sum(A_inv * St)      # tr(A^-1 St)
    return g


def oracle_power(prob: PowerProblem, max_iters: int = 20000,
                 grad_tol: float = 1e-9, patience: int = 30) -> np.ndarray:
    """Projected-gradient ascent on the log-det power objective.

    Backtracking line search; stops when the projected-gradient mapping
    drops below grad_tol or the objective stops improving beyond float
    resolution for ``patience`` iterations (the concave objective is
    flat to ~eps*|f| well before the mapping reaches grad_tol).
    """
    Q = prob.n_targets
    p = project_power(np.full(Q, prob.Pt / Q), prob.Pt, prob.Pmin)
    f = power_objective(prob, p)
    best_f, best_p, stall = f, p, 0
    step = 1.0
    for _ in range(max_iters):
        g = power_gradient(prob, p)
        probe = project_power(p + g, prob.Pt, prob.Pmin)
        if np.linalg.norm(probe - p) < grad_tol:
            break
        # Armijo backtracking on the ascent direction
        alpha = step
        cand, f_cand = p, f
        for _ in range(60):
            cand = project_power(p + alpha * g, prob.Pt, prob.Pmin)
            f_cand = power_objective(prob, cand)
            if f_cand >= f + 1e-4 * float(g @ (cand - p)) or np.allclose(cand, p):
                break
            alpha *= 0.5
        p, f = cand, f_cand
        step = min(max(alpha * 2.0, 1e-8), 1e3)
        if f > best_f + 8.0 * np.finfo(float).eps * max(1.0, abs(best_f)):
            best_f, best_p, stall = f, p, 0
        else:
            stall += 1
            if stall >= patience:
                break
    if best_f >= f:
        p = best_p
    # fixed-step polish: no objective comparisons, so the KKT residual is
    # not limited by the float resolution of f.  The objective separates
    # over targets, so its curvature is the diagonal -tr((A^-1 S)^2) and
    # a step below 1/L keeps the mapping contractive.
    curv = max(
        float(np.sum((spd_inverse(Jp + pq * St) @ St) ** 2))
        for Jp, St, pq in zip(prob.jp, prob.st, p))
    alpha = 0.9 / max(curv, 1e-12)
    for _ in range(500):
        p_next = project_power(p + alpha * power_gradient(prob, p),
                               prob.Pt, prob.Pmin)
        if float(np.max(np.abs(p_next - p))) < 1e-14 * max(1.0, float(np.max(p))):
            p = p_next
            break
        p = p_next
    return p
