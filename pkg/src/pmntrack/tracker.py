"""Frame-by-frame alternating optimization, EKF estimation, and RMSE.

Each frame: propagate the true states, predict from the last estimates,
build per-target prior information, alternate node selection and power
allocation, draw measurements from the selected nodes at the allocated
power, run the EKF update, and advance the information recursion at the
realized selection and power.

Targets are tracked independently (they are assumed widely separated);
the estimator is a standard EKF and is not part of the bound machinery.
"""

from __future__ import annotations

import concurrent.futures
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import dan as dan_mod
from .baselines import exhaustive_select, nearest_select, oracle_power
from .errors import InvalidArgumentError, NotSPDError
from .fisher import (MeasInfoSet, SelectionContext, cost_logdet, fim,
                     initial_info, meas_info_set, pcrlb, prior_info)
from .mm_admm import MMConfig, blended_start, mm_admm_select, round_selection
from .power import PowerProblem, solve_water_level
from .scenario import (Measurement, Scenario, SimSetup, TargetState,
                       measurement_covariance, measurement_jacobian,
                       predict_state, sample_measurement, sample_transition,
                       true_measurement)
from .seeding import derive_rng, derive_seed

SELECTORS = ("dan", "mm-admm-1", "mm-admm-2", "es", "nearest")
POWER_METHODS = ("fpwf", "oracle", "equal")


@dataclass(frozen=True)
class AoConfig:
    max_rounds: int = 3
    tol: float = 1e-4              # relative cost change to stop
    selector: str = "dan"
    power: str = "fpwf"
    mm: MMConfig = field(default_factory=MMConfig)
    init_blend: float = 0.1
    round_extra: int = 3
    es_cap: int = 10**6

    def __post_init__(self):
        if self.max_rounds < 1:
            raise InvalidArgumentError("max_rounds must be >= 1")
        if self.selector not in SELECTORS:
            raise InvalidArgumentError(f"unknown selector {self.selector!r}")
        if self.power not in POWER_METHODS:
            raise InvalidArgumentError(f"unknown power method {self.power!r}")


@dataclass(frozen=True)
class FrameContext:
    """Everything the per-frame optimizer needs for one target."""

    jp: np.ndarray
    mbar: MeasInfoSet
    s_pred: TargetState


@dataclass
class TrackRecord:
    """Per-frame, per-target simulation log for one Monte-Carlo trial."""

    true_states: np.ndarray     # (K, Q, 4)
    est_states: np.ndarray      # (K, Q, 4)
    pcrlb_trace: np.ndarray     # (K, Q)
    cost: np.ndarray            # (K, Q)
    power: np.ndarray           # (K, Q)
    selections: np.ndarray      # (K, Q, N) 0/1
    pred_states: np.ndarray | None = None   # (K, Q, 4)
    pcrlb_diag: np.ndarray | None = None    # (K, Q, 4)
    ao_costs: list[list[float]] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.true_states.shape[0]


def _select_one(ctx: FrameContext, sc: Scenario, p_q: float, u_prev: np.ndarray,
                cfg: AoConfig, params: dan_mod.DanParams | None) -> np.ndarray:
    if cfg.selector == "nearest":
        return nearest_select(sc, ctx.s_pred, sc.Nmax)
    if cfg.selector == "es":
        return exhaustive_select(ctx.jp, ctx.mbar, p_q, sc.Nmax, cap=cfg.es_cap)
    u0 = blended_start(u_prev, sc.Nmax, cfg.init_blend)
    if cfg.selector in ("mm-admm-1", "mm-admm-2"):
        variant = "trace" if cfg.selector == "mm-admm-1" else "max-eig"
        u_rel, _ = mm_admm_select(ctx.jp, ctx.mbar, p_q, u0, variant, cfg.mm)
    else:
        if params is None:
            raise InvalidArgumentError(
                "selector 'dan' needs trained parameters (run the train command)")
        sel_ctx = SelectionContext(jp=ctx.jp, mbar=ctx.mbar)
        u_layers, _ = dan_mod.dan_forward(sel_ctx, p_q, u0, params,
                                          inner_iters=cfg.mm.admm_iters,
                                          tol=cfg.mm.tol)
        u_rel = u_layers[-1]
    return round_selection(u_rel, ctx.jp, ctx.mbar, p_q, sc.Nmax,
                           extra=cfg.round_extra)


def _allocate(frame_ctx: list[FrameContext], sc: Scenario, U: np.ndarray,
              cfg: AoConfig) -> np.ndarray:
    Q = len(frame_ctx)
    if cfg.power == "equal":
        return np.full(Q, sc.Pt / Q)
    jp = np.stack([c.jp for c in frame_ctx])
    st = np.stack([np.einsum("n,nij->ij", U[q], frame_ctx[q].mbar.Mbar)
                   for q in range(Q)])
    prob = PowerProblem(jp=jp, st=st, Pt=sc.Pt, Pmin=sc.Pmin)
    if cfg.power == "oracle":
        return oracle_power(prob)
    return solve_water_level(prob).p


def _total_cost(frame_ctx: list[FrameContext], U: np.ndarray,
                p: np.ndarray) -> float:
    return float(sum(
        cost_logdet(fim(c.jp, U[q], p[q], c.mbar))
        for q, c in enumerate(frame_ctx)))


def _dan_select_batch(frame_ctx: list[FrameContext], sc: Scenario,
                      p: np.ndarray, U: np.ndarray, cfg: AoConfig,
                      params: dan_mod.DanParams) -> list[np.ndarray]:
    """All targets' DAN forwards in one vectorised pass."""
    Q = len(frame_ctx)
    u0 = np.stack([blended_start(U[q], sc.Nmax, cfg.init_blend)
                   for q in range(Q)])
    outs = dan_mod._forward_batch(
        np.stack([c.jp for c in frame_ctx]),
        np.stack([c.mbar.Mbar for c in frame_ctx]),
        np.asarray(p, dtype=float), u0,
        np.tile(np.asarray(params.alpha_bar), (Q, 1)),
        np.full(Q, params.beta1), params, float(sc.Nmax),
        cfg.mm.admm_iters, cfg.mm.tol)
    return [round_selection(outs[-1, q], frame_ctx[q].jp, frame_ctx[q].mbar,
                            float(p[q]), sc.Nmax, extra=cfg.round_extra)
            for q in range(Q)]


def ao_optimize(frame_ctx: list[FrameContext], sc: Scenario, cfg: AoConfig,
                params: dan_mod.DanParams | None = None
                ) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Alternate per-target selection and joint power allocation.

    Starts from the nearest selection and an equal power split.  A new
    selection is kept only when it does not raise that target's cost at
    the current power, so the recorded objective is non-increasing
    across rounds even for heuristic selectors.
    """
    Q = len(frame_ctx)
    sc.validate_power(Q)
    U = np.stack([nearest_select(sc, c.s_pred, sc.Nmax) for c in frame_ctx])
    p = np.full(Q, max(sc.Pt / Q, sc.Pmin))
    costs = [_total_cost(frame_ctx, U, p)]
    for _ in range(cfg.max_rounds):
        if cfg.selector == "dan":
            if params is None:
                raise InvalidArgumentError(
                    "selector 'dan' needs trained parameters (run the train command)")
            cands = _dan_select_batch(frame_ctx, sc, p, U, cfg, params)
        else:
            cands = [_select_one(c, sc, float(p[q]), U[q], cfg, params)
                     for q, c in enumerate(frame_ctx)]
        for q, c in enumerate(frame_ctx):
            old = cost_logdet(fim(c.jp, U[q], p[q], c.mbar))
            new = cost_logdet(fim(c.jp, cands[q], p[q], c.mbar))
            if new <= old:
                U[q] = cands[q]
        p = _allocate(frame_ctx, sc, U, cfg)
        costs.append(_total_cost(frame_ctx, U, p))
        if abs(costs[-1] - costs[-2]) < cfg.tol * max(1.0, abs(costs[-2])):
            break
    return U, p, costs


# ---------------------------------------------------------------------------
# EKF
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasUpdate:
    """One node's contribution to the stacked EKF update."""

    z: Measurement
    z_pred: Measurement
    H: np.ndarray
    R: np.ndarray


def _wrap_angle(d: float) -> float:
    w = (d + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def ekf_update(s_pred: TargetState, P_pred: np.ndarray,
               meas: list[MeasUpdate]) -> tuple[TargetState, np.ndarray]:
    """Stacked measurement update; returns the posterior mean and covariance.

    Angle innovations are wrapped to (-pi, pi].  Uses the Joseph form so
    the posterior covariance stays symmetric PSD.
    """
    if not meas:
        return s_pred, P_pred
    H = np.vstack([m.H for m in meas])
    R = np.zeros((3 * len(meas), 3 * len(meas)))
    y = np.empty(3 * len(meas))
    for i, m in enumerate(meas):
        R[3 * i:3 * i + 3, 3 * i:3 * i + 3] = m.R
        y[3 * i] = _wrap_angle(m.z.theta - m.z_pred.theta)
        y[3 * i + 1] = m.z.tau - m.z_pred.tau
        y[3 * i + 2] = m.z.mu - m.z_pred.mu
    S = H @ P_pred @ H.T + R
    try:
        c = cho_factor(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("innovation covariance is not positive-definite") from exc
    K = cho_solve(c, H @ P_pred).T
    x_post = s_pred.x + K @ y
    IKH = np.eye(4) - K @ H
    P_post = IKH @ P_pred @ IKH.T + K @ R @ K.T
    return TargetState(x=x_post, frame=s_pred.frame), 0.5 * (P_post + P_post.T)


# ---------------------------------------------------------------------------
# Tracking loop
# ---------------------------------------------------------------------------

def run_tracking(setup: SimSetup, K: int, cfg: AoConfig,
                 params: dan_mod.DanParams | None, seed: int) -> TrackRecord:
    """One Monte-Carlo trial of K tracking frames."""
    sc, motion = setup.scenario, setup.motion
    Q, N = setup.n_targets, sc.n_nodes
    rng_truth = [derive_rng(seed, "truth", q) for q in range(Q)]
    rng_meas = [derive_rng(seed, "meas", q) for q in range(Q)]

    truth = list(setup.targets0)
    est = list(setup.targets0)          # track initialised at the true state
    j0 = initial_info(setup.init_sigma_r, setup.init_sigma_v)
    P = [np.linalg.inv(j0.J) for _ in range(Q)]
    info = [j0 for _ in range(Q)]

    rec = TrackRecord(
        true_states=np.empty((K, Q, 4)), est_states=np.empty((K, Q, 4)),
        pcrlb_trace=np.empty((K, Q)), cost=np.empty((K, Q)),
        power=np.empty((K, Q)), selections=np.zeros((K, Q, N), dtype=int),
        pred_states=np.empty((K, Q, 4)), pcrlb_diag=np.empty((K, Q, 4)))

    for k in range(K):
        truth = [sample_transition(motion, t, rng_truth[q])
                 for q, t in enumerate(truth)]
        preds = [predict_state(motion, e) for e in est]
        P_pred = [motion.G @ P[q] @ motion.G.T + motion.Qn for q in range(Q)]
        frame_ctx = [FrameContext(jp=prior_info(motion, info[q]),
                                  mbar=meas_info_set(sc, preds[q]),
                                  s_pred=preds[q]) for q in range(Q)]
        U, p, ao_costs = ao_optimize(frame_ctx, sc, cfg, params)
        rec.ao_costs.append(ao_costs)

        for q in range(Q):
            updates = []
            for n in np.nonzero(U[q])[0]:
                z = sample_measurement(sc, p[q], truth[q], int(n), rng_meas[q])
                updates.append(MeasUpdate(
                    z=z,
                    z_pred=true_measurement(sc, preds[q], int(n)),
                    H=measurement_jacobian(sc, preds[q], int(n)),
                    R=measurement_covariance(sc, p[q], preds[q], int(n))))
            est[q], P[q] = ekf_update(preds[q], P_pred[q], updates)
            info[q] = fim(frame_ctx[q].jp, U[q], p[q], frame_ctx[q].mbar,
                          frame=k + 1)
            bound = pcrlb(info[q])
            rec.true_states[k, q] = truth[q].x
            rec.est_states[k, q] = est[q].x
            rec.pred_states[k, q] = preds[q].x
            rec.pcrlb_diag[k, q] = np.diag(bound)
            rec.pcrlb_trace[k, q] = float(np.trace(bound))
            rec.cost[k, q] = cost_logdet(info[q])
            rec.power[k, q] = p[q]
            rec.selections[k, q] = U[q].astype(int)
    return rec


def _run_one_trial(args) -> TrackRecord:
    setup, K, cfg, params, trial_seed = args
    return run_tracking(setup, K, cfg, params, trial_seed)


def run_trials(setup: SimSetup, K: int, cfg: AoConfig,
               params: dan_mod.DanParams | None, seed: int, n_trials: int,
               workers: int | None = None) -> list[TrackRecord]:
    """Monte-Carlo trials with per-trial derived seeds.

    Worker count comes from PMN_THREADS (default 1); results are ordered
    by trial index, so the reduction is identical regardless of pool size.
    """
    trial_seeds = [derive_seed(seed, "trial", i) for i in range(n_trials)]
    jobs = [(setup, K, cfg, params, ts) for ts in trial_seeds]
    if workers is None:
        workers = int(os.environ.get("PMN_THREADS", "1"))
    if workers <= 1 or n_trials <= 1:
        return [_run_one_trial(j) for j in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one_trial, jobs))


def monte_carlo_rmse(records: list[TrackRecord]) -> float:
    """Average position RMSE: RMS over trials, then mean over frames/targets."""
    if not records:
        raise InvalidArgumentError("no records")
    K, Q = records[0].true_states.shape[:2]
    if any(r.true_states.shape[:2] != (K, Q) for r in records):
        raise InvalidArgumentError("records have mismatched shapes")
    err = np.stack([r.true_states[:, :, [0, 2]] - r.est_states[:, :, [0, 2]]
                    for r in records])                  # (T, K, Q, 2)
    sq = np.sum(err**2, axis=3)                         # (T, K, Q)
    rms = np.sqrt(np.mean(sq, axis=0))                  # (K, Q)
    return float(np.mean(rms))


def records_to_csv(records: list[TrackRecord], path) -> None:
    """Per-frame rows: trial, frame, target, states, bound, cost, nodes, power."""
    header = ("trial,frame,target,true_rx,true_vx,true_ry,true_vy,"
              "est_rx,est_vx,est_ry,est_vy,pcrlb_trace,cost,selected_nodes,power")
    lines = [header]
    for t, rec in enumerate(records):
        K, Q = rec.true_states.shape[:2]
        for k in range(K):
            for q in range(Q):
                nodes = ";".join(str(i) for i in np.nonzero(rec.selections[k, q])[0])
                vals = [repr(float(v)) for v in rec.true_states[k, q]]
                vals += [repr(float(v)) for v in rec.est_states[k, q]]
                lines.append(
                    f"{t},{k},{q}," + ",".join(vals)
                    + f",{float(rec.pcrlb_trace[k, q])!r},{float(rec.cost[k, q])!r}"
                    + f",{nodes},{float(rec.power[k, q])!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
