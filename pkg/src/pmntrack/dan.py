"""Unfolded deep alternating network for sensing-node selection.

L cascaded layers replay the MM-ADMM iteration with two changes: the
gradient is replaced by Adam-style first-order momentum, and the scalar
curvature bound is replaced by a diagonal built from second-order
momentum with a learnable per-layer step size,

    m_l   = b1l * m_{l-1} + (1 - b1l) * d_u,        b1l = beta1 * eta1^l
    v_l   = beta2 * v_{l-1} + (1 - beta2) * d_u^2
    Phi_l = diag(sqrt(|v_l|) / alpha_1l + rho_al),  alpha_1l = abar_l / sqrt(l)

followed by the same inner ADMM on the sum/box constraints.  Phi is
clamped elementwise to be nondecreasing across layers so the inverse
learning rate never grows, which is the hypothesis of the regret bound
R_L <= C1 sqrt(L) + C2 checked by ``regret_bound_check``.

Only abar_{1..L} and beta1 train (L+1 scalars); gradients come from
central finite differences, so the whole forward stays autodiff-free.
Probe parameter sets and dataset samples are batched through one
vectorised forward pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import exhaustive_select, nearest_select
from .errors import InvalidArgumentError, SchemaError
from .fisher import FisherState, MeasInfoSet, SelectionContext, cost_logdet, fim, initial_info, meas_info_set, prior_info
from .mm_admm import blended_start, penalty_value_grad
from .scenario import SimSetup, TargetState, config_fingerprint
from .seeding import derive_rng


@dataclass(frozen=True)
class DanParams:
    """Learnable (alpha_bar, beta1) plus the fixed network hyper-parameters."""

    alpha_bar: np.ndarray          # (L,) per-layer step sizes
    beta1: float = 0.99
    beta2: float = 0.999
    eta1: float = 0.99
    eta_a: float = 0.99
    rho_a: float = 1e2
    rho: float = 1.0
    gamma: float = 1e4
    alpha_lo: float = 0.01
    alpha_hi: float = 1.0

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        if np.any(ab < self.alpha_lo - 1e-12) or np.any(ab > self.alpha_hi + 1e-12):
            raise InvalidArgumentError("alpha_bar entries must lie in [alpha_lo, alpha_hi]")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise InvalidArgumentError("beta1 and beta2 must lie in (0, 1)")
        if not (0.0 < self.eta1 < 1.0 and 0.0 < self.eta_a < 1.0):
            raise InvalidArgumentError("eta1 and eta_a must lie in (0, 1)")
        if self.beta1 * self.eta1 >= 1.0 or self.beta1 >= math.sqrt(self.beta2):
            raise InvalidArgumentError("need beta1*eta1 < 1 and beta1 < sqrt(beta2)")
        if self.rho_a <= 0:
            raise InvalidArgumentError("rho_a must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.alpha_bar)


def default_params(layers: int = 10) -> DanParams:
    return DanParams(alpha_bar=np.full(layers, 0.15))


@dataclass(frozen=True)
class LayerState:
    u: np.ndarray
    m_hat: np.ndarray
    v_hat: np.ndarray
    layer: int
    phi: np.ndarray | None = None  # inverse-learning-rate diagonal of this layer


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    n_train: int = 500
    epochs: int = 5
    batch_size: int = 32
    fd_step: float = 1e-3
    seed: int = 0
    inner_iters: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if min(self.lr, self.n_train, self.epochs, self.batch_size,
               self.fd_step, self.inner_iters, self.tol) <= 0:
            raise InvalidArgumentError("TrainConfig values must be positive")


@dataclass
class DanTrace:
    """Per-layer record of one forward pass, rich enough for the regret check."""

    cost_per_iter: list[float] = field(default_factory=list)
    u_per_iter: list[np.ndarray] = field(default_factory=list)
    residual_per_iter: list[float] = field(default_factory=list)
    grads: list[np.ndarray] = field(default_factory=list)
    phi_diags: list[np.ndarray] = field(default_factory=list)
    b_hats: list[np.ndarray] = field(default_factory=list)
    ctx: SelectionContext | None = None
    p: float = 0.0
    nmax: int = 0


@dataclass(frozen=True)
class RegretReport:
    R_L: float
    bound: float
    C1: float
    C2: float
    constants: dict
    lr_decay_ok: bool


# ---------------------------------------------------------------------------
# Batched forward pass
# ---------------------------------------------------------------------------

def _grad_batch(jp: np.ndarray, mbar: np.ndarray, p: np.ndarray,
                u: np.ndarray) -> np.ndarray:
    """Cost gradients for a batch: (B,N) from jp (B,4,4), mbar (B,N,4,4)."""
    J = jp + p[:, None, None] * np.einsum("bn,bnij->bij", u, mbar)
    B = np.linalg.solve(J[:, None, :, :], mbar)       # J^-1 Mbar_n
    return -p[:, None] * np.einsum("bnii->bn", B)


def _project_batch(u: np.ndarray, nmax: float) -> np.ndarray:
    """Rowwise projection onto {0 <= u <= 1, 1^T u = nmax}."""
    in_box = np.all((u >= 0.0) & (u <= 1.0), axis=1)
    sum_ok = np.abs(u.sum(axis=1) - nmax) < 1e-12
    if np.all(in_box & sum_ok):
        return u
    lo = u.min(axis=1) - 1.0
    hi = u.max(axis=1)
    for _ in range(80):
        tau = 0.5 * (lo + hi)
        s = np.clip(u - tau[:, None], 0.0, 1.0).sum(axis=1)
        too_big = s > nmax
        lo = np.where(too_big, tau, lo)
        hi = np.where(too_big, hi, tau)
    return np.clip(u - (0.5 * (lo + hi))[:, None], 0.0, 1.0)


def _restore_batch(u: np.ndarray, v: np.ndarray, nmax: float) -> np.ndarray:
    """Rowwise consensus restore: keep v's pinned zeros, fix the sum.

    Mirrors mm_admm.consensus_restore for batched forwards; rows whose
    unpinned entries cannot absorb the budget fall back to the plain
    projection of u.
    """
    B = u.shape[0]
    active = v > 0.0
    lo = np.full(B, -1.0)
    hi = np.full(B, 1.0)
    for _ in range(100):
        tau = 0.5 * (lo + hi)
        s = np.sum(np.clip(v + tau[:, None], 0.0, 1.0) * active, axis=1)
        low = s < nmax
        lo = np.where(low, tau, lo)
        hi = np.where(low, hi, tau)
    out = np.where(active, np.clip(v + (0.5 * (lo + hi))[:, None], 0.0, 1.0), 0.0)
    bad = (active.sum(axis=1) < nmax - 1e-9) | \
          (np.abs(out.sum(axis=1) - nmax) > 1e-8)
    if np.any(bad):
        out[bad] = _project_batch(u[bad], nmax)
    return out


def _admm_inner_batch(anchor: np.ndarray, grad: np.ndarray, phi: np.ndarray,
                      d_gamma: np.ndarray, rho: float, rho_al: float,
                      max_iters: int, tol: float):
    u = anchor.copy()
    v = np.minimum(np.maximum(anchor, 0.0), 1.0)
    z = np.zeros_like(anchor)
    w = 1.0 / phi
    w_sum = w.sum(axis=1)
    base = grad + rho_al * anchor         # constant part of d_m
    pen = (rho / rho_al) * d_gamma
    for _ in range(max_iters):
        d_m = base - rho_al * (v - z)
        nu = (w * d_m).sum(axis=1) / w_sum
        u_next = anchor - w * (d_m - nu[:, None])
        v = np.minimum(np.maximum(u_next - pen + z, 0.0), 1.0)
        z = z + u_next - v
        delta = float(np.max(np.abs(u_next - u)))
        u = u_next
        if delta < tol:
            break
    return u, v, z


def _layer_step(layer: int, u, m_hat, v_hat, phi_prev, jp, mbar, p,
                alpha_bar_l, beta1, params: DanParams, nmax: float,
                inner_iters: int, tol: float):
    """One DAN layer on a batch; ``layer`` is the 1-based layer index."""
    d_u = _grad_batch(jp, mbar, p, u)
    b1l = beta1 * params.eta1 ** layer
    m_hat = b1l[:, None] * m_hat + (1.0 - b1l)[:, None] * d_u
    v_hat = params.beta2 * v_hat + (1.0 - params.beta2) * d_u**2
    alpha_1l = alpha_bar_l / math.sqrt(layer)
    rho_al = params.rho_a * params.eta_a ** layer
    phi = np.sqrt(np.abs(v_hat)) / alpha_1l[:, None] + rho_al
    if phi_prev is not None:
        # keep the inverse learning rate nonincreasing (regret-bound hypothesis)
        phi = np.maximum(phi, phi_prev)
    d_gamma = params.gamma * np.exp(-params.gamma * np.clip(u, 0.0, None))
    u_star, v_star, z_star = _admm_inner_batch(
        u, m_hat, phi, d_gamma, params.rho, rho_al, inner_iters, tol)
    u_next = _restore_batch(u_star, v_star, nmax)
    return u_next, m_hat, v_hat, phi, d_u, v_star - z_star


def _forward_batch(jp, mbar, p, u0, alpha_bar, beta1, params: DanParams,
                   nmax: float, inner_iters: int = 200, tol: float = 1e-6):
    """Run all layers on a batch; returns the per-layer outputs (L, B, N)."""
    B, N = u0.shape
    u = u0.copy()
    m_hat = np.zeros((B, N))
    v_hat = np.zeros((B, N))
    phi = None
    outs = np.empty((params.n_layers, B, N))
    for l in range(1, params.n_layers + 1):
        u, m_hat, v_hat, phi, _, _ = _layer_step(
            l, u, m_hat, v_hat, phi, jp, mbar, p, alpha_bar[:, l - 1], beta1,
            params, nmax, inner_iters, tol)
        outs[l - 1] = u
    return outs


# ---------------------------------------------------------------------------
# Single-instance API
# ---------------------------------------------------------------------------

def dan_layer(state: LayerState, ctx: SelectionContext, p: float,
              params: DanParams, nmax: int | None = None,
              inner_iters: int = 200, tol: float = 1e-6) -> LayerState:
    """Apply the next layer (index state.layer + 1) to a single instance."""
    layer = state.layer + 1
    if not 1 <= layer <= params.n_layers:
        raise InvalidArgumentError("layer index beyond configured depth")
    if nmax is None:
        nmax = int(round(float(np.sum(state.u))))
    u, m_hat, v_hat, phi, _, _ = _layer_step(
        layer, state.u[None, :], state.m_hat[None, :], state.v_hat[None, :],
        None if state.phi is None else state.phi[None, :],
        ctx.jp[None, :, :], ctx.mbar.Mbar[None, :, :, :], np.array([p]),
        np.array([params.alpha_bar[layer - 1]]), np.array([params.beta1]),
        params, float(nmax), inner_iters, tol)
    return LayerState(u=u[0], m_hat=m_hat[0], v_hat=v_hat[0], layer=layer,
                      phi=phi[0])


def dan_forward(ctx: SelectionContext, p: float, u0: np.ndarray,
                params: DanParams, inner_iters: int = 200,
                tol: float = 1e-6) -> tuple[list[np.ndarray], DanTrace]:
    """All L layers on one instance, with the full diagnostic trace."""
    u0 = np.asarray(u0, dtype=float)
    nmax = int(round(float(np.sum(u0))))
    trace = DanTrace(ctx=ctx, p=p, nmax=nmax)
    trace.cost_per_iter.append(cost_logdet(fim(ctx.jp, u0, p, ctx.mbar)))
    trace.u_per_iter.append(u0.copy())
    trace.residual_per_iter.append(0.0)

    state = LayerState(u=u0, m_hat=np.zeros_like(u0), v_hat=np.zeros_like(u0),
                       layer=0)
    u_layers: list[np.ndarray] = []
    for l in range(1, params.n_layers + 1):
        u, m_hat, v_hat, phi, d_u, b_hat = _layer_step(
            l, state.u[None, :], state.m_hat[None, :], state.v_hat[None, :],
            None if state.phi is None else state.phi[None, :],
            ctx.jp[None, :, :], ctx.mbar.Mbar[None, :, :, :], np.array([p]),
            np.array([params.alpha_bar[l - 1]]), np.array([params.beta1]),
            params, float(nmax), inner_iters, tol)
        delta = float(np.max(np.abs(u[0] - state.u)))
        state = LayerState(u=u[0], m_hat=m_hat[0], v_hat=v_hat[0], layer=l,
                           phi=phi[0])
        u_layers.append(state.u.copy())
        trace.cost_per_iter.append(cost_logdet(fim(ctx.jp, state.u, p, ctx.mbar)))
        trace.u_per_iter.append(state.u.copy())
        trace.residual_per_iter.append(delta)
        trace.grads.append(d_u[0])
        trace.phi_diags.append(phi[0])
        trace.b_hats.append(b_hat[0])
    return u_layers, trace


def penalized_cost(ctx: SelectionContext, p: float, u: np.ndarray,
                   rho: float, gamma: float) -> float:
    """The objective the regret is measured on: cost + rho * P_gamma."""
    val, _ = penalty_value_grad(np.clip(u, 0.0, None), gamma)
    return cost_logdet(fim(ctx.jp, np.clip(u, 0.0, 1.0), p, ctx.mbar)) + rho * val


def pick_reference(trace: DanTrace, candidates: list[np.ndarray],
                   params: DanParams) -> np.ndarray:
    """Best feasible point among the given candidates and the trace iterates."""
    pool = [np.asarray(c, dtype=float) for c in candidates]
    pool.extend(trace.u_per_iter)
    costs = [penalized_cost(trace.ctx, trace.p, c, params.rho, params.gamma)
             for c in pool]
    return pool[int(np.argmin(costs))]


def regret_bound_check(trace: DanTrace, params: DanParams,
                       u_star: np.ndarray) -> RegretReport:
    """Empirical regret vs the C1 sqrt(L) + C2 bound from the run trace."""
    if trace.ctx is None or not trace.phi_diags:
        raise InvalidArgumentError("trace lacks the per-layer fields")
    L = len(trace.phi_diags)
    n = trace.u_per_iter[0].shape[0]
    g_star = penalized_cost(trace.ctx, trace.p, u_star, params.rho, params.gamma)
    anchors = trace.u_per_iter[:L]
    R_L = float(sum(
        penalized_cost(trace.ctx, trace.p, u, params.rho, params.gamma) - g_star
        for u in anchors))

    d_delta = 2.0 * min(trace.nmax, n - trace.nmax) if n > trace.nmax else 0.0
    d_u1 = max(float(np.abs(g).sum()) for g in trace.grads)
    d_phi = max(float(np.max(1.0 / phi)) for phi in trace.phi_diags)
    d_b1 = max(float(np.abs(b).sum()) for b in trace.b_hats)
    d_b2 = max(float(b @ b) for b in trace.b_hats)
    d_du2 = max(float(np.sum((u - u_star) ** 2)) for u in anchors)

    b1, b2, e1, ea = params.beta1, params.beta2, params.eta1, params.eta_a
    ra, am, ap = params.rho_a, params.alpha_lo, params.alpha_hi
    sq = math.sqrt(1.0 - b2)
    one_sb2 = 1.0 - math.sqrt(b2)
    c1 = sq * d_u1 * d_delta / (am * one_sb2 * (1.0 - b1))
    c2 = (
        2.0 * ra * d_delta * ea / (1.0 - b1)
        + sq * d_u1 * d_delta / (am * one_sb2 * (1.0 - b1))
        + ap * (3.0 + b1) * d_u1
        / (2.0 * (1.0 - b1) ** 2 * (1.0 - b1 / math.sqrt(b2)) * sq * (1.0 - e1**2))
        + ra * d_phi * (d_b1 + d_b2) / (2.0 * (1.0 - ea) * (1.0 - b1))
        + d_u1 * d_phi / (2.0 * (1.0 - e1) * (1.0 - b1) ** 2)
        + b1 * sq * d_u1 * d_delta / (2.0 * am * one_sb2 * (1.0 - e1) ** 2 * (1.0 - b1))
        + b1 * ra * d_delta / (2.0 * (1.0 - e1 * ea) * (1.0 - b1))
        + ra * sq * d_u1 * d_delta / (2.0 * am * one_sb2 * (1.0 - ea) ** 2 * (1.0 - b1))
        + ra**2 * d_delta / (2.0 * (1.0 - ea**2) * (1.0 - b1))
        + 3.0 * ra**2 * d_phi * d_b2 / (2.0 * (1.0 - ea**2) * (1.0 - b1))
        + 3.0 * d_u1**2 * d_phi / ((1.0 - e1**2) * (1.0 - b1) ** 3)
        + 3.0 * ra**2 * d_b1**2 * d_phi / ((1.0 - ea**2) * (1.0 - b1))
        + d_du2 * d_phi / (1.0 - b1)
        + (d_u1 / ((1.0 - b1) * (1.0 - e1) ** 2) + ra * d_b1 / (1.0 - ea) ** 2)
        * sq * d_u1 * d_delta / (2.0 * am * one_sb2 * (1.0 - b1))
        + (d_u1 / ((1.0 - b1) * (1.0 - e1) * (1.0 - ea)) + ra * d_b1 / (1.0 - ea) ** 2)
        * d_delta * ra / (2.0 * (1.0 - b1))
    )
    lr_ok = all(
        np.all(trace.phi_diags[i] >= trace.phi_diags[i - 1] - 1e-12)
        for i in range(1, L))
    constants = {"D_Delta": d_delta, "D_u1": d_u1, "D_phi": d_phi,
                 "D_b1": d_b1, "D_b2": d_b2, "D_Du2": d_du2}
    return RegretReport(R_L=R_L, bound=c1 * math.sqrt(L) + c2, C1=c1, C2=c2,
                        constants=constants, lr_decay_ok=bool(lr_ok))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainInstance:
    """One labelled selection problem: context, power, start, ES label."""

    x: np.ndarray
    jitter: float
    p: float
    jp: np.ndarray
    mbar: MeasInfoSet
    u0: np.ndarray
    label: np.ndarray


def make_instance(setup: SimSetup, x: np.ndarray, jitter: float, p: float,
                  es_cap: int = 10**6) -> TrainInstance:
    """Build the (Jp, Mbar, u0, ES label) tuple for one placement."""
    sc = setup.scenario
    s = TargetState(x=np.asarray(x, dtype=float))
    j0 = initial_info(setup.init_sigma_r, setup.init_sigma_v)
    jp = prior_info(setup.motion, FisherState(J=j0.J * jitter))
    mbar = meas_info_set(sc, s)
    u0 = blended_start(nearest_select(sc, s, sc.Nmax), sc.Nmax)
    label = exhaustive_select(jp, mbar, p, sc.Nmax, cap=es_cap)
    return TrainInstance(x=np.asarray(x, dtype=float), jitter=jitter, p=p,
                         jp=jp, mbar=mbar, u0=u0, label=label)


def make_training_set(setup: SimSetup, n: int, seed: int,
                      jitter_range: tuple[float, float] = (1.0, 64.0),
                      es_cap: int = 10**6) -> list[TrainInstance]:
    """Random placements in the node region with ES labels.

    The prior scale is jittered log-uniformly so the selector sees both
    fresh and information-rich priors, as it does across tracking frames.
    """
    sc = setup.scenario
    rng = derive_rng(seed, "train-set")
    span = max(float(np.abs(np.array([nd.position for nd in sc.nodes])).max()), 50.0)
    p_hi = sc.Pt - max(setup.n_targets - 1, 1) * sc.Pmin
    out = []
    for _ in range(n):
        pos = rng.uniform(-span, span, size=2)
        vel = rng.uniform(-12.0, 12.0, size=2)
        jitter = float(np.exp(rng.uniform(np.log(jitter_range[0]),
                                          np.log(jitter_range[1]))))
        p = float(rng.uniform(sc.Pmin, max(p_hi, sc.Pmin * 1.5)))
        x = np.array([pos[0], vel[0], pos[1], vel[1]])
        out.append(make_instance(setup, x, jitter, p, es_cap=es_cap))
    return out


def save_dataset(instances: list[TrainInstance], path, fingerprint: str) -> None:
    """JSON-lines dump; contexts are rebuilt from the scenario on load."""
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps({"scenario": fingerprint}) + "\n")
        for inst in instances:
            fh.write(json.dumps({
                "x": [float(v) for v in inst.x],
                "jitter": inst.jitter,
                "p": inst.p,
                "u0": [float(v) for v in inst.u0],
                "label": [int(v) for v in inst.label],
            }) + "\n")


def load_dataset(path, setup: SimSetup) -> list[TrainInstance]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise SchemaError("empty dataset file")
    head = json.loads(lines[0])
    expect = config_fingerprint(setup.raw)
    if head.get("scenario") != expect:
        raise SchemaError(
            f"dataset scenario fingerprint {head.get('scenario')!r} does not "
            f"match the config ({expect!r})")
    out = []
    for line in lines[1:]:
        rec = json.loads(line)
        inst = make_instance(setup, np.array(rec["x"]), rec["jitter"], rec["p"])
        out.append(replace(inst, u0=np.array(rec["u0"], dtype=float),
                           label=np.array(rec["label"], dtype=float)))
    return out


def _theta_get(params: DanParams) -> np.ndarray:
    return np.concatenate([np.asarray(params.alpha_bar, dtype=float),
                           [params.beta1]])


def _theta_set(params: DanParams, theta: np.ndarray) -> DanParams:
    L = params.n_layers
    beta1_cap = min(0.999, math.sqrt(params.beta2) - 1e-3)
    alpha = np.clip(theta[:L], params.alpha_lo, params.alpha_hi)
    beta1 = float(np.clip(theta[L], 1e-6, beta1_cap))
    return replace(params, alpha_bar=alpha, beta1=beta1)


def apply_sgd(params: DanParams, grad: np.ndarray, lr: float) -> DanParams:
    """One projected SGD step on (alpha_bar, beta1)."""
    return _theta_set(params, _theta_get(params) - lr * np.asarray(grad))


def _stack_batch(batch: list[TrainInstance]):
    jp = np.stack([inst.jp for inst in batch])
    mbar = np.stack([inst.mbar.Mbar for inst in batch])
    p = np.array([inst.p for inst in batch])
    u0 = np.stack([inst.u0 for inst in batch])
    labels = np.stack([inst.label for inst in batch])
    return jp, mbar, p, u0, labels


def _batch_losses(jp, mbar, p, u0, labels, alpha_rows, beta1_rows,
                  params: DanParams, nmax: float, tcfg: TrainConfig) -> np.ndarray:
    """Mean-over-layers MSE loss for every (sample, parameter-row) pair."""
    m, V = u0.shape[0], alpha_rows.shape[0]
    rep = lambda a, reps: np.repeat(a, reps, axis=0)
    outs = _forward_batch(
        rep(jp, V), rep(mbar, V), rep(p, V), rep(u0, V),
        np.tile(alpha_rows, (m, 1)), np.tile(beta1_rows, m),
        params, nmax, tcfg.inner_iters, tcfg.tol)
    labels_rep = rep(labels, V)
    per_row = np.mean(np.sum((outs - labels_rep[None, :, :]) ** 2, axis=2), axis=0)
    return per_row.reshape(m, V)


def finite_diff_grad(batch: list[TrainInstance], params: DanParams,
                     tcfg: TrainConfig, nmax: float) -> tuple[np.ndarray, float]:
    """Central-difference gradient of the batch loss w.r.t. (alpha_bar, beta1).

    Builds 2(L+1)+1 parameter rows (probes plus the centre) and runs them
    through one batched forward per sample.
    """
    L = params.n_layers
    theta = _theta_get(params)
    n_par = L + 1
    beta1_cap = min(0.999, math.sqrt(params.beta2) - 1e-3)
    lo = np.concatenate([np.full(L, params.alpha_lo), [1e-6]])
    hi = np.concatenate([np.full(L, params.alpha_hi), [beta1_cap]])

    rows = [theta]
    spans = np.empty(n_par)
    for j in range(n_par):
        h = tcfg.fd_step * max(abs(theta[j]), 1e-2)
        up = np.clip(theta[j] + h, lo[j], hi[j])
        dn = np.clip(theta[j] - h, lo[j], hi[j])
        spans[j] = up - dn
        for val in (up, dn):
            probe = theta.copy()
            probe[j] = val
            rows.append(probe)
    rows = np.stack(rows)                       # (2*n_par + 1, n_par)
    jp, mbar, p, u0, labels = _stack_batch(batch)
    losses = _batch_losses(jp, mbar, p, u0, labels, rows[:, :L], rows[:, L],
                           params, nmax, tcfg)  # (m, V)
    mean_loss = losses.mean(axis=0)             # over samples
    grad = np.empty(n_par)
    for j in range(n_par):
        up, dn = mean_loss[1 + 2 * j], mean_loss[2 + 2 * j]
        grad[j] = (up - dn) / spans[j] if spans[j] > 0 else 0.0
    return grad, float(mean_loss[0])


def train_dan(dataset: list[TrainInstance], params0: DanParams,
              tcfg: TrainConfig) -> tuple[DanParams, list[float]]:
    """Minibatch SGD on the layer-averaged MSE against the ES labels."""
    if not dataset:
        raise InvalidArgumentError("empty training dataset")
    nmax = float(round(float(np.sum(dataset[0].u0))))
    params = params0
    rng = derive_rng(tcfg.seed, "train-sgd")
    losses: list[float] = []
    for _ in range(tcfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(dataset), tcfg.batch_size):
            batch = [dataset[i] for i in order[start:start + tcfg.batch_size]]
            grad, loss = finite_diff_grad(batch, params, tcfg, nmax)
            params = apply_sgd(params, grad, tcfg.lr)
            epoch_loss += loss * len(batch)
            seen += len(batch)
        losses.append(epoch_loss / seen)
    return params, losses


def dataset_loss(dataset: list[TrainInstance], params: DanParams,
                 tcfg: TrainConfig) -> float:
    """Mean loss at fixed parameters (no probes)."""
    nmax = float(round(float(np.sum(dataset[0].u0))))
    jp, mbar, p, u0, labels = _stack_batch(dataset)
    losses = _batch_losses(jp, mbar, p, u0, labels,
                           np.asarray(params.alpha_bar)[None, :],
                           np.array([params.beta1]), params, nmax, tcfg)
    return float(losses.mean())


# ---------------------------------------------------------------------------
# Parameter persistence
# ---------------------------------------------------------------------------

PARAMS_VERSION = 1


def save_params(params: DanParams, path, seed: int | None = None,
                scenario_fingerprint: str | None = None,
                dataset_fingerprint: str | None = None) -> None:
    doc = {
        "version": PARAMS_VERSION,
        "alpha_bar": [float(a) for a in params.alpha_bar],
        "beta1": params.beta1,
        "beta2": params.beta2,
        "eta1": params.eta1,
        "eta_a": params.eta_a,
        "rho_a": params.rho_a,
        "rho": params.rho,
        "gamma": params.gamma,
        "alpha_lo": params.alpha_lo,
        "alpha_hi": params.alpha_hi,
        "seed": seed,
        "scenario_fingerprint": scenario_fingerprint,
        "dataset_fingerprint": dataset_fingerprint,
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> DanParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != PARAMS_VERSION:
        raise SchemaError(f"unsupported params version {doc.get('version')!r}")
    return DanParams(
        alpha_bar=np.array(doc["alpha_bar"], dtype=float),
        beta1=float(doc["beta1"]), beta2=float(doc["beta2"]),
        eta1=float(doc["eta1"]), eta_a=float(doc["eta_a"]),
        rho_a=float(doc["rho_a"]), rho=float(doc["rho"]),
        gamma=float(doc["gamma"]), alpha_lo=float(doc["alpha_lo"]),
        alpha_hi=float(doc["alpha_hi"]))
