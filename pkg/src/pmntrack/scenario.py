"""Network geometry, target kinematics, and the measurement model.

State vector convention: ``x = [r_x, v_x, r_y, v_y]`` (metres, m/s).
Measurements per (target, node) pair are AOA theta (rad), round-trip
delay tau (s), and bistatic Doppler mu (Hz).  All quantities are SI
internally; dBm/dB appear only at the JSON config boundary.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, SchemaError, SingularGeometryError

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watt_to_dbm(x: float) -> float:
    return 10.0 * math.log10(x) + 30.0


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class MotionModel:
    """Near-constant-velocity model: transition G and process-noise cov Qn."""

    dt: float
    qs: float
    G: np.ndarray
    Qn: np.ndarray


@dataclass(frozen=True)
class TargetState:
    x: np.ndarray              # [r_x, v_x, r_y, v_y]
    frame: int = 0

    @property
    def position(self) -> np.ndarray:
        return self.x[[0, 2]]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[[1, 3]]


@dataclass(frozen=True)
class SensingNode:
    position: np.ndarray       # 2-vector, m
    array_axis: np.ndarray     # unit 2-vector along the receive array

    def __post_init__(self):
        axis = np.asarray(self.array_axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise InvalidArgumentError("array_axis must be a unit vector")


@dataclass(frozen=True)
class Measurement:
    theta: float               # AOA, rad, in [0, pi]
    tau: float                 # delay, s
    mu: float                  # Doppler, Hz

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.tau, self.mu])


@dataclass(frozen=True)
class Scenario:
    """Static network description consumed by every other module."""

    bs_position: np.ndarray
    nodes: tuple[SensingNode, ...]
    wavelength: float          # m
    gamma0: float              # linear path gain at reference distance
    sigma2: float              # noise power, W
    Pt: float                  # total transmit power, W
    Pmin: float                # per-target power floor, W
    Nmax: int                  # node budget per target
    base_cov: np.ndarray       # 3x3 diagonal, SNR-independent covariance
    c: float = SPEED_OF_LIGHT
    dist_mode: str = "node"    # "node" (target-to-SN) or "roundtrip"

    def __post_init__(self):
        if not (len(self.nodes) >= self.Nmax >= 1):
            raise InvalidArgumentError("need N >= Nmax >= 1")
        if np.any(np.diag(self.base_cov) <= 0):
            raise InvalidArgumentError("base_cov diagonal must be positive")
        if self.dist_mode not in ("node", "roundtrip"):
            raise InvalidArgumentError(f"unknown dist_mode {self.dist_mode!r}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def validate_power(self, q_targets: int) -> None:
        if self.Pt < q_targets * self.Pmin - 1e-12:
            raise InvalidArgumentError("Pt must cover Q * Pmin")


def build_motion_model(dt: float, qs: float) -> MotionModel:
    """Transition matrix G = I2 (x) [[1, dt], [0, 1]] and its noise covariance.

    Qn = qs * I2 (x) [[dt^3/3, dt^2/2], [dt^2/2, dt]], which is SPD for
    dt, qs > 0.
    """
    if dt <= 0 or qs <= 0:
        raise InvalidArgumentError("dt and qs must be positive")
    block_g = np.array([[1.0, dt], [0.0, 1.0]])
    block_q = np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    G = np.kron(np.eye(2), block_g)
    Qn = qs * np.kron(np.eye(2), block_q)
    return MotionModel(dt=dt, qs=qs, G=G, Qn=Qn)


def predict_state(model: MotionModel, s: TargetState) -> TargetState:
    """One-step prediction G @ x with the frame counter advanced."""
    return TargetState(x=model.G @ s.x, frame=s.frame + 1)


def sample_transition(model: MotionModel, s: TargetState,
                      rng: np.random.Generator) -> TargetState:
    """Propagate through the motion model plus a process-noise draw."""
    noise = np.linalg.cholesky(model.Qn) @ rng.standard_normal(4)
    return TargetState(x=model.G @ s.x + noise, frame=s.frame + 1)


def _geometry(sc: Scenario, s: TargetState, n: int):
    """Offsets and distances to node n and the BS; raises on coincidence."""
    r = s.position
    d_node = r - sc.nodes[n].position
    d_bs = r - np.asarray(sc.bs_position, dtype=float)
    dist_node = float(np.linalg.norm(d_node))
    dist_bs = float(np.linalg.norm(d_bs))
    if dist_node <= 0.0 or dist_bs <= 0.0:
        raise SingularGeometryError(
            f"target coincides with node {n} or the BS")
    return d_node, dist_node, d_bs, dist_bs


def true_measurement(sc: Scenario, s: TargetState, n: int) -> Measurement:
    """Noise-free (theta, tau, mu) of the target seen by node n."""
    d_node, dist_node, d_bs, dist_bs = _geometry(sc, s, n)
    v = s.velocity
    cos_t = float(np.clip(sc.nodes[n].array_axis @ d_node / dist_node, -1.0, 1.0))
    theta = math.acos(cos_t)
    tau = (dist_node + dist_bs) / sc.c
    mu = (v @ d_node / dist_node + v @ d_bs / dist_bs) / sc.wavelength
    return Measurement(theta=theta, tau=tau, mu=mu)


def measurement_jacobian(sc: Scenario, s_pred: TargetState, n: int) -> np.ndarray:
    """Analytic 3x4 Jacobian of (theta, tau, mu) w.r.t. [r_x, v_x, r_y, v_y].

    Evaluated at the supplied (predicted) state.  Raises when the AOA is
    at a branch endpoint (target on the array axis) where d theta is
    unbounded.
    """
    d_node, dist_node, d_bs, dist_bs = _geometry(sc, s_pred, n)
    v = s_pred.velocity
    e = sc.nodes[n].array_axis
    u_node = d_node / dist_node
    u_bs = d_bs / dist_bs

    cos_t = float(np.clip(e @ u_node, -1.0, 1.0))
    sin2 = 1.0 - cos_t * cos_t
    if sin2 < 1e-18:
        raise SingularGeometryError(
            f"AOA at branch endpoint for node {n} (target on array axis)")
    dtheta_dr = -(e - cos_t * u_node) / (dist_node * math.sqrt(sin2))
    dtau_dr = (u_node + u_bs) / sc.c
    dmu_dr = ((v - (v @ u_node) * u_node) / dist_node
              + (v - (v @ u_bs) * u_bs) / dist_bs) / sc.wavelength
    dmu_dv = (u_node + u_bs) / sc.wavelength

    H = np.zeros((3, 4))
    H[0, [0, 2]] = dtheta_dr
    H[1, [0, 2]] = dtau_dr
    H[2, [0, 2]] = dmu_dr
    H[2, [1, 3]] = dmu_dv
    return H


def _effective_distance(sc: Scenario, s: TargetState, n: int) -> float:
    d_node, dist_node, _, dist_bs = _geometry(sc, s, n)
    if sc.dist_mode == "roundtrip":
        return 0.5 * (dist_node + dist_bs)
    return dist_node


def snr(sc: Scenario, p: float, s: TargetState, n: int) -> float:
    """SNR = p * gamma0 / (sigma^2 * d^2) with d the target-node distance."""
    if p <= 0:
        raise InvalidArgumentError("power must be positive")
    d = _effective_distance(sc, s, n)
    return p * sc.gamma0 / (sc.sigma2 * d * d)


def measurement_covariance_base(sc: Scenario, s: TargetState, n: int) -> np.ndarray:
    """Power-independent part of the covariance: Sigma_bar = p * Sigma."""
    d = _effective_distance(sc, s, n)
    return (sc.sigma2 * d * d / sc.gamma0) * sc.base_cov


def measurement_covariance(sc: Scenario, p: float, s: TargetState, n: int) -> np.ndarray:
    """Diagonal covariance of the local estimation error at power p.

    Sigma = base_cov / SNR, i.e. it scales as 1/p and as d^2.
    """
    if p <= 0:
        raise InvalidArgumentError("power must be positive")
    return measurement_covariance_base(sc, s, n) / p


def sample_measurement(sc: Scenario, p: float, s_true: TargetState, n: int,
                       rng: np.random.Generator) -> Measurement:
    """Noise-free measurement plus a Gaussian draw with the model covariance."""
    z = true_measurement(sc, s_true, n).as_array()
    sigma = np.sqrt(np.diag(measurement_covariance(sc, p, s_true, n)))
    z = z + sigma * rng.standard_normal(3)
    return Measurement(theta=float(z[0]), tau=float(z[1]), mu=float(z[2]))


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimSetup:
    """A full simulation setup parsed from one JSON config."""

    scenario: Scenario
    motion: MotionModel
    targets0: tuple[TargetState, ...]
    init_sigma_r: float = 10.0
    init_sigma_v: float = 5.0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_targets(self) -> int:
        return len(self.targets0)


def make_uniform_nodes(n: int, area: float, seed: int) -> list[dict]:
    """Node dicts uniform over a centred square, axes at random angles."""
    rng = np.random.default_rng(seed)
    nodes = []
    for _ in range(n):
        pos = rng.uniform(-area / 2.0, area / 2.0, size=2)
        ang = rng.uniform(0.0, np.pi)
        nodes.append({"position": [float(pos[0]), float(pos[1])],
                      "array_axis": [float(np.cos(ang)), float(np.sin(ang))]})
    return nodes


def default_config(n_nodes: int = 32, area: float = 400.0, seed: int = 1234,
                   nmax: int = 4) -> dict:
    """Config dict with the standard mmWave network parametrisation."""
    return {
        "bs_position": [0.0, 0.0],
        "nodes": make_uniform_nodes(n_nodes, area, seed),
        "carrier_hz": 28e9,
        "gamma0_db": -61.4,
        "noise_dbm": -90.0,
        "pt_dbm": 30.0,
        "pmin_dbm": 20.0,
        "nmax": nmax,
        "base_cov_diag": [4.0, 1.0, 1.0],
        "dist_mode": "node",
        "dt": 0.5,
        "qs": 5.0,
        "init_sigma_r": 10.0,
        "init_sigma_v": 5.0,
        "targets": [
            {"position": [124.0, 124.0], "velocity": [-10.0, 0.0]},
            {"position": [-134.0, 134.0], "velocity": [0.0, -10.0]},
            {"position": [-144.0, -144.0], "velocity": [10.0, 0.0]},
        ],
    }


def config_fingerprint(cfg: dict) -> str:
    """Stable short hash of a config dict (canonical JSON, SHA-256)."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise SchemaError(f"config missing required field {key!r}")
    return cfg[key]


def load_setup(cfg: dict | str | Path) -> SimSetup:
    """Build a SimSetup from a config dict or a JSON file path.

    Powers and noise are given in dBm, gamma0 in dB; they are converted
    to linear SI units here and nowhere else.
    """
    if not isinstance(cfg, dict):
        cfg = json.loads(Path(cfg).read_text())
    nodes = tuple(
        SensingNode(position=np.asarray(nd["position"], dtype=float),
                    array_axis=np.asarray(nd["array_axis"], dtype=float))
        for nd in _require(cfg, "nodes"))
    if "wavelength_m" in cfg:
        wavelength = float(cfg["wavelength_m"])
    else:
        wavelength = SPEED_OF_LIGHT / float(_require(cfg, "carrier_hz"))
    scenario = Scenario(
        bs_position=np.asarray(_require(cfg, "bs_position"), dtype=float),
        nodes=nodes,
        wavelength=wavelength,
        gamma0=db_to_linear(float(_require(cfg, "gamma0_db"))),
        sigma2=dbm_to_watt(float(_require(cfg, "noise_dbm"))),
        Pt=dbm_to_watt(float(_require(cfg, "pt_dbm"))),
        Pmin=dbm_to_watt(float(_require(cfg, "pmin_dbm"))),
        Nmax=int(_require(cfg, "nmax")),
        base_cov=np.diag(np.asarray(_require(cfg, "base_cov_diag"), dtype=float)),
        dist_mode=cfg.get("dist_mode", "node"),
    )
    motion = build_motion_model(float(_require(cfg, "dt")), float(_require(cfg, "qs")))
    targets = tuple(
        TargetState(x=np.array([t["position"][0], t["velocity"][0],
                                t["position"][1], t["velocity"][1]], dtype=float))
        for t in _require(cfg, "targets"))
    scenario.validate_power(len(targets))
    return SimSetup(scenario=scenario, motion=motion, targets0=targets,
                    init_sigma_r=float(cfg.get("init_sigma_r", 10.0)),
                    init_sigma_v=float(cfg.get("init_sigma_v", 5.0)),
                    raw=dict(cfg))
