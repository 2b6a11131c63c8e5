import time

import numpy as np
import pytest

from pmntrack import dan as dan_mod
from pmntrack import fisher as fi
from pmntrack import scenario as sce
from pmntrack.seeding import derive_rng


def make_setup(n_nodes=8, nmax=2, seed=1234, **overrides):
    cfg = sce.default_config(n_nodes=n_nodes, seed=seed, nmax=nmax)
    cfg.update(overrides)
    return sce.load_setup(cfg)


def rand_instance(seed, n=8, nmax=2, jitter_range=(1.0, 64.0)):
    """One random selection problem: jittered prior, random placement/power."""
    setup = make_setup(n_nodes=n, nmax=nmax, seed=seed)
    sc = setup.scenario
    rng = derive_rng(seed, "instance")
    pos = rng.uniform(-200.0, 200.0, 2)
    vel = rng.uniform(-12.0, 12.0, 2)
    s = sce.TargetState(x=np.array([pos[0], vel[0], pos[1], vel[1]]))
    jitter = float(np.exp(rng.uniform(np.log(jitter_range[0]),
                                      np.log(jitter_range[1]))))
    jp = fi.prior_info(setup.motion,
                       fi.FisherState(J=fi.initial_info().J * jitter))
    ms = fi.meas_info_set(sc, s)
    p = float(rng.uniform(sc.Pmin, sc.Pt - 2 * sc.Pmin))
    return setup, s, jp, ms, p


@pytest.fixture(scope="session")
def desk8_setup():
    return make_setup(n_nodes=8, nmax=2)


@pytest.fixture(scope="session")
def desk16_setup():
    return make_setup(n_nodes=16, nmax=4)


@pytest.fixture(scope="session")
def desk16_params(desk16_setup):
    """DAN trained on the 16-node desk scenario (shared across tests)."""
    train = dan_mod.make_training_set(desk16_setup, 200, seed=501)
    tcfg = dan_mod.TrainConfig(n_train=200, epochs=4, batch_size=40, seed=7)
    params, losses = dan_mod.train_dan(train, dan_mod.default_params(10), tcfg)
    return params, losses


@pytest.fixture(scope="session")
def desk8_params(desk8_setup):
    """DAN trained on the 8-node desk scenario (200 samples, per acceptance).

    Returns (params, losses, build_seconds); the acceptance runtime
    budget for the agreement criterion includes the training time.
    """
    t0 = time.perf_counter()
    train = dan_mod.make_training_set(desk8_setup, 200, seed=801)
    tcfg = dan_mod.TrainConfig(n_train=200, epochs=3, batch_size=40, seed=9)
    params, losses = dan_mod.train_dan(train, dan_mod.default_params(10), tcfg)
    return params, losses, time.perf_counter() - t0
