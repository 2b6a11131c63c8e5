import json
import math

import numpy as np
import pytest

from pmntrack import baselines as bl
from pmntrack import dan
from pmntrack import fisher as fi
from pmntrack import mm_admm as mm
from pmntrack.errors import InvalidArgumentError, SchemaError

from conftest import make_setup, rand_instance


def _ctx(seed, n=8, nmax=2):
    _, _, jp, ms, p = rand_instance(seed, n=n, nmax=nmax)
    u0 = mm.blended_start(np.eye(n)[:nmax].sum(axis=0), nmax)
    return fi.SelectionContext(jp=jp, mbar=ms), p, u0


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        dan.DanParams(alpha_bar=np.full(10, 5.0))          # above alpha_hi
    with pytest.raises(InvalidArgumentError):
        dan.DanParams(alpha_bar=np.full(10, 0.15), beta1=0.9995, beta2=0.999)
    with pytest.raises(InvalidArgumentError):
        dan.DanParams(alpha_bar=np.full(10, 0.15), eta1=1.0)
    p = dan.default_params(10)
    assert p.n_layers == 10 and p.beta1 < math.sqrt(p.beta2)


def test_momentum_matches_closed_form():
    d = -0.73
    params = dan.default_params(6)
    b1, e1, b2 = params.beta1, params.eta1, params.beta2
    m_hat, v_hat = 0.0, 0.0
    for layer in range(1, 7):
        b1l = b1 * e1**layer
        m_hat = b1l * m_hat + (1 - b1l) * d
        v_hat = b2 * v_hat + (1 - b2) * d * d
        m_closed = d * (1 - b1**layer * e1 ** (layer * (layer + 1) / 2))
        v_closed = d * d * (1 - b2**layer)
        assert abs(m_hat - m_closed) < 1e-12
        assert abs(v_hat - v_closed) < 1e-12


def test_layer_beta1_zero_reduces_to_gradient():
    ctx, p, u0 = _ctx(1)
    params = dan.DanParams(alpha_bar=np.full(3, 0.15), beta1=1e-15)
    state = dan.LayerState(u=u0, m_hat=np.zeros(8), v_hat=np.zeros(8), layer=0)
    out = dan.dan_layer(state, ctx, p, params)
    d_u = fi.grad_u(fi.fim(ctx.jp, u0, p, ctx.mbar), p, ctx.mbar)
    assert np.max(np.abs(out.m_hat - d_u)) < 1e-12 * np.max(np.abs(d_u))


def test_layer_zero_gradient_fixed_point():
    ctx, p, u0 = _ctx(2)
    ms0 = fi.MeasInfoSet(Mbar=np.zeros((8, 4, 4)))
    ctx0 = fi.SelectionContext(jp=ctx.jp, mbar=ms0)
    params = dan.default_params(3)
    state = dan.LayerState(u=u0, m_hat=np.zeros(8), v_hat=np.zeros(8), layer=0)
    out = dan.dan_layer(state, ctx0, p, params)
    assert np.max(np.abs(out.u - u0)) < 1e-9
    assert np.all(out.m_hat == 0.0) and np.all(out.v_hat == 0.0)


def test_forward_feasible_and_deterministic():
    ctx, p, u0 = _ctx(3)
    params = dan.default_params(10)
    u_layers, trace = dan.dan_forward(ctx, p, u0, params)
    assert len(u_layers) == 10
    assert len(trace.cost_per_iter) == 11
    for u in u_layers:
        assert abs(u.sum() - 2.0) < 1e-8
        assert np.all(u >= 0.0) and np.all(u <= 1.0)
    u2, _ = dan.dan_forward(ctx, p, u0, params)
    assert all(np.array_equal(a, b) for a, b in zip(u_layers, u2))


def test_forward_learning_rate_decay():
    ctx, p, u0 = _ctx(4)
    _, trace = dan.dan_forward(ctx, p, u0, dan.default_params(10))
    for i in range(1, len(trace.phi_diags)):
        assert np.all(trace.phi_diags[i] >= trace.phi_diags[i - 1] - 1e-12)


def test_layer_second_order_momentum_nonnegative():
    ctx, p, u0 = _ctx(40)
    params = dan.default_params(4)
    state = dan.LayerState(u=u0, m_hat=np.zeros(8), v_hat=np.zeros(8), layer=0)
    for _ in range(4):
        state = dan.dan_layer(state, ctx, p, params)
        assert np.all(state.v_hat >= 0.0)
        assert abs(state.u.sum() - 2.0) < 1e-8


def test_regret_bound():
    ctx, p, u0 = _ctx(5)
    params = dan.default_params(10)
    _, trace = dan.dan_forward(ctx, p, u0, params)
    ues = bl.exhaustive_select(ctx.jp, ctx.mbar, p, 2)
    u_star = dan.pick_reference(trace, [ues], params)
    rep = dan.regret_bound_check(trace, params, u_star)
    assert rep.R_L <= rep.bound
    assert rep.lr_decay_ok
    assert rep.C1 >= 0 and rep.C2 >= 0
    assert all(v >= 0 for v in rep.constants.values())
    assert rep.bound > 10 * max(rep.R_L, 1e-9)   # the bound is loose

    # single layer starting at the reference: zero regret
    params1 = dan.DanParams(alpha_bar=np.array([0.15]))
    _, tr1 = dan.dan_forward(ctx, p, u0, params1)
    rep1 = dan.regret_bound_check(tr1, params1, tr1.u_per_iter[0])
    assert abs(rep1.R_L) < 1e-12
    assert rep1.bound >= 0


def test_regret_requires_trace_fields():
    params = dan.default_params(2)
    with pytest.raises(InvalidArgumentError):
        dan.regret_bound_check(dan.DanTrace(), params, np.zeros(4))


def test_train_improves_loss_and_is_deterministic():
    setup = make_setup(n_nodes=8, nmax=2, seed=61)
    train = dan.make_training_set(setup, 40, seed=11)
    tcfg = dan.TrainConfig(n_train=40, epochs=2, batch_size=20, seed=3)
    params0 = dan.default_params(6)
    params_a, losses_a = dan.train_dan(train, params0, tcfg)
    params_b, losses_b = dan.train_dan(train, params0, tcfg)
    assert losses_a == losses_b
    assert np.array_equal(params_a.alpha_bar, params_b.alpha_bar)
    assert losses_a[-1] <= losses_a[0]
    with pytest.raises(InvalidArgumentError):
        dan.train_dan([], params0, tcfg)


def test_sgd_step_with_zero_gradient_is_identity():
    params = dan.default_params(5)
    out = dan.apply_sgd(params, np.zeros(6), lr=5e-5)
    assert np.array_equal(out.alpha_bar, params.alpha_bar)
    assert out.beta1 == params.beta1


def test_finite_diff_gradient_shape():
    setup = make_setup(n_nodes=8, nmax=2, seed=62)
    batch = dan.make_training_set(setup, 4, seed=12)
    params = dan.default_params(4)
    tcfg = dan.TrainConfig(n_train=4, epochs=1, batch_size=4, seed=1)
    grad, loss = dan.finite_diff_grad(batch, params, tcfg, nmax=2.0)
    assert grad.shape == (5,)
    assert np.all(np.isfinite(grad)) and loss > 0


def test_params_roundtrip(tmp_path):
    params = dan.DanParams(alpha_bar=np.linspace(0.05, 0.3, 10), beta1=0.7)
    path = tmp_path / "params.json"
    dan.save_params(params, path, seed=3, scenario_fingerprint="abc")
    loaded = dan.load_params(path)
    assert np.array_equal(loaded.alpha_bar, params.alpha_bar)
    assert loaded.beta1 == params.beta1

    doc = json.loads(path.read_text())
    assert doc["version"] == dan.PARAMS_VERSION
    assert doc["seed"] == 3 and doc["scenario_fingerprint"] == "abc"
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        dan.load_params(path)


def test_dataset_roundtrip(tmp_path):
    setup = make_setup(n_nodes=8, nmax=2, seed=63)
    from pmntrack.scenario import config_fingerprint
    instances = dan.make_training_set(setup, 5, seed=13)
    path = tmp_path / "ds.jsonl"
    fp = config_fingerprint(setup.raw)
    dan.save_dataset(instances, path, fp)
    loaded = dan.load_dataset(path, setup)
    assert len(loaded) == 5
    for a, b in zip(instances, loaded):
        assert np.allclose(a.jp, b.jp)
        assert np.array_equal(a.label, b.label)
        assert a.p == b.p

    other = make_setup(n_nodes=8, nmax=2, seed=64)
    with pytest.raises(SchemaError):
        dan.load_dataset(path, other)


def test_trained_not_worse_on_held_out(desk16_setup, desk16_params):
    """Mean final cost of the trained DAN never exceeds the untrained one."""
    params, losses = desk16_params
    assert losses[-1] < losses[0]
    params0 = dan.default_params(10)
    held = dan.make_training_set(desk16_setup, 100, seed=404)
    trained, untrained = [], []
    for inst in held:
        ctx = fi.SelectionContext(jp=inst.jp, mbar=inst.mbar)
        _, tr = dan.dan_forward(ctx, inst.p, inst.u0, params)
        trained.append(tr.cost_per_iter[-1])
        _, tr0 = dan.dan_forward(ctx, inst.p, inst.u0, params0)
        untrained.append(tr0.cost_per_iter[-1])
    assert np.mean(trained) <= np.mean(untrained) + 1e-9
