import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwoa.attacks import (AttackConfig, attack, cw_margin_loss, evaluate_attack, fgsm, input_gradient, pgd,
                          robust_accuracy)
from pwoa.data import Dataset, one_hot
from pwoa.errors import ParameterError
from pwoa.losses import ce_loss
from pwoa.nn import Layer, NetworkModel, forward

from conftest import small_net
from oracles import ce_loops, cw_margin_loops, finite_diff, rel_err


def test_radius_zero_is_identity(net, batch):
    x, y = batch
    for cfg in (AttackConfig("fgsm", 0.0), AttackConfig("pgd", 0.0, 0.01, 5), AttackConfig("cw_pgd", 0.0)):
        np.testing.assert_array_equal(attack(net, x, y, cfg).inputs, x)


def test_fgsm_on_linear_model_is_closed_form():
    # logits = x W with W = [[1, -1], [-1, 1]]; CE on class 0 grows along (-1, +1)
    model = NetworkModel([Layer(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.zeros(2), "identity")])
    x = np.array([[0.5, 0.5]])
    y = one_hot(np.array([0]), 2)
    adv = fgsm(model, x, y, AttackConfig("fgsm", 0.2))
    np.testing.assert_allclose(adv.inputs, [[0.3, 0.7]])
    assert adv.success[0]


def test_config_validation():
    assert AttackConfig("fgsm", 0.3, step_size=0.01, steps=7).steps == 1
    assert AttackConfig("fgsm", 0.3).step_size == 0.3
    with pytest.raises(ParameterError):
        AttackConfig("pgd", 1.5)
    with pytest.raises(ParameterError):
        AttackConfig("pgd", 0.1, step_size=0.5)
    with pytest.raises(ParameterError):
        AttackConfig("madry")
    with pytest.raises(ParameterError):
        pgd(small_net(), np.zeros((2, 4)), one_hot(np.array([0, 1]), 3), AttackConfig("fgsm", 0.1))


def test_cw_margin_matches_loops():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(6, 4))
    y = one_hot(rng.integers(0, 4, 6), 4)
    v, g = cw_margin_loss(z, y)
    assert v == pytest.approx(cw_margin_loops(z, y), rel=1e-14)
    assert rel_err(g, finite_diff(lambda: cw_margin_loss(z, y)[0], [z])[0]) < 1e-6


@pytest.mark.parametrize("loss", ["ce", "cw"])
def test_input_gradient_matches_finite_differences(net, batch, loss):
    x, y = batch
    x = x.copy()
    fn = ce_loss if loss == "ce" else cw_margin_loss
    _, g = input_gradient(net, x, y, loss)
    fd = finite_diff(lambda: fn(forward(net, x).logits, y)[0], [x])[0]
    assert rel_err(g, fd) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["fgsm", "pgd", "cw_pgd"]), st.one_of(st.just(0.0), st.floats(1e-6, 0.5)), st.booleans(), st.integers(0, 1000))
def test_outputs_respect_ball_and_box(kind, r, rs, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (10, 4))
    x[:3] = np.round(x[:3])  # points on the box boundary
    y = one_hot(rng.integers(0, 3, 10), 3)
    cfg = AttackConfig(kind, r, step_size=r / 4 if r else 0.01, steps=5, random_start=rs)
    out = attack(small_net(seed % 7), x, y, cfg, rng).inputs
    assert np.max(np.abs(out - x)) <= r + 1e-9
    assert out.min() >= -1e-9 and out.max() <= 1 + 1e-9


def test_pgd_increases_loss_and_is_reproducible(net, batch):
    x, y = batch
    base = ce_loss(forward(net, x).logits, y)[0]
    cfg = AttackConfig("pgd", 0.2, 0.05, 10, random_start=True, seed=3)
    a = pgd(net, x, y, cfg)
    b = pgd(net, x, y, cfg)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert ce_loss(forward(net, a.inputs).logits, y)[0] > base


def test_evaluate_attack(net, batch):
    x, y = batch
    ds = Dataset(x, y)
    acc, loss = evaluate_attack(net, ds, AttackConfig("fgsm", 0.0), batch_size=3)
    pred = forward(net, x).logits.argmax(1)
    assert acc == pytest.approx(100 * np.mean(pred == y.argmax(1)))
    assert loss == pytest.approx(ce_loops(forward(net, x).logits, y), rel=1e-12)
    assert robust_accuracy(net, ds, AttackConfig("fgsm", 0.5)) <= acc
