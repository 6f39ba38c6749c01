import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pwoa.admm import (AdmmState, PruneMask, PruneSchedule, SparsityPlan, TeacherSignal,
                       admm_update, extract_mask, feasibility_gap, learning_rate, masked_finetune,
                       mix_ratio_batch, project_l0, round_half_up, train_epoch)
from pwoa.attacks import AttackConfig
from pwoa.data import BatchPlan, synth_blobs
from pwoa.errors import ConfigError, ParameterError, ShapeError
from pwoa.losses import LossWeights
from pwoa.nn import SGD, NetworkModel

from conftest import small_net
from oracles import project_l0_bruteforce


def test_projection_examples():
    np.testing.assert_array_equal(project_l0(np.array([1.0, -3.0, 2.0]), 1), [0.0, -3.0, 0.0])
    # ties: lower index wins
    np.testing.assert_array_equal(project_l0(np.array([2.0, -2.0, 2.0]), 2), [2.0, -2.0, 0.0])
    np.testing.assert_array_equal(project_l0(np.array([1.0, 2.0]), 0), [0.0, 0.0])
    np.testing.assert_array_equal(project_l0(np.array([1.0, 2.0]), 5), [1.0, 2.0])
    m = np.array([[1.0, 5.0], [-6.0, 0.5]])
    np.testing.assert_array_equal(project_l0(m, 2), [[0.0, 5.0], [-6.0, 0.0]])
    with pytest.raises(ParameterError):
        project_l0(m, -1)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.sampled_from([0.0, 1.0, -1.0, 2.5, -0.5, 3.0])),
       st.integers(0, 11))
def test_projection_matches_bruteforce_with_ties(v, alpha):
    np.testing.assert_array_equal(project_l0(v, alpha), project_l0_bruteforce(v, alpha))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10)), st.integers(0, 30))
def test_projection_properties(v, alpha):
    p = project_l0(v, alpha)
    assert np.count_nonzero(p) <= alpha
    kept = p != 0
    np.testing.assert_array_equal(p[kept], v[kept])
    np.testing.assert_array_equal(project_l0(p, alpha), p)


def test_plan_budgets():
    model = NetworkModel.init([10, 7, 3], seed=0)
    plan = SparsityPlan.uniform(model, 4.0)
    assert plan.budgets == (round_half_up(70 / 4), round_half_up(21 / 4)) == (18, 5)
    assert SparsityPlan.uniform(model, 1000.0).budgets == (1, 1)
    with pytest.raises(ConfigError):
        SparsityPlan.uniform(model, 0.5)
    with pytest.raises(ConfigError):
        SparsityPlan((0, 5), 4.0).check(model)
    assert round_half_up(2.5) == 3 and round_half_up(3.5) == 4


def test_admm_update_rules():
    model = small_net()
    plan = SparsityPlan.uniform(model, 3.0)
    state = AdmmState.init(model, plan)
    assert state.rho == [0.01, 0.01]
    sched = PruneSchedule()
    w0 = [l.weight.copy() for l in model.layers]
    admm_update(model, state, plan, sched)
    for w, tp, u, a in zip(w0, state.theta_prime, state.duals, plan.budgets):
        np.testing.assert_array_equal(tp, project_l0(w, a))
        np.testing.assert_array_equal(u, w - tp)
    admm_update(model, state, plan, sched)
    assert state.rho[0] == pytest.approx(0.018225, abs=1e-15)
    for _ in range(40):
        admm_update(model, state, plan, sched)
    assert state.rho == [1.0, 1.0] and state.admm_iter == 42


def test_feasibility_gap_zero_after_projection():
    model = small_net()
    plan = SparsityPlan.uniform(model, 2.0)
    state = AdmmState.init(model, plan)
    assert feasibility_gap(model, state) > 0
    extract_mask(model, plan).apply(model)
    assert feasibility_gap(model, state) == 0.0


def test_mask_validation():
    model = small_net()
    with pytest.raises(ShapeError):
        PruneMask((np.ones((4, 6)),)).check(model)
    with pytest.raises(ParameterError):
        PruneMask((np.full((4, 6), 2),))
    mask = extract_mask(model, SparsityPlan.uniform(model, 4.0))
    assert mask.popcounts == [6, 5]


def test_schedule_validation_and_lr():
    with pytest.raises(ConfigError) as info:
        PruneSchedule(rho_growth=1.0)
    assert "schedule.rho_growth" in str(info.value)
    with pytest.raises(ConfigError):
        PruneSchedule(scheduler="step")
    assert learning_rate(0.1, 1, 10) == 0.1
    assert learning_rate(0.1, 6, 10) == pytest.approx(0.05)
    assert learning_rate(0.1, 6, 10, "constant") == 0.1


def test_mix_ratio_extremes(net, batch):
    x, y = batch
    cfg = AttackConfig("pgd", 0.1, 0.05, 2)
    out, rows = mix_ratio_batch(x, y, 0.0, net, cfg, np.random.default_rng(0))
    assert out is x and rows.size == 0
    out, rows = mix_ratio_batch(x, y, 1.0, net, cfg, np.random.default_rng(0))
    assert rows.tolist() == list(range(8))
    out, rows = mix_ratio_batch(x, y, 0.3, net, cfg, np.random.default_rng(0))
    assert rows.size == 2
    untouched = np.setdiff1d(np.arange(8), rows)
    np.testing.assert_array_equal(out[untouched], x[untouched])
    with pytest.raises(ParameterError):
        mix_ratio_batch(x, y, 1.5, net, cfg, np.random.default_rng(0))


def test_teacher_signal_recomputes_replaced_rows():
    data = synth_blobs(seed=1, n=30, d=4, k=3, margin=0.2)
    teacher = small_net(seed=2)
    sig = TeacherSignal.for_dataset(teacher, data)
    idx = np.arange(5)
    x = data.inputs[idx].copy()
    x[1] = 0.0
    out = sig.logits(idx, x, np.array([1]))
    np.testing.assert_array_equal(out[0], sig.cached[0])
    assert not np.array_equal(out[1], sig.cached[1])
    assert TeacherSignal.for_dataset(None, data).logits(idx, x) is None


def test_masked_finetune_keeps_exact_zeros():
    data = synth_blobs(seed=0, n=120, d=4, k=3, margin=0.3)
    model = small_net()
    teacher = model.copy()
    plan = SparsityPlan.uniform(model, 4.0)
    mask = extract_mask(model, plan)
    sched = PruneSchedule(admm_epochs=1, finetune_epochs=3, batch_size=32, lr_finetune=0.05)
    masked_finetune(model, mask, data, TeacherSignal.for_dataset(teacher, data),
                    LossWeights(lambda_kd=1.0, lambda_x=0.01, lambda_y=0.01), sched)
    for m, l, a in zip(mask.masks, model.layers, plan.budgets):
        assert np.all(l.weight[m == 0] == 0.0)
        assert np.count_nonzero(l.weight) <= a


def test_train_epoch_reduces_loss():
    data = synth_blobs(seed=0, n=200, d=4, k=3, margin=0.3)
    model = small_net()
    opt = SGD(model)
    w = LossWeights(lambda_ce=1.0)
    bp = BatchPlan(32, 0, drop_last=True)
    first = train_epoch(model, opt, data, TeacherSignal(None), w, bp, 1, 0.1)
    for e in range(2, 15):
        last = train_epoch(model, opt, data, TeacherSignal(None), w, bp, e, 0.1)
    assert last.total < first.total
