"""Strategy state machines: round equivalences against serial oracles."""

import numpy as np
import pytest

from psgdlab import problems as prob
from psgdlab.optimizer import SgdState, sgd_step
from psgdlab.strategies import (
    LearnerState,
    ProtocolError,
    PsState,
    StrategyKind,
    StrategySpec,
    ad_psgd_step,
    async_central_push,
    hring_round,
    local_gradient,
    ring_neighbors,
    sc_psgd_round,
    sd_psgd_round,
    sync_central_round,
)
from psgdlab.topology import apply_mixing, ring_matrix
from psgdlab.vectors import ParamVector, l2_distance


@pytest.fixture(scope="module")
def logistic():
    p = prob.make_problem("logistic", 6, 2)
    ds = prob.generate("logistic", 11, 256, 64, 6, 2)
    return p, ds


@pytest.fixture()
def zero_grad_problem():
    # quadratic evaluated at its optimum gives exactly zero gradients
    p = prob.QuadraticBowl(curvature=np.ones(3), optimum=np.zeros(3))
    ds = prob.generate("quadratic_bowl", 2, 64, 16, 3, 1)
    return p, ds


class TestStrategySpec:
    def test_local_batch_division(self):
        spec = StrategySpec(StrategyKind.SYNC_CENTRAL, 16, 2560)
        assert spec.local_batch == 160

    def test_indivisible_batch_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            StrategySpec(StrategyKind.SYNC_CENTRAL, 3, 100)

    @pytest.mark.parametrize("kind", [StrategyKind.SD_PSGD, StrategyKind.AD_PSGD])
    def test_ring_strategies_need_three_learners(self, kind):
        with pytest.raises(ValueError, match="L >= 3"):
            StrategySpec(kind, 2, 16)

    def test_hring_outer_count_rule(self):
        with pytest.raises(ValueError, match=">= 3 super-learners"):
            StrategySpec(StrategyKind.H_RING, 16, 256, group_size=8)
        spec = StrategySpec(StrategyKind.H_RING, 16, 256, group_size=4)
        assert spec.outer_count == 4

    def test_hring_group_divisibility(self):
        with pytest.raises(ValueError, match="split into groups"):
            StrategySpec(StrategyKind.H_RING, 16, 256, group_size=5)


class TestLocalGradient:
    def test_delegates_to_problem_gradient(self, logistic):
        p, ds = logistic
        w = prob.initial_params(p, 4)
        learner = LearnerState(0, w)
        batch = ds.batch(np.arange(8))
        assert local_gradient(learner, p, batch) == prob.gradient(p, w, batch)

    def test_quadratic_hand_value(self):
        p = prob.QuadraticBowl(curvature=np.array([2.0]), optimum=np.zeros(1))
        ds = prob.generate("quadratic_bowl", 1, 8, 2, 1, 1)
        learner = LearnerState(0, ParamVector([1.0]))
        assert local_gradient(learner, p, ds.batch([0, 1])) == ParamVector([2.0])

    def test_zero_at_optimum(self, zero_grad_problem):
        p, ds = zero_grad_problem
        learner = LearnerState(0, ParamVector(np.zeros(3)))
        g = local_gradient(learner, p, ds.batch([0]))
        assert np.all(g.values == 0.0)

    def test_batch_size_checked(self, logistic):
        p, ds = logistic
        learner = LearnerState(0, prob.initial_params(p, 4))
        with pytest.raises(ValueError, match="batch of 4"):
            local_gradient(learner, p, ds.batch(np.arange(8)), local_batch=4)


class TestSyncCentral:
    def test_round_equals_serial_step_on_same_samples(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        idx = np.arange(8)
        serial = sgd_step(SgdState(w0), prob.gradient(p, w0, ds.batch(idx)), 0.2)
        ps = PsState(w0)
        learners = [LearnerState(i, w0) for i in range(4)]
        batches = [ds.batch(idx[i * 2 : (i + 1) * 2]) for i in range(4)]
        sync_central_round(ps, learners, batches, 0.2, p)
        assert l2_distance(ps.model, serial.w) <= 1e-12
        assert all(s.model == ps.model for s in learners)
        assert ps.update_count == 1

    def test_single_learner_degenerates_to_sgd(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        batch = ds.batch(np.arange(8))
        serial = sgd_step(SgdState(w0), prob.gradient(p, w0, batch), 0.1)
        ps = PsState(w0)
        learners = [LearnerState(0, w0)]
        sync_central_round(ps, learners, [batch], 0.1, p)
        assert ps.model == serial.w

    def test_zero_gradients_leave_model(self, zero_grad_problem):
        p, ds = zero_grad_problem
        w0 = ParamVector(np.zeros(3))
        ps = PsState(w0)
        learners = [LearnerState(i, w0) for i in range(2)]
        sync_central_round(ps, learners, [ds.batch([0]), ds.batch([1])], 0.1, p)
        assert ps.model == w0
        assert ps.update_count == 1

    def test_version_mismatch_is_protocol_error(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        ps = PsState(w0)
        learners = [LearnerState(0, w0), LearnerState(1, w0, pulled_version=3)]
        with pytest.raises(ProtocolError):
            sync_central_round(
                ps, learners, [ds.batch([0]), ds.batch([1])], 0.1, p
            )

    def test_batch_accounting(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        ps = PsState(w0)
        learners = [LearnerState(i, w0) for i in range(4)]
        batches = [ds.batch(np.arange(i * 2, i * 2 + 2)) for i in range(4)]
        sync_central_round(ps, learners, batches, 0.2, p)
        assert sum(s.samples_consumed for s in learners) == 8
        assert all(s.batches_done == 1 for s in learners)


class TestScPsgd:
    def test_matches_sync_central_round(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        idx = np.arange(8)
        batches = [ds.batch(idx[i * 2 : (i + 1) * 2]) for i in range(4)]
        ps = PsState(w0)
        central = [LearnerState(i, w0) for i in range(4)]
        sync_central_round(ps, central, batches, 0.2, p)
        allreduce = [LearnerState(i, w0) for i in range(4)]
        sc_psgd_round(allreduce, batches, 0.2, p)
        assert l2_distance(allreduce[0].model, ps.model) <= 1e-12
        assert all(s.model == allreduce[0].model for s in allreduce)

    def test_single_learner_is_plain_sgd(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        batch = ds.batch(np.arange(4))
        serial = sgd_step(SgdState(w0), prob.gradient(p, w0, batch), 0.3)
        learners = [LearnerState(0, w0)]
        sc_psgd_round(learners, [batch], 0.3, p)
        assert l2_distance(learners[0].model, serial.w) <= 1e-15

    def test_zero_gradients_fixed_point(self, zero_grad_problem):
        p, ds = zero_grad_problem
        w0 = ParamVector(np.zeros(3))
        learners = [LearnerState(i, w0) for i in range(3)]
        sc_psgd_round(learners, [ds.batch([i]) for i in range(3)], 0.1, p)
        assert all(s.model == w0 for s in learners)

    def test_divergent_entry_models_rejected(self, logistic):
        p, ds = logistic
        learners = [
            LearnerState(0, ParamVector(np.zeros(7))),
            LearnerState(1, ParamVector(np.ones(7))),
        ]
        with pytest.raises(ProtocolError, match="divergent"):
            sc_psgd_round(learners, [ds.batch([0]), ds.batch([1])], 0.1, p)


class TestSdPsgd:
    def test_symmetric_start_stays_symmetric(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        learners = [LearnerState(i, w0) for i in range(4)]
        batch = ds.batch(np.arange(4))
        sd_psgd_round(learners, [batch] * 4, 0.2, p)
        assert all(s.model == learners[0].model for s in learners)

    def test_zero_gradients_reduce_to_pure_mixing(self, zero_grad_problem):
        p, ds = zero_grad_problem
        rng = np.random.default_rng(8)
        models = [ParamVector(rng.standard_normal(3)) for _ in range(5)]
        learners = [LearnerState(i, m) for i, m in enumerate(models)]
        # gradient is zero only at the origin, so pin every model there except
        # compare against the oracle on the same inputs
        oracle = apply_mixing(models, ring_matrix(5))
        sd_psgd_round(learners, [ds.batch([i]) for i in range(5)], 0.1, p)
        grads = [prob.gradient(p, m, ds.batch([i])) for i, m in enumerate(models)]
        for learner, mix, grad in zip(learners, oracle, grads):
            expected = mix.values - 0.1 * grad.values
            assert np.abs(learner.model.values - expected).max() <= 1e-12

    def test_one_mixing_round_hand_value(self, zero_grad_problem):
        p, ds = zero_grad_problem
        models = [ParamVector([float(v), 0.0, 0.0]) for v in (1, 2, 3, 4)]
        learners = [LearnerState(i, m) for i, m in enumerate(models)]
        # models sit at coordinates where the bowl's gradient equals the model
        # itself (curvature 1, optimum 0): new = mixed - alpha * model
        sd_psgd_round(learners, [ds.batch([i]) for i in range(4)], 0.5, p)
        assert learners[0].model[0] == pytest.approx(7 / 3 - 0.5 * 1.0, abs=1e-12)

    def test_needs_three_learners(self, logistic):
        p, ds = logistic
        learners = [LearnerState(i, prob.initial_params(p, 1)) for i in range(2)]
        with pytest.raises(ValueError, match="L >= 3"):
            sd_psgd_round(learners, [ds.batch([0]), ds.batch([1])], 0.1, p)


def serial_ad_sweep_oracle(models, grads, alpha):
    """Row-update matrix formulation of a full serial ring sweep."""
    L = len(models)
    out = [m.copy() for m in models]
    for i in range(L):
        li, ri = (i - 1) % L, (i + 1) % L
        trio = sorted([li, i, ri])
        mixed = (out[trio[0]] + out[trio[1]] + out[trio[2]]) / 3.0
        out[i] = mixed - alpha * grads[i](out[i])
    return out


class TestAdPsgd:
    def test_serial_sweep_matches_row_update_oracle(self, zero_grad_problem):
        p, ds = zero_grad_problem
        rng = np.random.default_rng(5)
        models0 = [rng.standard_normal(3) for _ in range(5)]
        learners = [LearnerState(i, ParamVector(m)) for i, m in enumerate(models0)]
        alpha = 0.1
        oracle = serial_ad_sweep_oracle(
            models0, [lambda w: p.gradient_arrays(w, None)] * 5, alpha
        )
        for i in range(5):
            li, ri = ring_neighbors(i, 5)
            ad_psgd_step(
                learners[i], learners[li], learners[ri], p, ds.batch([i]), alpha
            )
        for i in range(5):
            assert np.abs(learners[i].model.values - oracle[i]).max() <= 1e-12

    def test_equal_models_zero_gradient_fixed_point(self, zero_grad_problem):
        p, ds = zero_grad_problem
        w0 = ParamVector(np.zeros(3))
        learners = [LearnerState(i, w0) for i in range(3)]
        ad_psgd_step(learners[0], learners[2], learners[1], p, ds.batch([0]), 0.1)
        assert learners[0].model == w0

    def test_mean_preserved_by_full_zero_gradient_sweep(self, zero_grad_problem):
        p, ds = zero_grad_problem
        # force zero gradients by translating models to the optimum basin:
        # use gradient_model pinned at the optimum for every step
        rng = np.random.default_rng(6)
        models = [ParamVector(rng.standard_normal(3)) for _ in range(6)]
        learners = [LearnerState(i, m) for i, m in enumerate(models)]
        zero_point = ParamVector(np.zeros(3))
        before = np.sum([m.values for m in models], axis=0)
        for i in range(6):
            li, ri = ring_neighbors(i, 6)
            ad_psgd_step(
                learners[i],
                learners[li],
                learners[ri],
                p,
                ds.batch([i]),
                0.1,
                gradient_model=zero_point,
            )
        after = np.sum([s.model.values for s in learners], axis=0)
        # each row update is doubly stochastic only in aggregate; compare to
        # the dense oracle rather than asserting exact sum preservation
        oracle = serial_ad_sweep_oracle(
            [m.values for m in models], [lambda w: np.zeros(3)] * 6, 0.1
        )
        assert np.abs(after - np.sum(oracle, axis=0)).max() <= 1e-12

    def test_gradient_model_staleness_honored(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 3)
        stale = ParamVector(np.zeros(7))
        learners = [LearnerState(i, w0) for i in range(3)]
        batch = ds.batch(np.arange(4))
        expected_grad = prob.gradient(p, stale, batch)
        ad_psgd_step(
            learners[0], learners[2], learners[1], p, batch, 0.2,
            gradient_model=stale,
        )
        manual = w0.values - 0.2 * expected_grad.values  # mixed == w0 here
        assert np.abs(learners[0].model.values - manual).max() <= 1e-15

    def test_write_neighbors_gossip_mode(self, zero_grad_problem):
        p, ds = zero_grad_problem
        models = [ParamVector([3.0, 0, 0]), ParamVector([0.0, 0, 0]),
                  ParamVector([3.0, 0, 0])]
        learners = [LearnerState(i, m) for i, m in enumerate(models)]
        ad_psgd_step(
            learners[1], learners[0], learners[2], p, ds.batch([0]), 0.1,
            write_neighbors=True,
        )
        assert learners[0].model == learners[2].model
        assert learners[0].model[0] == pytest.approx(2.0, abs=1e-15)

    def test_batches_done_increment(self, zero_grad_problem):
        p, ds = zero_grad_problem
        learners = [LearnerState(i, ParamVector(np.zeros(3))) for i in range(3)]
        ad_psgd_step(learners[0], learners[2], learners[1], p, ds.batch([0, 1]), 0.1)
        assert learners[0].batches_done == 1
        assert learners[0].samples_consumed == 2


class TestAsyncCentralPush:
    def test_serial_pushes_have_zero_staleness(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        ps = PsState(w0)
        learner = LearnerState(0, w0)
        state = SgdState(w0)
        for k in range(5):
            batch = ds.batch(np.arange(k * 4, k * 4 + 4))
            grad = local_gradient(learner, p, batch)
            record = async_central_push(ps, learner, grad, 0.1)
            assert record.tau == 0
            state = sgd_step(state, prob.gradient(p, state.w, batch), 0.1)
            assert ps.model == state.w

    def test_back_to_back_pushes_from_same_version(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        ps = PsState(w0)
        a, b = LearnerState(0, w0), LearnerState(1, w0)
        ga = local_gradient(a, p, ds.batch([0, 1]))
        gb = local_gradient(b, p, ds.batch([2, 3]))
        assert async_central_push(ps, a, ga, 0.1).tau == 0
        assert async_central_push(ps, b, gb, 0.1).tau == 1

    def test_learner_pulls_fresh_model(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 7)
        ps = PsState(w0)
        learner = LearnerState(0, w0)
        async_central_push(ps, learner, local_gradient(learner, p, ds.batch([0])), 0.1)
        assert learner.model == ps.model
        assert learner.pulled_version == ps.model_version == 1


class TestHRing:
    def test_group_size_one_matches_ad_sweep(self, zero_grad_problem):
        p, ds = zero_grad_problem
        rng = np.random.default_rng(10)
        models0 = [rng.standard_normal(3) for _ in range(4)]
        ring = [LearnerState(i, ParamVector(m)) for i, m in enumerate(models0)]
        for i in range(4):
            li, ri = ring_neighbors(i, 4)
            ad_psgd_step(ring[i], ring[li], ring[ri], p, ds.batch([i]), 0.1)
        groups = [[LearnerState(i, ParamVector(models0[i]))] for i in range(4)]
        hring_round(groups, [[ds.batch([i])] for i in range(4)], 0.1, p)
        for i in range(4):
            assert groups[i][0].model == ring[i].model

    def test_members_stay_bit_identical(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 2)
        groups = [
            [LearnerState(g * 2 + s, w0) for s in range(2)] for g in range(3)
        ]
        batches = [
            [ds.batch(np.arange(k * 4, k * 4 + 4)) for k in range(g * 2, g * 2 + 2)]
            for g in range(3)
        ]
        hring_round(groups, batches, 0.1, p)
        for members in groups:
            assert members[0].model == members[1].model

    def test_outer_ring_minimum(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 2)
        groups = [[LearnerState(i, w0)] for i in range(2)]
        with pytest.raises(ValueError, match=">= 3"):
            hring_round(groups, [[ds.batch([0])], [ds.batch([1])]], 0.1, p)

    def test_divergent_group_member_rejected(self, logistic):
        p, ds = logistic
        w0 = prob.initial_params(p, 2)
        groups = [
            [LearnerState(0, w0), LearnerState(1, ParamVector(np.ones(7)))],
            [LearnerState(2, w0), LearnerState(3, w0)],
            [LearnerState(4, w0), LearnerState(5, w0)],
        ]
        batches = [[ds.batch([0]), ds.batch([1])] for _ in range(3)]
        with pytest.raises(ProtocolError, match="diverged"):
            hring_round(groups, batches, 0.1, p)
