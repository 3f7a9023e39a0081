import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqada import diffcore as dc
from seqada import losses
from seqada.diffcore import Tensor
from seqada.errors import ConfigError, ContractError, NumericDomainError
from seqada.losses import RankingPair

from oracles import (central_diff, cross_entropy_scalar, discriminator_scalar, entropy_scalar, info_max_scalar,
                     ranking_scalar, rel_err)


def leaf(v):
    return Tensor(v, requires_grad=True)


def fd_check(build, arrays_, tol=1e-4):
    tensors = [leaf(a.copy()) for a in arrays_]
    build(*tensors).backward()
    numeric = central_diff(lambda: build(*[Tensor(a) for a in arrays_]).item(), arrays_)
    return max(rel_err(t.grad, g) for t, g in zip(tensors, numeric))


class TestCrossEntropy:
    def test_uniform_logits(self):
        mean, per = losses.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
        np.testing.assert_allclose(per.values, math.log(4), rtol=0, atol=1e-15)
        assert mean.item() == pytest.approx(math.log(4), abs=1e-15)

    def test_confident_correct(self):
        mean, _ = losses.cross_entropy(Tensor([[50.0, -50.0], [-50.0, 50.0]]), [0, 1])
        assert mean.item() < 1e-40

    def test_scalar_oracle(self, rng):
        logits, labels = rng.normal(size=(7, 5)) * 3, rng.integers(0, 5, 7)
        mean, per = losses.cross_entropy(Tensor(logits), labels)
        ref_mean, ref_per = cross_entropy_scalar(logits.tolist(), labels.tolist())
        assert abs(mean.item() - ref_mean) <= 1e-9
        np.testing.assert_allclose(per.values, ref_per, rtol=0, atol=1e-9)

    @pytest.mark.parametrize("labels", [[0, 3], [-1, 0]])
    def test_label_out_of_range(self, labels):
        with pytest.raises(NumericDomainError):
            losses.cross_entropy(Tensor(np.zeros((2, 3))), labels)

    def test_gradient(self, rng):
        labels = rng.integers(0, 4, 5)
        assert fd_check(lambda x: losses.cross_entropy(x, labels)[0], [rng.normal(size=(5, 4))]) <= 1e-4

    def test_nonnegative(self, rng):
        _, per = losses.cross_entropy(Tensor(rng.normal(size=(20, 3)) * 10), rng.integers(0, 3, 20))
        assert np.all(per.values >= 0)


class TestRanking:
    def test_direct_evaluation(self):
        out = losses.margin_ranking_loss(Tensor([[0.5], [0.9]]), [2.0, 1.0], [RankingPair(0, 1)], margin=1.0)
        assert out.item() == pytest.approx(1.4, abs=1e-15)

    def test_hinge_satisfied(self):
        out = losses.margin_ranking_loss(Tensor([[2.5], [1.0]]), [2.0, 1.0], [RankingPair(0, 1)], margin=1.0)
        assert out.item() == 0.0

    def test_scalar_oracle(self, rng):
        pred, true = rng.normal(size=10), rng.uniform(0, 3, 10)
        pairs = losses.make_pairs(10, rng)
        out = losses.margin_ranking_loss(Tensor(pred.reshape(-1, 1)), true, pairs, margin=0.7)
        assert abs(out.item() - ranking_scalar(pred, true, pairs, 0.7)) <= 1e-9

    def test_gradient_away_from_kink(self, rng):
        true = rng.uniform(0, 3, 8)
        pairs = losses.make_pairs(8, rng)
        pred = rng.normal(size=(8, 1))
        assert fd_check(lambda p: losses.margin_ranking_loss(p, true, pairs, 1.0), [pred]) <= 1e-4

    def test_empty_pairs(self):
        with pytest.raises(ContractError):
            losses.margin_ranking_loss(Tensor([[1.0]]), [1.0], [], 1.0)

    def test_margin_positive(self):
        with pytest.raises(ConfigError):
            losses.margin_ranking_loss(Tensor([[1.0], [2.0]]), [1.0, 0.0], [RankingPair(0, 1)], 0.0)

    def test_same_index_rejected(self):
        with pytest.raises(ContractError):
            losses.margin_ranking_loss(Tensor([[1.0], [2.0]]), [1.0, 0.0], [RankingPair(1, 1)], 1.0)

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(0, 5), min_size=2, max_size=2),
           st.floats(0.1, 2))
    @settings(max_examples=100, deadline=None)
    def test_swap_symmetry(self, pred, true, margin):
        if true[0] == true[1]:
            return  # the tie indicator is -1 in both orders, so symmetry needs distinct losses
        p = Tensor(np.array(pred).reshape(2, 1))
        a = losses.margin_ranking_loss(p, true, [RankingPair(0, 1)], margin).item()
        b = losses.margin_ranking_loss(p, true, [RankingPair(1, 0)], margin).item()
        assert a == pytest.approx(b, abs=1e-12) and a >= 0

    def test_true_losses_receive_no_gradient(self, rng):
        true = leaf(rng.uniform(0, 2, 4))
        pred = leaf(rng.normal(size=(4, 1)))
        losses.margin_ranking_loss(pred, true, losses.make_pairs(4, rng), 1.0).backward()
        assert np.all(true.grad == 0.0) and np.any(pred.grad != 0.0)

    def test_pairs_disjoint(self, rng):
        pairs = losses.make_pairs(12, rng)
        used = [i for p in pairs for i in p]
        assert len(pairs) == 6 and sorted(used) == list(range(12))
        with pytest.raises(ContractError):
            losses.make_pairs(5, rng)


class TestInfoMax:
    def test_uniform_mean_term(self):
        k, xi = 5, 0.7
        term2 = losses.diversity_term(Tensor(np.full(k, 1 / k)), xi).item()
        assert term2 == pytest.approx(-xi * math.log(k), abs=1e-12)

    def test_one_hot_mean_term(self):
        assert losses.diversity_term(Tensor([0.0, 1.0, 0.0]), 1.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_entropy_identity(self, rng):
        for _ in range(20):
            p = rng.dirichlet(np.ones(6))
            xi = rng.uniform(0, 1)
            term2 = losses.diversity_term(Tensor(p), xi).item()
            assert abs(term2 - (-xi * entropy_scalar(p))) <= 1e-9

    def test_scalar_oracle(self, rng):
        probs = rng.dirichlet(np.ones(4), size=6)
        labels = rng.integers(0, 4, 6)
        mean_probs = rng.dirichlet(np.ones(4))
        out = losses.info_max_loss(Tensor(probs), labels, mean_probs, xi=0.6).item()
        assert abs(out - info_max_scalar(probs.tolist(), labels.tolist(), mean_probs.tolist(), 0.6)) <= 1e-9

    def test_negative_xi(self):
        with pytest.raises(ConfigError):
            losses.info_max_loss(Tensor([[1.0, 0.0]]), [0], [0.5, 0.5], xi=-0.1)

    def test_diversity_minimized_at_uniform(self, rng):
        k = 4
        uniform = losses.diversity_term(Tensor(np.full(k, 1 / k)), 1.0).item()
        for _ in range(50):
            assert losses.diversity_term(Tensor(rng.dirichlet(np.ones(k))), 1.0).item() > uniform

    def test_diversity_increases_towards_one_hot(self):
        k = 4
        values = []
        for t in np.linspace(0, 1, 11):
            p = (1 - t) * np.full(k, 1 / k) + t * np.eye(k)[2]
            values.append(losses.diversity_term(Tensor(p), 1.0).item())
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_gradient(self, rng):
        labels = rng.integers(0, 3, 5)

        def build(logits, m):
            return losses.info_max_loss(dc.softmax_rows(logits), labels, dc.softmax_rows(m), xi=0.8)

        assert fd_check(build, [rng.normal(size=(5, 3)), rng.normal(size=(1, 3))]) <= 1e-4


class TestDomainLosses:
    def test_balanced(self):
        half = Tensor(np.full((5, 1), 0.5))
        assert losses.discriminator_loss(half, half).item() == pytest.approx(2 * math.log(2), abs=1e-15)
        assert losses.adversarial_loss(half, half).item() == pytest.approx(-2 * math.log(2), abs=1e-15)

    def test_perfect_discrimination(self):
        out = losses.discriminator_loss(Tensor([[1 - 1e-15]]), Tensor([[1e-15]])).item()
        assert 0 <= out < 1e-12

    def test_scalar_oracle(self, rng):
        ds, dt = rng.uniform(0.01, 0.99, 6), rng.uniform(0.01, 0.99, 4)
        out = losses.discriminator_loss(Tensor(ds.reshape(-1, 1)), Tensor(dt.reshape(-1, 1))).item()
        assert abs(out - discriminator_scalar(ds.tolist(), dt.tolist())) <= 1e-9

    def test_empty(self):
        with pytest.raises(ContractError):
            losses.discriminator_loss(Tensor(np.zeros((0, 1))), Tensor([[0.5]]))

    def test_negation(self, rng):
        ds, dt = Tensor(rng.uniform(0, 1, (4, 1))), Tensor(rng.uniform(0, 1, (4, 1)))
        total = losses.discriminator_loss(ds, dt).item() + losses.adversarial_loss(ds, dt).item()
        assert total == 0.0

    def test_adversarial_gradient_is_negated(self, rng):
        w = rng.normal(size=(3, 1))
        xs, xt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        grads = []
        for fn in (losses.discriminator_loss, losses.adversarial_loss):
            f = leaf(w.copy())
            fn(dc.sigmoid(dc.matmul(xs, f)), dc.sigmoid(dc.matmul(xt, f))).backward()
            grads.append(f.grad)
        np.testing.assert_array_equal(grads[0], -grads[1])

    def test_gradient(self, rng):
        build = lambda a, b: losses.discriminator_loss(dc.sigmoid(a), dc.sigmoid(b))
        assert fd_check(build, [rng.normal(size=(4, 1)), rng.normal(size=(3, 1))]) <= 1e-4


def test_total_loss_report():
    r = losses.total_loss_report(0.3, -1.2, 1.1, -1.1)
    assert r["L_total"] == 0.3 + -1.1 + -1.2 + 1.1
    assert r["L_total"] == pytest.approx(r["L_loss"] + r["L_im"], abs=1e-15)
