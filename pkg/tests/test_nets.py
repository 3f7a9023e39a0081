import json

import numpy as np
import pytest

from seqada import diffcore as dc
from seqada import losses, nets
from seqada.diffcore import Tensor
from seqada.errors import ConfigError, DimensionError
from seqada.nets import SGD, NetDims, init_bundle

from oracles import central_diff, rel_err


@pytest.fixture
def bundle():
    return init_bundle(NetDims(input_dim=3, hidden=8, feature_dim=5, predictor_dim=4, num_classes=3), seed=4)


def zero_all(module):
    for p in module.parameters():
        p.values[...] = 0.0


def test_same_seed_same_parameters():
    a, b = init_bundle(NetDims(), 11), init_bundle(NetDims(), 11)
    for (na, pa), (nb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
        assert na == nb and np.array_equal(pa.values, pb.values)
    c = init_bundle(NetDims(), 12)
    assert not np.array_equal(a.F.layers[0].weight.values, c.F.layers[0].weight.values)


@pytest.mark.parametrize("field", ["hidden", "feature_dim", "predictor_dim", "num_classes", "input_dim"])
def test_non_positive_dims_rejected(field):
    with pytest.raises(ConfigError) as exc:
        init_bundle(NetDims(**{field: 0}), 0)
    assert exc.value.field == field


def test_weight_variance_matches_he_scaling():
    fan_in = 100
    layer = nets.Linear(fan_in, 100, np.random.default_rng(0), "L")
    w = layer.weight.values
    assert w.size == 10_000
    assert abs(w.var() / (2.0 / fan_in) - 1.0) < 0.2
    assert np.all(layer.bias.values == 0.0)


def test_architecture_shapes(bundle):
    d = bundle.dims
    assert [l.weight.shape for l in bundle.F.layers] == [(d.input_dim, d.hidden), (d.hidden, d.feature_dim)]
    assert [l.weight.shape for l in bundle.C.layers] == [(d.feature_dim, d.num_classes)]
    assert [l.weight.shape for l in bundle.P.layers] == [(d.feature_dim, d.predictor_dim), (d.predictor_dim, 1)]
    assert [l.weight.shape for l in bundle.D.layers] == [(d.feature_dim, d.hidden), (d.hidden, 1)]


class TestForward:
    def test_zero_features(self, bundle, rng):
        zero_all(bundle.F)
        assert np.all(nets.forward_features(bundle, rng.normal(size=(4, 3))).values == 0.0)

    def test_row_independence(self, bundle, rng):
        x = rng.normal(size=(8, 3))
        full = nets.forward_features(bundle, x).values
        # BLAS may block a batch differently from a single row, so allow rounding
        for i in range(8):
            np.testing.assert_allclose(nets.forward_features(bundle, x[i:i + 1]).values[0], full[i], rtol=0, atol=1e-12)

    def test_feature_shape_mismatch(self, bundle):
        with pytest.raises(DimensionError):
            nets.forward_features(bundle, np.ones((2, 4)))
        with pytest.raises(DimensionError):
            nets.forward_discriminator(bundle, Tensor(np.ones((2, 3))))

    def test_identity_classifier(self, rng):
        b = init_bundle(NetDims(feature_dim=3, num_classes=3), 0)
        b.C.layers[0].weight.values[...] = np.eye(3)
        f = Tensor(rng.normal(size=(5, 3)))
        np.testing.assert_array_equal(nets.forward_classifier(b, f).values, f.values)

    def test_probabilities_sum_to_one(self, bundle, rng):
        logits = nets.forward_classifier(bundle, nets.forward_features(bundle, rng.normal(size=(6, 3))))
        np.testing.assert_allclose(dc.softmax_rows(logits).values.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_predictor_outputs_bias(self, bundle, rng):
        zero_all(bundle.P)
        bundle.P.layers[-1].bias.values[...] = 0.75
        out = nets.forward_loss_predictor(bundle, nets.forward_features(bundle, rng.normal(size=(7, 3))))
        assert out.shape == (7, 1) and np.all(out.values == 0.75)

    @pytest.mark.parametrize("m", [1, 2, 9])
    def test_predictor_shape(self, bundle, rng, m):
        assert nets.forward_loss_predictor(bundle, Tensor(rng.normal(size=(m, 5)))).shape == (m, 1)

    def test_zero_discriminator_is_half(self, bundle, rng):
        zero_all(bundle.D)
        assert np.all(nets.forward_discriminator(bundle, Tensor(rng.normal(size=(4, 5)))).values == 0.5)

    def test_discriminator_range(self, bundle, rng):
        d = nets.forward_discriminator(bundle, Tensor(rng.normal(size=(200, 5)) * 3)).values
        assert np.all((d > 0) & (d < 1))

    def test_balanced_discriminator_loss(self, bundle, rng):
        zero_all(bundle.D)
        d = nets.forward_discriminator(bundle, Tensor(rng.normal(size=(6, 5))))
        assert losses.discriminator_loss(d, d).item() == pytest.approx(2 * np.log(2), abs=1e-15)


def _params_fd(bundle, make_loss, modules):
    """Analytic vs numeric gradients for every parameter of ``modules``."""
    make_loss().backward()
    worst = 0.0
    for name in modules:
        for p in bundle.modules()[name].parameters():
            analytic = p.grad.copy()
            numeric = central_diff(lambda: make_loss().item(), [p.values])[0]
            worst = max(worst, rel_err(analytic, numeric))
    return worst


def test_feature_classifier_chain_gradient(bundle, rng):
    x, y = rng.normal(size=(6, 3)), rng.integers(0, 3, 6)
    with_c = _params_fd(bundle, lambda: losses.cross_entropy(bundle.C(bundle.F(x)), y)[0], ["F", "C"])
    assert with_c <= 1e-4


def test_ranking_gradient_reaches_features(bundle, rng):
    x = rng.normal(size=(6, 3))
    true = rng.uniform(0, 2, 6)
    pairs = losses.make_pairs(6, np.random.default_rng(1))

    def loss():
        return losses.margin_ranking_loss(bundle.P(bundle.F(x)), true, pairs, margin=1.0)

    assert _params_fd(bundle, loss, ["F", "P"]) <= 1e-4
    assert sum(np.linalg.norm(p.grad) for p in bundle.F.parameters()) > 0


def test_discriminator_chain_gradient(bundle, rng):
    xs, xt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) + 1

    def loss():
        return losses.discriminator_loss(bundle.D(bundle.F(xs)), bundle.D(bundle.F(xt)))

    assert _params_fd(bundle, loss, ["F", "D"]) <= 1e-4


class TestSGD:
    def _param(self, values, grad):
        p = Tensor(np.array(values, dtype=float), requires_grad=True)
        p.grad[...] = grad
        return p

    def test_zero_lr_is_identity(self):
        p = self._param([1.0, -2.0], [5.0, 5.0])
        nets.step(SGD([p], lr=0.0, momentum=0.9))
        assert p.values.tolist() == [1.0, -2.0]

    def test_plain_step(self):
        p = self._param([1.0, -2.0], [0.5, 4.0])
        SGD([p], lr=0.1, momentum=0.0).step()
        assert p.values.tolist() == [1.0 - 0.1 * 0.5, -2.0 - 0.1 * 4.0]
        assert p.grad.tolist() == [0.0, 0.0]

    def test_two_momentum_steps(self):
        p = self._param([1.0], [2.0])
        opt = SGD([p], lr=0.1, momentum=0.9)
        opt.step()
        p.grad[...] = 3.0
        opt.step()
        v1 = 2.0
        v2 = 0.9 * v1 + 3.0
        assert p.values[0] == 1.0 - 0.1 * v1 - 0.1 * v2

    def test_keep_grads(self):
        p = self._param([1.0], [2.0])
        SGD([p], lr=0.1, momentum=0.0).step(zero_after=False)
        assert p.grad[0] == 2.0

    def test_frozen_parameters_do_not_move(self):
        p = self._param([1.0], [2.0])
        p.requires_grad = False
        SGD([p], lr=0.1).step()
        assert p.values[0] == 1.0

    def test_clip_norm(self):
        p = self._param([0.0, 0.0], [3.0, 4.0])
        SGD([p], lr=1.0, momentum=0.0, clip_norm=1.0).step()
        np.testing.assert_allclose(p.values, [-0.6, -0.8])
        q = self._param([0.0], [0.5])
        SGD([q], lr=1.0, momentum=0.0, clip_norm=1.0).step()
        assert q.values[0] == -0.5

    @pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(momentum=1.0), dict(momentum=-0.1), dict(clip_norm=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SGD([], **kw)


def test_freeze_classifier(bundle):
    before = bundle.param_hash("C")
    bundle.freeze_classifier()
    assert bundle.classifier_frozen
    x = np.ones((4, 3))
    opt = SGD([p for m in bundle.modules().values() for p in m.parameters()], lr=0.1)
    losses.cross_entropy(bundle.C(bundle.F(x)), [0, 1, 2, 0])[0].backward()
    opt.step()
    assert bundle.param_hash("C") == before


class TestCheckpoint:
    def test_round_trip_bit_exact(self, bundle, tmp_path):
        for p in bundle.named_parameters().values():
            p.values[...] = np.random.default_rng(3).normal(size=p.shape) / 3.0
        bundle.freeze_classifier()
        path = tmp_path / "params.json"
        nets.save_params(path, bundle, extra={"round": 2})
        loaded, extra = nets.load_params(path)
        assert extra == {"round": 2}
        assert loaded.dims == bundle.dims and loaded.classifier_frozen
        for name, p in bundle.named_parameters().items():
            assert np.array_equal(loaded.named_parameters()[name].values, p.values)

    def test_versioned(self, bundle, tmp_path):
        path = tmp_path / "params.json"
        nets.save_params(path, bundle)
        doc = json.loads(path.read_text())
        assert doc["format"] == "seqada-params" and doc["version"] == 1
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            nets.load_params(path)

    def test_mismatched_state(self, bundle):
        with pytest.raises(ConfigError):
            bundle.load_state({"F.0.weight": np.zeros((3, 8))})
        state = bundle.state()
        state["F.0.weight"] = np.zeros((2, 2))
        with pytest.raises(DimensionError):
            bundle.load_state(state)
