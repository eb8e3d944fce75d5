import numpy as np
import numpy.testing as npt
import pytest

from mvst import fusion, model, tensor
from mvst.rng import stream
from mvst.tensor import Tensor


def random_features(seed, n_views=3, nt=6, d=8):
    rng = stream(seed, "fusion-feats")
    feats = [Tensor(rng.normal(size=(nt, d))) for _ in range(n_views)]
    weights = [tensor.parameter(rng.normal(size=(d, d))) for _ in range(n_views)]
    return feats, weights


class TestGateCoefficients:
    def test_zero_weights_give_half(self):
        feats, weights = random_features(0)
        for w in weights:
            w.data[...] = 0.0
        gates = fusion.gate_coefficients(feats, weights)
        for g in gates:
            npt.assert_array_equal(g.data, np.full(g.shape, 0.5))

    def test_shared_sum_gates_identical(self):
        feats, weights = random_features(1)
        gates = fusion.gate_coefficients(feats, weights, mode="shared_sum")
        for g in gates[1:]:
            npt.assert_array_equal(g.data, gates[0].data)

    def test_per_view_gates_differ(self):
        feats, weights = random_features(2)
        gates = fusion.gate_coefficients(feats, weights, mode="per_view")
        assert np.abs(gates[0].data - gates[1].data).max() > 1e-9

    def test_entries_strictly_inside_unit_interval(self):
        feats, weights = random_features(3)
        for mode in ("per_view", "shared_sum"):
            for g in fusion.gate_coefficients(feats, weights, mode=mode):
                assert (g.data > 0).all() and (g.data < 1).all()

    def test_mismatched_shapes_rejected(self):
        feats, weights = random_features(4)
        feats[1] = Tensor(np.zeros((5, 8)))
        with pytest.raises(tensor.ShapeError):
            fusion.gate_coefficients(feats, weights)


class TestFuse:
    def test_single_view_identity_gate(self):
        feats, _ = random_features(5, n_views=1)
        ones = [Tensor(np.ones(feats[0].shape))]
        npt.assert_array_equal(fusion.fuse(feats, ones).data, feats[0].data)

    def test_one_hot_gate_selects_view(self):
        feats, _ = random_features(6)
        for k in range(3):
            gates = [Tensor(np.full(feats[0].shape, 1.0 if i == k else 0.0))
                     for i in range(3)]
            npt.assert_array_equal(fusion.fuse(feats, gates).data, feats[k].data)

    def test_zero_gate_weights_give_half_sum(self):
        feats, weights = random_features(7)
        for w in weights:
            w.data[...] = 0.0
        gates = fusion.gate_coefficients(feats, weights)
        fused = fusion.fuse(feats, gates)
        expected = 0.5 * sum(f.data for f in feats)
        npt.assert_allclose(fused.data, expected, atol=1e-12)

    def test_linear_in_features_for_fixed_gates(self):
        feats, _ = random_features(8)
        rng = stream(9, "fuse-lin")
        gates = [Tensor(rng.uniform(0, 1, feats[0].shape)) for _ in range(3)]
        alpha = 2.5
        scaled = [Tensor(alpha * f.data) for f in feats]
        npt.assert_allclose(fusion.fuse(scaled, gates).data,
                            alpha * fusion.fuse(feats, gates).data, atol=1e-12)


class TestClassify:
    def test_zero_everything_gives_uniform_softmax(self):
        head = fusion.init_classifier(8, seed=0)
        for t in (head.w1, head.b1, head.w2, head.b2):
            t.data[...] = 0.0
        logits = fusion.classify(Tensor(np.zeros((5, 8))), head)
        npt.assert_array_equal(logits.data, np.zeros((1, 4)))
        probs = tensor.softmax_rows(logits)
        npt.assert_allclose(probs.data, 0.25, atol=1e-15)

    def test_invariant_to_row_permutation(self):
        head = fusion.init_classifier(8, seed=1)
        rng = stream(10, "classify-perm")
        fused = rng.normal(size=(7, 8))
        a = fusion.classify(Tensor(fused), head).data
        b = fusion.classify(Tensor(fused[rng.permutation(7)]), head).data
        npt.assert_allclose(a, b, atol=1e-12)

    def test_argmax_invariant_to_logit_shift(self):
        head = fusion.init_classifier(8, seed=2)
        logits = fusion.classify(Tensor(stream(11, "cls").normal(size=(4, 8))), head)
        shifted = logits.data + 123.0
        assert np.argmax(logits.data) == np.argmax(shifted)


class TestOneHotGateMatchesSingleView:
    def test_full_model_reduces_to_single_view(self):
        cfg = model.ModelConfig(n=32, d_t=16, depth=1, heads=2, mlp_ratio=2,
                                views=(0, 1, 2))
        params = model.init_model(cfg, seed=3)
        mel = stream(12, "onehot").uniform(0, 1, (32, 32))
        feats = model.forward_all_views(mel, params, cfg)
        for k in range(3):
            gates = [Tensor(np.full(feats[0].shape, 1.0 if i == k else 0.0))
                     for i in range(3)]
            fused = fusion.fuse(feats, gates)
            full = fusion.classify(fused, params.classifier).data
            single = fusion.classify(feats[k], params.classifier).data
            npt.assert_array_equal(full, single)
