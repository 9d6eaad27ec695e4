"""Tests for file formats and the synthetic generator."""

import numpy as np
import pytest

from l2s.dataio import (
    FormatError,
    SynthSpec,
    generate_synthetic,
    load_layer,
    load_model,
    load_tensor,
    sample_targets,
    save_layer,
    save_model,
    save_tensor,
)
from l2s.screen import ScreeningModel, screened_topk
from l2s.softmax import SoftmaxLayer, label_contexts


class TestTensorFiles:
    def test_matrix_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((7, 3))
        path = tmp_path / "m.l2s"
        save_tensor(path, arr)
        back = load_tensor(path, "matrix")
        assert back.shape == (7, 3)
        assert np.array_equal(back, arr)
        assert back.tobytes() == arr.tobytes()

    def test_vector_round_trip(self, tmp_path):
        arr = np.array([1.5, -2.25, 1e-300, 3e200])
        path = tmp_path / "v.l2s"
        save_tensor(path, arr)
        assert np.array_equal(load_tensor(path, "vector"), arr)

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = tmp_path / "m.l2s"
        save_tensor(path, np.ones((4, 2)))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FormatError, match=r"expected 64 bytes, got 56"):
            load_tensor(path, "matrix")

    def test_empty_dims_rejected(self, tmp_path):
        path = tmp_path / "bad.l2s"
        path.write_bytes(b"L2S1 matrix\n")
        with pytest.raises(FormatError, match="dims"):
            load_tensor(path, "matrix")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.l2s"
        path.write_bytes(b"NOPE matrix 2 2\n" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_tensor(path, "matrix")

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "bad.l2s"
        path.write_bytes(b"L2S1 blob 2 2\n" + b"\x00" * 32)
        with pytest.raises(FormatError, match="unknown kind"):
            load_tensor(path, "matrix")

    def test_kind_mismatch(self, tmp_path):
        path = tmp_path / "v.l2s"
        save_tensor(path, np.ones(3))
        with pytest.raises(FormatError, match="expected kind 'matrix'"):
            load_tensor(path, "matrix")

    def test_trailing_data_rejected(self, tmp_path):
        path = tmp_path / "m.l2s"
        save_tensor(path, np.ones((2, 2)))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            load_tensor(path, "matrix")

    def test_missing_newline_rejected(self, tmp_path):
        path = tmp_path / "m.l2s"
        path.write_bytes(b"L2S1 matrix 1 1")
        with pytest.raises(FormatError, match="newline"):
            load_tensor(path, "matrix")

    def test_zero_dim_rejected(self, tmp_path):
        path = tmp_path / "m.l2s"
        path.write_bytes(b"L2S1 matrix 0 3\n")
        with pytest.raises(FormatError, match="non-positive"):
            load_tensor(path, "matrix")

    def test_refuses_3d(self, tmp_path):
        with pytest.raises(ValueError):
            save_tensor(tmp_path / "x.l2s", np.ones((2, 2, 2)))

    def test_nonfinite_payload_rejected_on_load(self, tmp_path):
        path = tmp_path / "m.l2s"
        arr = np.ones((2, 2))
        save_tensor(path, arr)
        raw = bytearray(path.read_bytes())
        raw[-8:] = np.array([np.nan]).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="non-finite"):
            load_tensor(path, "matrix")


class TestLayerFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        layer = SoftmaxLayer(
            weights=rng.standard_normal((9, 4)), bias=rng.standard_normal(9)
        )
        path = tmp_path / "layer.l2s"
        save_layer(path, layer)
        back = load_layer(path)
        assert np.array_equal(back.weights, layer.weights)
        assert np.array_equal(back.bias, layer.bias)

    def test_version_mismatch_fatal(self, tmp_path):
        rng = np.random.default_rng(2)
        layer = SoftmaxLayer(
            weights=rng.standard_normal((3, 2)), bias=np.zeros(3)
        )
        path = tmp_path / "layer.l2s"
        save_layer(path, layer)
        data = path.read_bytes().replace(b"layer v1", b"layer v9", 1)
        path.write_bytes(data)
        with pytest.raises(FormatError, match="version"):
            load_layer(path)

    def test_wrong_kind_fatal(self, tmp_path):
        path = tmp_path / "t.l2s"
        save_tensor(path, np.ones((2, 2)))
        with pytest.raises(FormatError, match="expected a layer file"):
            load_layer(path)


def random_model(r, vocab, dim, seed=0, density=0.25):
    rng = np.random.default_rng(seed)
    masks = rng.random((r, vocab)) < density
    return ScreeningModel(
        cluster_weights=rng.standard_normal((r, dim)),
        candidate_masks=masks,
        budget=37.5,
    )


class TestModelFiles:
    def test_round_trip_exact(self, tmp_path):
        model = random_model(5, 40, 6, seed=3)
        path = tmp_path / "model.l2s"
        save_model(path, model)
        back = load_model(path)
        assert np.array_equal(back.cluster_weights, model.cluster_weights)
        assert np.array_equal(back.candidate_masks, model.candidate_masks)
        assert back.budget == model.budget

    def test_round_trip_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(4)
        vocab, dim = 50, 5
        layer = SoftmaxLayer(
            weights=rng.standard_normal((vocab, dim)), bias=rng.standard_normal(vocab)
        )
        model = random_model(4, vocab, dim, seed=5)
        path = tmp_path / "model.l2s"
        save_model(path, model)
        back = load_model(path)
        for _ in range(100):
            h = rng.standard_normal(dim)
            a = screened_topk(model, layer, h, 3)
            b = screened_topk(back, layer, h, 3)
            assert a.cluster == b.cluster
            np.testing.assert_array_equal(a.topk.indices, b.topk.indices)
            np.testing.assert_array_equal(a.topk.scores, b.topk.scores)

    def test_empty_candidate_list_round_trips(self, tmp_path):
        masks = np.zeros((3, 10), dtype=bool)
        masks[0, [1, 5]] = True  # clusters 1 and 2 stay empty
        model = ScreeningModel(np.zeros((3, 4)), masks, 2.0)
        path = tmp_path / "model.l2s"
        save_model(path, model)
        back = load_model(path)
        assert np.array_equal(back.candidate_masks, masks)
        assert back.candidate_lists[1].size == 0

    def test_version_mismatch_fatal(self, tmp_path):
        model = random_model(2, 8, 3, seed=6)
        path = tmp_path / "model.l2s"
        save_model(path, model)
        path.write_bytes(path.read_bytes().replace(b"model v1", b"model v2", 1))
        with pytest.raises(FormatError, match="version"):
            load_model(path)

    def test_truncated_list_fatal(self, tmp_path):
        model = random_model(2, 8, 3, seed=7)
        path = tmp_path / "model.l2s"
        save_model(path, model)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_model(path)


class TestGenerateSynthetic:
    SMALL = dict(vocab_size=800, dim=24, n_contexts=600, r_true=5, subset_size=20)

    def test_noiseless_containment_is_one(self):
        spec = SynthSpec(noise_sigma=0.0, seed=1, **self.SMALL)
        _, _, meta = generate_synthetic(spec)
        assert meta["containment"] == 1.0

    def test_single_bundle(self):
        spec = SynthSpec(
            vocab_size=400, dim=16, n_contexts=200, r_true=1, subset_size=20,
            noise_sigma=0.1, seed=2,
        )
        layer, contexts, meta = generate_synthetic(spec)
        assert meta["containment"] >= 0.95
        y = label_contexts(layer, contexts, 5)
        assert set(np.unique(y)) <= set(meta["subsets"][0].tolist())

    def test_default_scale_containment(self):
        spec = SynthSpec(noise_sigma=0.1, seed=3, **self.SMALL)
        layer, contexts, meta = generate_synthetic(spec)
        assert meta["containment"] >= 0.95
        assert layer.vocab_size == self.SMALL["vocab_size"]
        assert contexts.shape == (self.SMALL["n_contexts"], self.SMALL["dim"])

    def test_deterministic_per_seed(self):
        spec = SynthSpec(seed=4, **self.SMALL)
        layer_a, contexts_a, meta_a = generate_synthetic(spec)
        layer_b, contexts_b, meta_b = generate_synthetic(spec)
        assert np.array_equal(layer_a.weights, layer_b.weights)
        assert np.array_equal(contexts_a, contexts_b)
        assert np.array_equal(meta_a["bundle"], meta_b["bundle"])

    def test_subsets_disjoint(self):
        spec = SynthSpec(seed=5, **self.SMALL)
        _, _, meta = generate_synthetic(spec)
        flat = meta["subsets"].ravel()
        assert len(set(flat.tolist())) == flat.size

    def test_impossible_containment_raises(self):
        spec = SynthSpec(
            vocab_size=400, dim=8, n_contexts=300, r_true=5, subset_size=10,
            noise_sigma=50.0, seed=6,
        )
        with pytest.raises(RuntimeError, match="lower noise_sigma"):
            generate_synthetic(spec, max_attempts=2)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(vocab_size=10, subset_size=20)
        with pytest.raises(ValueError):
            SynthSpec(vocab_size=100, r_true=30, subset_size=10)
        with pytest.raises(ValueError):
            SynthSpec(n_contexts=5, r_true=10)


class TestSampleTargets:
    def test_deterministic_and_in_range(self):
        spec = SynthSpec(seed=7, **TestGenerateSynthetic.SMALL)
        layer, contexts, _ = generate_synthetic(spec)
        a = sample_targets(layer, contexts[:100], seed=8)
        b = sample_targets(layer, contexts[:100], seed=8)
        assert np.array_equal(a, b)
        assert a.min() >= 0 and a.max() < layer.vocab_size

    def test_prefers_high_probability_tokens(self):
        # A layer with one dominant logit everywhere should almost always
        # sample that token.
        rng = np.random.default_rng(9)
        weights = 0.01 * rng.standard_normal((30, 4))
        weights[11] = rng.standard_normal(4) * 3
        h = np.tile(weights[11] / np.linalg.norm(weights[11]) * 4, (200, 1))
        layer = SoftmaxLayer(weights=weights, bias=np.zeros(30))
        targets = sample_targets(layer, h, seed=10)
        assert (targets == 11).mean() > 0.9
