"""Model assembly tests: builders, spec serialization, end-to-end gradients,
ablation/extraction paths, and the checkpoint container."""

import json

import numpy as np
import pytest

from s3fnet.errors import ConfigError, IntegrityError, ShapeError
from s3fnet.fusion import FusionKind, fuse
from s3fnet.models import (
    Model,
    ModelConfig,
    NetworkSpec,
    build_model,
    build_network_spec,
    build_s3fnet,
    build_spatial_baseline,
    build_spectranet,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)

from oracles import finite_difference, relative_error

# small enough for fast forward passes, large enough to exercise every stage
TINY = ModelConfig(
    spatial_widths=(4, 4),
    spatial_vector_dim=6,
    spatial_dropout=0.0,
    spectral_filters=4,
    spectral_filters2=4,
    summarizer_widths=(4, 4),
    funnel_width=5,
    funnel_dropout=0.0,
    spectral_vector_dim=3,
)

FAMILIES = ["spatial", "spectranet1", "spectranet2", "s3f-concat", "s3f-bilinear"]


def tiny_model(family, seed=0, shape=(8, 8, 1), n_classes=3):
    return build_model(family, shape, n_classes, TINY).initialize(seed)


def batch(shape, n=2, seed=0):
    return np.random.default_rng(seed).normal(size=(n, *shape))


class TestBuilders:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_output_shape(self, family):
        model = tiny_model(family)
        logits = model.forward(batch((8, 8, 1)))
        assert logits.shape == (2, 3)

    def test_spatial_divisibility_error(self):
        with pytest.raises(ConfigError):
            build_spatial_baseline((20, 20, 1), 3)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            build_spectranet(3, (16, 16, 1), 2)

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            build_model("resnet", (16, 16, 1), 2)

    def test_branch_vector_dims_default(self):
        model = build_model("s3f-concat", (16, 16, 1), 3).initialize(0)
        vecs = model.extract_branch_vectors(batch((16, 16, 1)))
        assert vecs.v_s.shape == (2, 64)
        assert vecs.v_f.shape == (2, 4)

    def test_funnel_dropout_rate(self):
        spec = build_network_spec("spectranet1", (16, 16, 1), 3)
        rates = [n.rate for n in spec.spectral if n.kind == "dropout"]
        assert rates == [0.1875]

    def test_concat_head_input_dim(self):
        spec = build_network_spec("s3f-concat", (16, 16, 1), 3)
        assert spec.head[0].in_features == 64 + 4

    def test_bilinear_head_input_dim(self):
        spec = build_network_spec("s3f-bilinear", (16, 16, 1), 3)
        assert spec.head[0].in_features == 64 * 4

    def test_spectranet2_has_two_spectral_layers(self):
        spec = build_network_spec("spectranet2", (16, 16, 1), 3)
        spectral = [n for n in spec.spectral if n.kind == "spectral"]
        assert [n.out_channels for n in spectral] == [32, 64]
        # second layer binds the pooled resolution
        assert (spectral[1].height, spectral[1].width) == (8, 8)

    def test_param_count_hand_oracle(self):
        # widths [8,8,8,8] on 32x32x1, d_s=64, 3 classes, counted by hand:
        cfg = ModelConfig(spatial_widths=(8, 8, 8, 8))
        model = build_spatial_baseline((32, 32, 1), 3, cfg).initialize(0)
        conv_w = 3 * 3 * 1 * 8 + 8  # first conv
        conv_w += 7 * (3 * 3 * 8 * 8 + 8)  # remaining seven convs
        bn_train = 8 * (2 * 8)  # scale+shift per batchnorm
        bn_running = 8 * (2 * 8)  # running mean/var, not trainable
        dense = (8 * 64 + 64) + (64 * 3 + 3)
        sizes = {k: v.size for k, v in model.param_store().items()}
        assert sum(sizes.values()) == conv_w + bn_train + bn_running + dense
        trainable = sum(sizes[k] for k in model.trainable_names())
        assert trainable == conv_w + bn_train + dense

    @pytest.mark.parametrize("variant", [1, 2])
    def test_smoke_100_seeds(self, variant):
        x = batch((16, 16, 1), n=2, seed=42)
        for seed in range(100):
            model = build_spectranet(variant, (16, 16, 1), 3).initialize(seed)
            assert np.all(np.isfinite(model.forward(x)))

    @pytest.mark.parametrize("family", ["spatial", "s3f-concat", "s3f-bilinear"])
    def test_smoke_fused_and_spatial(self, family):
        x = batch((16, 16, 1), n=2, seed=42)
        for seed in range(20):
            model = build_model(family, (16, 16, 1), 3, TINY).initialize(seed)
            assert np.all(np.isfinite(model.forward(x)))

    def test_build_s3fnet_uses_fusion_kind(self):
        model = build_s3fnet((16, 16, 1), 3, FusionKind("bilinear", normalize=False))
        assert model.spec.family == "s3f-bilinear"
        assert model.fusion.normalize is False


class TestSpecSerialization:
    def test_json_roundtrip(self):
        spec = build_network_spec("s3f-bilinear", (16, 16, 1), 4)
        blob = json.dumps(spec.to_dict())
        again = NetworkSpec.from_dict(json.loads(blob))
        assert again == spec
        assert again.canonical_hash() == spec.canonical_hash()

    def test_hash_sensitive_to_edits(self):
        spec = build_network_spec("spatial", (16, 16, 1), 4)
        d = spec.to_dict()
        d["n_classes"] = 5
        assert NetworkSpec.from_dict(d).canonical_hash() != spec.canonical_hash()

    def test_fusion_presence_rule(self):
        spec = build_network_spec("s3f-concat", (16, 16, 1), 3)
        with pytest.raises(ConfigError):
            NetworkSpec(
                family="s3f-concat",
                input_shape=(16, 16, 1),
                n_classes=3,
                spatial=spec.spatial,
                spectral=spec.spectral,
                head=spec.head,
                fusion=None,
            )

    def test_head_chain_validated(self):
        spec = build_network_spec("spatial", (16, 16, 1), 3)
        d = spec.to_dict()
        d["head"][0]["in_features"] = 99
        with pytest.raises(ConfigError):
            Model(NetworkSpec.from_dict(d))

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            ModelConfig().merged({"widths": (1, 2)})


class TestForwardContracts:
    def test_predict_rows_sum_to_one(self):
        model = tiny_model("s3f-concat")
        probs = model.predict(batch((8, 8, 1), n=4))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_inference_bitwise_deterministic(self, family):
        model = tiny_model(family)
        x = batch((8, 8, 1))
        assert np.array_equal(model.forward(x), model.forward(x))

    def test_input_shape_error(self):
        model = tiny_model("spatial")
        with pytest.raises(ShapeError):
            model.forward(batch((8, 8, 2)))
        with pytest.raises(ShapeError):
            model.forward(np.zeros((8, 8, 1)))

    def test_extract_requires_fusion(self):
        with pytest.raises(ConfigError):
            tiny_model("spatial").extract_branch_vectors(batch((8, 8, 1)))

    def test_zero_branch_validated(self):
        model = tiny_model("s3f-concat")
        with pytest.raises(ConfigError):
            model.forward(batch((8, 8, 1)), zero_branch="fourier")


class TestAblationAndExtraction:
    @pytest.mark.parametrize("family", ["s3f-concat", "s3f-bilinear"])
    def test_extract_then_fuse_matches_full_forward(self, family):
        model = tiny_model(family, seed=3)
        x = batch((8, 8, 1), n=3, seed=5)
        vecs = model.extract_branch_vectors(x)
        fused, _ = fuse(model.fusion, vecs.v_s, vecs.v_f)
        manual = fused
        for layer in model.head_layers:
            manual = layer.forward(manual, False)
        full = model.forward(x)
        assert np.max(np.abs(manual - full)) < 1e-10

    def test_spectral_ablation_ignores_spectral_weights(self):
        model = tiny_model("s3f-concat", seed=1)
        x = batch((8, 8, 1), n=3, seed=2)
        ablated = model.forward(x, zero_branch="spectral")
        full = model.forward(x)
        assert not np.allclose(ablated, full)
        # scrambling the spectral tower cannot reach the ablated path
        from s3fnet.layers import iter_layers

        for layer in iter_layers(model.spectral_layers):
            for key in layer.params:
                layer.params[key] = layer.params[key] + 17.0
        assert np.array_equal(model.forward(x, zero_branch="spectral"), ablated)

    def test_spectral_ablation_equals_manual_zero_fuse(self):
        model = tiny_model("s3f-concat", seed=4)
        x = batch((8, 8, 1), n=2, seed=6)
        vecs = model.extract_branch_vectors(x)
        fused, _ = fuse(model.fusion, vecs.v_s, np.zeros_like(vecs.v_f))
        manual = fused
        for layer in model.head_layers:
            manual = layer.forward(manual, False)
        assert np.array_equal(model.forward(x, zero_branch="spectral"), manual)

    def test_branch_independence(self):
        model = tiny_model("s3f-concat", seed=2)
        x = batch((8, 8, 1), n=2, seed=9)
        before = model.extract_branch_vectors(x)
        conv = model.spatial_layers[0]
        conv.params["w"] = conv.params["w"] + 0.5
        after = model.extract_branch_vectors(x)
        assert np.array_equal(before.v_f, after.v_f)
        assert not np.allclose(before.v_s, after.v_s)

        spect = model.spectral_layers[0]
        spect.params["w_real"] = spect.params["w_real"] + 0.5
        perturbed = model.extract_branch_vectors(x)
        assert np.array_equal(after.v_s, perturbed.v_s)
        assert not np.allclose(after.v_f, perturbed.v_f)


def model_loss_grads(family, seed, coords_per_tensor=3):
    """Analytic vs finite-difference grads of a quadratic loss on logits."""
    model = tiny_model(family, seed=seed)
    rng = np.random.default_rng(1000 + seed)
    x = rng.normal(size=(2, 8, 8, 1))
    target = rng.normal(size=(2, 3))

    def loss():
        logits = model.forward(x, train=True)
        return 0.5 * np.sum((logits - target) ** 2)

    logits = model.forward(x, train=True)
    model.backward(logits - target)
    grads = model.grad_store()
    params = model.param_store()
    worst = 0.0
    for name in model.trainable_names():
        tensor = params[name]
        size = tensor.size
        picks = rng.choice(size, size=min(coords_per_tensor, size), replace=False)
        num = finite_difference(lambda _: loss(), tensor, coords=picks)
        for c in picks:
            err = relative_error(grads[name].flat[c], num.flat[c])
            worst = max(worst, err)
    return worst


class TestEndToEndGradients:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_full_model_finite_difference(self, family):
        for seed in (0, 1):
            worst = model_loss_grads(family, seed)
            assert worst < 1e-3, f"{family} seed {seed}: rel err {worst:.2e}"


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = tiny_model("s3f-concat", seed=7)
        x = batch((8, 8, 1), n=3, seed=11)
        expected = model.forward(x)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), model)
        loaded = load_checkpoint(str(path))
        assert np.array_equal(loaded.forward(x), expected)
        theirs = loaded.param_store()
        for name, value in model.param_store().items():
            assert np.array_equal(theirs[name], value)

    def test_header_readable(self, tmp_path):
        model = tiny_model("spectranet1", seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(str(path), model)
        header = read_checkpoint_header(str(path))
        assert header["version"] == 1
        assert header["spec"]["family"] == "spectranet1"
        names = {p["name"] for p in header["params"]}
        assert names == set(model.param_store())

    def test_tampered_header_raises(self, tmp_path):
        model = tiny_model("spatial", seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(str(path), model)
        blob = path.read_bytes()
        evil = blob.replace(b'"n_classes": 3', b'"n_classes": 4', 1)
        assert evil != blob
        path.write_bytes(evil)
        with pytest.raises(IntegrityError):
            load_checkpoint(str(path))

    def test_truncated_payload_raises(self, tmp_path):
        model = tiny_model("spatial", seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(str(path), model)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 64])
        with pytest.raises(IntegrityError):
            load_checkpoint(str(path))

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"\x02\x00\x00\x00\x00\x00\x00\x00{}")
        with pytest.raises(IntegrityError):
            read_checkpoint_header(str(path))


class TestStateErrors:
    def test_backward_before_forward_fused(self):
        from s3fnet.errors import StateError

        model = tiny_model("s3f-concat")
        with pytest.raises(StateError):
            model.backward(np.zeros((2, 3)))
