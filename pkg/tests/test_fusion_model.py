import numpy as np
import pytest

from vertenet import ops
from vertenet.attention import WindowSpec
from vertenet.fusion import FUSION_MODES, McfbParams, UpsamplePathParams, decoder_upsample_path, mcfb_fuse, simple_fuse
from vertenet.gradcheck import finite_diff_gradcheck
from vertenet.model import (ModelConfig, VertenetParams, encoder_forward, load_model, predict_landmarks,
                            save_model, vertenet_forward)
from vertenet.tensor import GradTape, ShapeError, Tensor, count_parameters, named_tensors, parameters

SPEC = WindowSpec(p=10, r=2, heads_high=1, heads_low=1)
SMALL = dict(encoder_widths=(4, 8, 8, 16), head_width=8, input_size=(256, 128))


# ---------------------------------------------------------------- decoder upsample path

def test_upsample_path_shape(rng):
    p = UpsamplePathParams.create(rng, 16, 6)
    assert decoder_upsample_path(Tensor(rng.normal(size=(1, 16, 8, 4))), p).shape == (1, 6, 16, 8)
    with pytest.raises(ShapeError):
        decoder_upsample_path(Tensor(rng.normal(size=(1, 16, 8, 4))), p, skip_hw=(15, 8))


def test_upsample_path_identity_conv_keeps_constant(rng):
    p = UpsamplePathParams.create(rng, 3, 3)
    w = np.zeros((3, 3, 3, 3))
    w[np.arange(3), np.arange(3), 1, 1] = 1.0
    p.weight.data = w
    x = Tensor(np.broadcast_to(np.array([0.5, 1.0, 2.0]).reshape(1, 3, 1, 1), (1, 3, 4, 5)))
    out = decoder_upsample_path(x, p).data
    np.testing.assert_allclose(out, np.broadcast_to(x.data[:, :, :1, :1], out.shape), atol=1e-15)


# ---------------------------------------------------------------- MCFB

def test_mcfb_output_shape_and_mismatch(rng):
    p = McfbParams.create(rng, 16, 8, 6, SPEC)
    a, b = Tensor(rng.normal(size=(1, 8, 20, 20))), Tensor(rng.normal(size=(1, 8, 20, 20)))
    assert mcfb_fuse(a, b, p).shape == (1, 6, 20, 20)
    with pytest.raises(ShapeError):
        mcfb_fuse(a, Tensor(rng.normal(size=(1, 8, 10, 20))), p)


def _conv3x3(x, w):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    H, W = x.shape[2:]
    out = np.zeros((x.shape[0], w.shape[0], H, W))
    for i in range(3):
        for j in range(3):
            out += np.einsum("oc,bchw->bohw", w[:, :, i, j], xp[:, :, i:i + H, j:j + W])
    return out


def test_mcfb_with_zero_attention_and_ffn_weights_traces_residuals(rng):
    p = McfbParams.create(rng, 16, 8, 6, SPEC)
    for block in (p.self_skip, p.self_dec, p.cross_skip, p.cross_dec, p.channel_block):
        for t in parameters(block.attn) + parameters(block.gdfn):
            t.data = np.zeros_like(t.data)
    p.out_bn.running_mean.data = rng.normal(size=6)
    p.out_bn.running_var.data = rng.uniform(0.5, 2.0, size=6)
    p.out_bn.gamma.data = rng.uniform(0.5, 1.5, size=6)
    p.out_bn.beta.data = rng.normal(size=6)
    xs, xd = rng.normal(size=(1, 8, 20, 20)), rng.normal(size=(1, 8, 20, 20))
    got = mcfb_fuse(Tensor(xs), Tensor(xd), p, training=False).data
    fc = np.einsum("oc,bchw->bohw", p.concat_proj.data[:, :, 0, 0], np.concatenate([xs, xd], axis=1))
    y = _conv3x3(fc, p.out_conv.data)
    bn = p.out_bn
    y = (y - bn.running_mean.data.reshape(1, -1, 1, 1)) / np.sqrt(bn.running_var.data.reshape(1, -1, 1, 1) + 1e-5)
    y = y * bn.gamma.data.reshape(1, -1, 1, 1) + bn.beta.data.reshape(1, -1, 1, 1)
    np.testing.assert_allclose(got, np.maximum(y, 0.0), atol=1e-12)


def test_mcfb_is_not_symmetric_in_its_arguments(rng):
    p = McfbParams.create(rng, 16, 8, 8, SPEC)
    a, b = Tensor(rng.normal(size=(1, 8, 20, 20))), Tensor(rng.normal(size=(1, 8, 20, 20)))
    assert np.max(np.abs(mcfb_fuse(a, b, p).data - mcfb_fuse(b, a, p).data)) > 1e-6


@pytest.mark.parametrize("mode", FUSION_MODES)
def test_every_parameter_receives_gradient(rng, mode):
    spec = WindowSpec(p=4, r=2, heads_high=1, heads_low=1)
    p = McfbParams.create(rng, 4, 4, 4, spec, mode)
    a, b = Tensor(rng.normal(size=(2, 4, 8, 8))), Tensor(rng.normal(size=(2, 4, 8, 8)))
    weights = rng.normal(size=(2, 4, 8, 8))
    named = [(n, t) for n, t in named_tensors(p) if t.requires_grad and not n.startswith("upsample")]
    with GradTape() as tape:
        y = ops.sum(ops.mul(mcfb_fuse(a, b, p, training=True), weights))
    grads = tape.gradient(y, [t for _, t in named])
    dead = [n for (n, _), g in zip(named, grads) if not np.any(g != 0)]
    assert not dead


def test_parameter_counts_order_by_mode(rng):
    counts = {m: count_parameters(McfbParams.create(np.random.default_rng(0), 16, 8, 8, SPEC, m))
              for m in FUSION_MODES}
    assert counts["simple"] < counts["drsa-only"] < counts["full"]
    assert counts["simple"] < counts["drca-only"] < counts["full"]


def test_simple_fuse_of_zeros_is_zero(rng):
    p = McfbParams.create(rng, 16, 8, 8, SPEC, "simple")
    z = Tensor(np.zeros((1, 8, 6, 6)))
    np.testing.assert_array_equal(simple_fuse(z, z, p).data, 0.0)
    assert mcfb_fuse(z, z, p).shape == (1, 8, 6, 6)


def test_mcfb_rejects_unknown_mode(rng):
    with pytest.raises(ValueError):
        McfbParams.create(rng, 8, 8, 8, SPEC, "other")


# ---------------------------------------------------------------- model

@pytest.fixture(scope="module")
def small_model():
    return VertenetParams.create(ModelConfig(**SMALL), seed=0)


def test_encoder_strides_and_widths(small_model):
    feats = encoder_forward(Tensor(np.zeros((1, 1, 256, 128))), small_model)
    assert [f.shape for f in feats] == [(1, 4, 64, 32), (1, 8, 32, 16), (1, 8, 16, 8), (1, 16, 8, 4)]


def test_heads_shapes_and_ranges(small_model):
    img = np.random.default_rng(0).uniform(size=(1, 1, 256, 128))
    out = vertenet_forward(Tensor(img), small_model)
    assert out.heatmap.shape == (1, 1, 64, 32)
    assert out.center_offset.shape == (1, 2, 64, 32) and out.corner_offset.shape == (1, 8, 64, 32)
    assert np.all((out.heatmap.data >= 0) & (out.heatmap.data <= 1))
    assert np.all(np.isfinite(out.center_offset.data)) and np.all(np.isfinite(out.corner_offset.data))


def test_undersized_and_ragged_inputs_rejected(small_model):
    with pytest.raises(ShapeError):
        encoder_forward(Tensor(np.zeros((1, 1, 16, 64))), small_model)
    with pytest.raises(ShapeError):
        encoder_forward(Tensor(np.zeros((1, 1, 70, 64))), small_model)


def test_config_rejects_unsupported_grid():
    with pytest.raises(ValueError):
        ModelConfig(levels={2: (3, 10), 3: (2, 10), 4: (2, 10)})
    with pytest.raises(ValueError):
        ModelConfig(levels={2: (2, 15), 3: (2, 10), 4: (2, 10)})
    with pytest.raises(ValueError):
        ModelConfig(fusion_mode="none")


def test_encoder_gradcheck_at_minimal_width():
    rng = np.random.default_rng(3)
    p = VertenetParams.create(ModelConfig(encoder_widths=(2, 2, 2, 2), head_width=2, input_size=(64, 64)), seed=3)
    for name, t in named_tensors(p.encoder):
        if name.endswith("running_mean"):
            t.data = rng.normal(0.0, 0.3, size=t.shape)
        elif name.endswith("running_var"):
            t.data = rng.uniform(0.5, 2.0, size=t.shape)
        elif name.endswith("bn.beta"):
            t.data = rng.uniform(0.5, 1.5, size=t.shape)
    img = Tensor(rng.uniform(size=(1, 1, 64, 64)))
    weights = [rng.normal(size=s) for s in [(1, 2, 16, 16), (1, 2, 8, 8), (1, 2, 4, 4), (1, 2, 2, 2)]]

    def f(*_):
        feats = encoder_forward(img, p, training=False)
        return ops.add(ops.add(ops.sum(ops.mul(feats[0], weights[0])), ops.sum(ops.mul(feats[1], weights[1]))),
                       ops.add(ops.sum(ops.mul(feats[2], weights[2])), ops.sum(ops.mul(feats[3], weights[3]))))

    res = finite_diff_gradcheck(f, [img] + parameters(p.encoder), max_coords=6)
    assert res.max_rel_error < 1e-4


def test_model_file_round_trip(tmp_path, small_model):
    path = tmp_path / "m.vnet"
    save_model(path, small_model)
    loaded = load_model(path)
    assert loaded.config == small_model.config
    for (n1, t1), (n2, t2) in zip(named_tensors(small_model), named_tensors(loaded)):
        assert n1 == n2 and t1.data.tobytes() == t2.data.tobytes()
    img = np.random.default_rng(1).uniform(size=(250, 120))
    a, b = predict_landmarks(img, small_model), predict_landmarks(img, loaded)
    assert a.image_size == (250, 120)
    np.testing.assert_array_equal(a.corners, b.corners)
    save_model(tmp_path / "again.vnet", loaded)
    assert path.read_bytes() == (tmp_path / "again.vnet").read_bytes()


def test_model_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.vnet"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ValueError):
        load_model(path)
