import numpy as np
import pytest

from cocoimc import numerics as nx
from cocoimc.data import ConfigurationError
from cocoimc.losses import loss_ccl, loss_cml, loss_pre, loss_rec, joint_distribution
from cocoimc.networks import (
    CheckpointError,
    Mlp,
    cluster_probs,
    cross_predict,
    decode,
    ema_update,
    encode,
    init_model,
    load_checkpoint,
    online_forward,
    save_checkpoint,
    target_forward,
)

SMALL = dict(hidden=(10,), proj_hidden=6, proj_dim=4, pred_hidden=6, cross_hidden=6)


@pytest.fixture
def bundle():
    return init_model([5, 3], latent_dim=4, n_clusters=3, seed=11, **SMALL)


def test_layer_parameter_count():
    p = Mlp("m", [4, 3]).init(np.random.default_rng(0))
    assert p["m.w0"].size == 12 and p["m.b0"].size == 3


def test_mlp_rejects_bad_dims():
    with pytest.raises(ConfigurationError):
        Mlp("m", [4])
    with pytest.raises(ConfigurationError):
        Mlp("m", [4, 0])


def test_target_starts_as_copy(bundle):
    for k in bundle.target_keys():
        np.testing.assert_array_equal(bundle.target[k], bundle.params[k])
        assert bundle.target[k] is not bundle.params[k]


def test_same_seed_same_parameters():
    a = init_model([5, 3], 4, 3, seed=2, **SMALL)
    b = init_model([5, 3], 4, 3, seed=2, **SMALL)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_online_and_target_architectures_match(bundle):
    for k in bundle.target_keys():
        assert bundle.target[k].shape == bundle.params[k].shape
    assert {k.split(".")[0] for k in bundle.target_keys()} == {"enc0", "enc1", "proj0", "proj1"}


def test_encode_shapes_and_determinism(bundle, rng):
    x = rng.normal(size=(7, 5))
    z = encode(bundle, 0, x)
    assert z.shape == (7, 4)
    np.testing.assert_array_equal(z, encode(bundle, 0, x))
    assert decode(bundle, 0, z).shape == (7, 5)


def test_zero_encoder_gives_zero_latent(bundle, rng):
    params = {k: np.zeros_like(v) for k, v in bundle.params.items()}
    np.testing.assert_array_equal(encode(bundle, 1, rng.normal(size=(4, 3)), params), 0.0)


def test_encode_wrong_width(bundle):
    with pytest.raises(nx.DimensionError):
        encode(bundle, 0, np.ones((2, 4)))


def test_forward_rows_unit_norm(bundle, rng):
    x = rng.normal(size=(9, 5))
    for out in (online_forward(bundle, 0, x), target_forward(bundle, 0, x)):
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)


def test_softmax_predictor_mode(rng):
    b = init_model([5, 3], 4, 3, seed=0, predictor_out="softmax", **SMALL)
    out = online_forward(b, 0, rng.normal(size=(6, 5)))
    assert (out > 0).all()
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)


def test_target_forward_repeatable(bundle, rng):
    x = rng.normal(size=(5, 5))
    np.testing.assert_array_equal(target_forward(bundle, 0, x), target_forward(bundle, 0, x))


def test_degenerate_row_is_nudged_and_logged(bundle, caplog):
    params = dict(bundle.params)
    for k in ("pred0.w1", "pred0.b1"):
        params[k] = np.zeros_like(params[k])
    with caplog.at_level("WARNING"):
        out = online_forward(bundle, 0, np.ones((2, 5)), params)
    assert np.isfinite(out).all()
    assert "zero row" in caplog.text


def _full_loss(bundle, leaves, x1, x2):
    z1, z2 = encode(bundle, 0, x1, leaves), encode(bundle, 1, x2, leaves)
    rec = loss_rec(x1, decode(bundle, 0, z1, leaves)) + loss_rec(x2, decode(bundle, 1, z2, leaves))
    cml = loss_cml(online_forward(bundle, 0, None, leaves, z=z1), target_forward(bundle, 0, x1))
    cml = cml + loss_cml(online_forward(bundle, 1, None, leaves, z=z2), target_forward(bundle, 1, x2))
    pre = loss_pre(z1, z2, lambda z: cross_predict(bundle, 0, z, leaves), lambda z: cross_predict(bundle, 1, z, leaves))
    P = joint_distribution(cluster_probs(bundle, 0, z1, leaves), cluster_probs(bundle, 1, z2, leaves))
    return rec + cml + pre + loss_ccl(P)


def test_no_gradient_reaches_target(bundle, rng):
    x1, x2 = rng.normal(size=(8, 5)), rng.normal(size=(8, 3))
    tape = nx.Tape()
    leaves = {k: tape.leaf(v) for k, v in bundle.params.items()}
    target_leaves = {k: tape.leaf(v) for k, v in bundle.target.items()}
    bundle.target = target_leaves
    tape.backward(_full_loss(bundle, leaves, x1, x2))
    assert sum(np.abs(t.grad).sum() for t in target_leaves.values()) == 0.0
    assert sum(np.abs(leaves[k].grad).sum() for k in bundle.target_keys()) > 0


def test_target_forward_detaches_taped_targets(bundle, rng):
    tape = nx.Tape()
    bundle.target = {k: tape.leaf(v) for k, v in bundle.target.items()}
    out = target_forward(bundle, 0, rng.normal(size=(3, 5)))
    assert isinstance(out, np.ndarray)


def test_ema_endpoints(bundle):
    shifted = {k: v + 1.0 for k, v in bundle.params.items()}
    bundle.params = shifted
    before = {k: v.copy() for k, v in bundle.target.items()}
    ema_update(bundle, 1.0)
    for k in before:
        np.testing.assert_array_equal(bundle.target[k], before[k])
    ema_update(bundle, 0.0)
    for k in before:
        np.testing.assert_array_equal(bundle.target[k], bundle.params[k])


def test_ema_hand_value(bundle):
    k = bundle.target_keys()[0]
    bundle.target[k] = np.ones_like(bundle.target[k])
    bundle.params[k] = np.zeros_like(bundle.params[k])
    ema_update(bundle, 0.9)
    np.testing.assert_allclose(bundle.target[k], 0.9, rtol=0, atol=1e-15)


@pytest.mark.parametrize("m", [0.0, 0.3, 0.9, 0.996])
def test_ema_contraction(bundle, m):
    for k in bundle.target_keys():
        bundle.target[k] = bundle.params[k] + 1.0
    gap = {k: bundle.target[k] - bundle.params[k] for k in bundle.target}
    ema_update(bundle, m)
    for k in gap:
        np.testing.assert_allclose(np.abs(bundle.target[k] - bundle.params[k]), m * np.abs(gap[k]), atol=1e-14)


def test_ema_rejects_out_of_range(bundle):
    with pytest.raises(ConfigurationError):
        ema_update(bundle, 1.5)


def test_cross_predictor_rows_and_finiteness(bundle, rng):
    out = cross_predict(bundle, 0, rng.normal(size=(6, 4)) * 100)
    assert out.shape == (6, 4) and np.isfinite(out).all()


def test_cluster_probs_are_distributions(bundle, rng):
    p = cluster_probs(bundle, 1, rng.normal(size=(5, 4)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_checkpoint_round_trip(bundle, tmp_path):
    bundle.target = {k: v + 0.5 for k, v in bundle.target.items()}
    save_checkpoint(bundle, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.view_dims == bundle.view_dims and back.arch == bundle.arch
    for store, other in ((bundle.params, back.params), (bundle.target, back.target)):
        assert store.keys() == other.keys()
        for k in store:
            assert store[k].tobytes() == other[k].tobytes()


def test_checkpoint_truncated(bundle, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(bundle, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"hello\n{}\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x")


def test_unknown_arch_key():
    with pytest.raises(ConfigurationError):
        init_model([3, 3], 4, 2, depth=3)
