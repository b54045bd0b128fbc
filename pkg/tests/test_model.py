import numpy as np
import pytest

from tagcn import checkpoint
from tagcn.autograd import ShapeError
from tagcn.diagnostics import toy_config
from tagcn.model import (STGCN_PLAN, ConfigError, LayerSpec, ModelConfig, build_multistream,
                         build_stgcn_baseline, build_tagcn, ensemble, load_config, predict,
                         save_config, softmax, stgcn_config, tagcn_config)


def ceil_div(a, b):
    return -(-a // b)


def test_canonical_extents():
    cfg = tagcn_config()
    assert cfg.channels() == [64, 64, 128, 128, 256, 256]
    assert cfg.temporal_extents() == [300, 300, 75, 75, 38, 38]
    assert cfg.frames_into_tam() == 300


def test_extents_match_analytic_formula():
    for t in (16, 50, 101, 300):
        for tp in (1, t // 3 or 1, t):
            cfg = tagcn_config(sequence_length=t, t_prime=tp)
            ext = cfg.temporal_extents()
            assert ext[2] == ceil_div(tp, 2) and ext[4] == ceil_div(ceil_div(tp, 2), 2)


def test_baseline_extents_and_plan():
    cfg = stgcn_config()
    assert len(cfg.layers) == 9 and cfg.temporal_extents()[-1] == 75
    assert cfg.channels() == [64, 64, 64, 64, 128, 128, 128, 256, 256]
    assert cfg.input_channels == 3 and cfg.mask_mode == "multiply" and not cfg.tam_after


def test_toy_widths():
    assert toy_config().channels() == [4, 4, 8, 8, 16, 16]
    assert tagcn_config(width_scale=1e-4).channels() == [1] * 6


def test_toy_forward_shapes(rng):
    net = build_tagcn(toy_config(input_channels=6), seed=1)
    logits, att = net(rng.normal(size=(3, 6, 16, 5)), return_attention=True)
    assert logits.shape == (3, 4) and np.isfinite(logits.data).all()
    assert att.selected.shape == (3, 4, 8, 5) and att.indices.shape == (3, 8)
    assert (np.diff(att.indices, axis=1) > 0).all()
    single = net(rng.normal(size=(6, 16, 5)))
    assert single.shape == (1, 4)


def test_no_selection_variant(rng):
    net = build_tagcn(toy_config(t_prime=16), seed=0)
    _, att = net(rng.normal(size=(2, 6, 16, 5)), return_attention=True)
    assert att.indices.tolist() == [list(range(16))] * 2


def test_baseline_toy_forward(rng):
    cfg = stgcn_config(num_joints=5, topology="toy5", sequence_length=12, num_classes=3,
                       width_scale=1 / 16)
    net = build_stgcn_baseline(cfg)
    assert len(net.blocks) == 9 and net.tam is None
    assert net(rng.normal(size=(2, 3, 12, 5))).shape == (2, 3)
    assert build_stgcn_baseline(tagcn_config()).config.layers == STGCN_PLAN


def test_shape_mismatch_rejected(rng):
    net = build_tagcn(toy_config())
    for shape in [(1, 5, 16, 5), (1, 6, 15, 5), (1, 6, 16, 4)]:
        with pytest.raises(ShapeError):
            net(rng.normal(size=shape))


@pytest.mark.parametrize("overrides,fragment", [
    (dict(t_prime=17), "t_prime"),
    (dict(tam_after=6), "tam_after"),
    (dict(temporal_kernel=4), "odd"),
    (dict(mask_mode="xor"), "mask_mode"),
    (dict(layers=(LayerSpec(4, 2, False, False), LayerSpec(4))), "temporal stage"),
    (dict(width_scale=0), "width_scale"),
])
def test_invalid_configs(overrides, fragment):
    with pytest.raises(ConfigError, match=fragment):
        toy_config(**overrides).validate()


def test_config_round_trip(tmp_path):
    cfg = toy_config(mask_mode="multiply", t_prime=5)
    save_config(tmp_path / "m.yaml", cfg)
    assert load_config(tmp_path / "m.yaml") == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"depth": 3})


def test_softmax_examples(rng):
    np.testing.assert_allclose(softmax([2.0, 0.0]),
                               [np.e**2 / (np.e**2 + 1), 1 / (np.e**2 + 1)], rtol=1e-15)
    net = build_tagcn(toy_config())
    for p in net.fc.parameters():
        p.data[:] = 0
    _, probs = predict(net(rng.normal(size=(2, 6, 16, 5))))
    np.testing.assert_allclose(probs, 0.25, rtol=1e-15)


def test_predict_matches_reference(rng):
    logits = rng.normal(size=(20, 7)) * 5
    cls, probs = predict(logits)
    ref = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, ref, rtol=1e-12)
    assert np.all(np.abs(probs.sum(axis=1) - 1) < 1e-9)
    assert cls.tolist() == ref.argmax(axis=1).tolist()
    shifted = logits + rng.normal(size=(20, 1))
    np.testing.assert_allclose(predict(shifted)[1], probs, rtol=1e-12)


def test_ensemble_examples(rng):
    fused, cls = ensemble([[0.6, 0.4], [0.1, 0.9]])
    np.testing.assert_allclose(fused, [0.7, 1.3])
    assert int(cls) == 1
    s = rng.random((5, 4))
    assert ensemble([s, s])[1].tolist() == s.argmax(axis=1).tolist()
    sets = [rng.random((6, 3)) for _ in range(4)]
    oracle = np.zeros((6, 3))
    for s in sets:
        oracle += s
    np.testing.assert_allclose(ensemble(sets)[0], oracle)
    assert ensemble([[0.5, 0.5]])[1] == 0
    with pytest.raises(ValueError):
        ensemble([np.ones(3), np.ones(4)])


def test_multistream(rng):
    model = build_multistream(["joint", "bone"], toy_config(input_channels=3))
    x = rng.normal(size=(2, 3, 16, 5))
    fused, cls = model.predict({"joint": x, "bone": x})
    assert fused.shape == (2, 4) and np.allclose(fused.sum(axis=1), 2)


def test_checkpoint_forward_bit_identical(tmp_path, rng):
    net = build_tagcn(toy_config(), seed=3)
    net.eval()
    x = rng.normal(size=(2, 6, 16, 5))
    before = net(x).data
    checkpoint.save_module(tmp_path / "n.ckpt", net)
    other = build_tagcn(toy_config(), seed=99)
    other.eval()
    checkpoint.load_module(tmp_path / "n.ckpt", other)
    assert other(x).data.tobytes() == before.tobytes()


def test_parameter_names_unique():
    names = [n for n, _ in build_tagcn(toy_config()).named_parameters()]
    assert len(names) == len(set(names))
    assert "tam.theta" in names and "fc.weight" in names
