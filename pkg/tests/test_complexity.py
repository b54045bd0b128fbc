import json

import numpy as np
import pytest

from tagcn.complexity import (REPORTED_RATIOS, compare, count_flops, count_params, ratio_table,
                              report)
from tagcn.diagnostics import toy_config
from tagcn.layers import Conv2d
from tagcn.model import build_multistream, build_stgcn_baseline, build_tagcn, stgcn_config, \
    tagcn_config


def config_oracle(cfg):
    """(params, flops) recomputed from the config alone."""
    n, k, t, c = cfg.num_joints, cfg.temporal_kernel, cfg.sequence_length, cfg.input_channels
    pad = (k - 1) // 2
    params = flops = 0
    for i, (spec, co) in enumerate(zip(cfg.layers, cfg.channels())):
        if cfg.tam_after and i == cfg.tam_after:
            params += t * t
            flops += 3 * c * t * n + 2 * t * t + t
            t = cfg.t_prime
        params += 3 * co * c + 3 * n * n + co + 2 * co
        flops += 6 * co * c * t * n + 3 * n * n + 6 * co * t * n * n + 3 * co * t * n
        flops += 2 * co * t * n
        if spec.use_temporal:
            t_out = (t + 2 * pad - k) // spec.stride + 1
            params += co * co * k + co + 2 * co
            flops += 2 * co * co * k * t_out * n + co * t_out * n + co * t_out * n
            if spec.use_residual:
                if co != c or spec.stride != 1:
                    params += co * c
                    flops += 2 * co * c * t_out * n
                flops += co * t_out * n
            flops += co * t_out * n
            t = t_out
        c = co
    params += c * cfg.num_classes + cfg.num_classes
    flops += c * t * n + 2 * c * cfg.num_classes + cfg.num_classes
    return params, flops


def test_single_conv_params():
    assert count_params(Conv2d(3, 64, 1)) == 256


def test_single_conv_flops_formula():
    # first spatial layer of the canonical model: three 1x1 kernels 3 -> 64 on 300x25
    net = build_tagcn(tagcn_config(input_channels=3, tam_after=0, t_prime=0))
    row = report(net).rows[0]
    per_kernel = 2 * 64 * 3 * 300 * 25
    assert per_kernel == 2_880_000
    rest = 3 * 25 * 25 + 3 * 2 * 64 * 300 * 25 * 25 + 2 * 64 * 300 * 25 + 64 * 300 * 25
    assert row.flops == 3 * per_kernel + rest


@pytest.mark.parametrize("cfg", [tagcn_config(), stgcn_config(), toy_config(),
                                 tagcn_config(t_prime=37, mask_mode="multiply"),
                                 toy_config(bias=True, t_prime=16)])
def test_report_matches_config_oracle(cfg):
    net = build_stgcn_baseline(cfg) if cfg.tam_after == 0 else build_tagcn(cfg)
    rep = report(net)
    assert (rep.params, rep.flops) == config_oracle(cfg)
    assert rep.params == count_params(net) == net.num_parameters()
    assert sum(r.flops for r in rep.rows) == rep.flops


def test_theta_contributes_t_squared():
    a = build_tagcn(tagcn_config(sequence_length=100, t_prime=50))
    b = build_tagcn(tagcn_config(sequence_length=200, t_prime=50))
    assert count_params(b) - count_params(a) == 200**2 - 100**2


def test_doubling_t_without_attention_doubles_layer_flops():
    cfg = stgcn_config(num_joints=5, topology="toy5", width_scale=1 / 16)
    short = report(build_stgcn_baseline(stgcn_config(**{**cfg.to_dict(), "sequence_length": 32})))
    long = report(build_stgcn_baseline(stgcn_config(**{**cfg.to_dict(), "sequence_length": 64})))
    for a, b in zip(short.rows, long.rows):
        if a.name.endswith("spatial") or a.name.endswith("temporal"):
            n2 = 3 * 5 * 5 if a.name.endswith("spatial") else 0
            assert b.flops - n2 == 2 * (a.flops - n2)


def test_multistream_exact_multiples():
    single = report(build_tagcn())
    for k in (2, 4):
        multi = report(build_multistream(["joint", "bone", "joint_motion", "bone_motion"][:k]))
        assert multi.flops == k * single.flops and multi.params == k * single.params


def test_post_attention_cost_is_affine():
    post = {tp: report(build_tagcn(tagcn_config(t_prime=tp))).stage_flops("post")
            for tp in (100, 200, 300)}
    assert post[300] - post[100] == 2 * (post[200] - post[100])
    flops = [count_flops(build_tagcn(tagcn_config(t_prime=tp)))
             for tp in (10, 30, 50, 100, 150, 200, 250, 300)]
    assert all(b > a for a, b in zip(flops, flops[1:]))


def test_compare_and_table():
    a, b = report(build_tagcn(), name="a"), report(build_tagcn(toy_config()), name="b")
    ratios = compare({"a": a, "b": b}, "a")
    assert ratios["a"] == (1.0, 1.0)
    np.testing.assert_allclose(ratios["b"], (b.flops / a.flops, b.params / a.params))
    with pytest.raises(ValueError):
        compare({"a": a}, "a")
    with pytest.raises(KeyError):
        compare({"a": a, "b": b}, "c")
    table = ratio_table(ratios, "a")
    assert all(name in table for name in REPORTED_RATIOS) and "[reported]" in table


def test_serializations():
    rep = report(build_tagcn(toy_config()), name="toy")
    d = json.loads(rep.to_json())
    assert d["totals"] == {"params": rep.params, "flops": rep.flops}
    assert "MAC=2" in d["metadata"]["convention"]
    assert "toy" in rep.to_text() and "total" in rep.to_text()
    with pytest.raises(TypeError):
        report(object())
