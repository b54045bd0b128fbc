"""Static FLOP and parameter accounting.

Counting convention (stated in every report):

* one multiply-accumulate is 2 FLOPs;
* convolution: ``2 * C_out * C_in * k_t * k_n * T_out * N``;
* joint aggregation: ``2 * C * T * N^2`` per partition, plus ``N^2`` per
  partition to combine the mask with the normalized adjacency;
* bias adds, partition sums, batch norm, ReLU, residual adds, pooling and
  the attention reweighting: 1 FLOP per element touched;
* frame selection (sorting) is free.

Layers after the attention module are costed at the selected frame count.
"""

import json
from dataclasses import dataclass, field

from .model import MultiStreamModel, Network

CONVENTION = ("MAC=2 FLOPs; conv 2*Cout*Cin*kt*kn*Tout*N; aggregation 2*C*T*N^2 per "
              "partition + N^2 mask combine; elementwise ops 1 FLOP/element; selection free")

# Ratios reported for other methods (FLOPs, params) relative to the
# single-stream attention model; displayed only, never recomputed.
REPORTED_RATIOS = {
    "AS-GCN": (6.3, 3.2),
    "2s-AGCN": (6.6, 3.0),
    "DGNN": (12.6, 3.6),
    "GCN-NAS": (19.3, 8.9),
}


@dataclass
class CostRow:
    name: str
    params: int
    flops: int
    output_shape: tuple
    stage: str = "pre"   # pre | tam | post | head


@dataclass
class CostReport:
    name: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def params(self):
        return sum(r.params for r in self.rows)

    @property
    def flops(self):
        return sum(r.flops for r in self.rows)

    def stage_flops(self, stage):
        return sum(r.flops for r in self.rows if r.stage == stage)

    def to_dict(self):
        return {
            "name": self.name,
            "metadata": self.metadata,
            "totals": {"params": self.params, "flops": self.flops},
            "rows": [{"name": r.name, "params": r.params, "flops": r.flops,
                      "output_shape": list(r.output_shape), "stage": r.stage}
                     for r in self.rows],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self):
        head = f"{'layer':<28}{'params':>12}{'FLOPs':>16}  output"
        lines = [f"# {self.name}", f"# convention: {self.metadata.get('convention', '')}", head,
                 "-" * len(head)]
        for r in self.rows:
            shape = "x".join(str(s) for s in r.output_shape)
            lines.append(f"{r.name:<28}{r.params:>12,}{r.flops:>16,}  {shape}")
        lines.append("-" * len(head))
        lines.append(f"{'total':<28}{self.params:>12,}{self.flops:>16,}")
        lines.append(f"# {self.params / 1e6:.3f}M params, {self.flops / 1e9:.3f}G FLOPs")
        return "\n".join(lines)


def _count(module):
    return sum(p.size for p in module.parameters())


def _block_rows(prefix, block, c_in, t_in, n, stage):
    rows = []
    sp = block.spatial
    c_out = sp.out_channels
    flops = 3 * 2 * c_out * c_in * t_in * n           # partition 1x1 kernels
    flops += 3 * n * n                                  # mask combine
    flops += 3 * 2 * c_out * t_in * n * n               # joint aggregation
    flops += 2 * c_out * t_in * n                       # summing the three partitions
    if sp.bias is not None:
        flops += c_out * t_in * n
    rows.append(CostRow(f"{prefix}.spatial", _count(sp), flops, (c_out, t_in, n), stage))
    rows.append(CostRow(f"{prefix}.bn_spatial+relu", _count(block.bn_spatial),
                        2 * c_out * t_in * n, (c_out, t_in, n), stage))
    t_out = t_in
    if block.use_temporal:
        conv = block.temporal.conv
        k = conv.kernel_t
        t_out = (t_in + 2 * conv.pad_t - k) // conv.stride_t + 1
        flops = 2 * c_out * c_out * k * 1 * t_out * n
        if conv.bias is not None:
            flops += c_out * t_out * n
        rows.append(CostRow(f"{prefix}.temporal", _count(conv), flops, (c_out, t_out, n), stage))
        rows.append(CostRow(f"{prefix}.bn_temporal", _count(block.bn_temporal),
                            c_out * t_out * n, (c_out, t_out, n), stage))
        kind = block.residual_kind
        if kind == "projection":
            res = block.residual
            rows.append(CostRow(f"{prefix}.residual", _count(res),
                                2 * c_out * c_in * 1 * 1 * t_out * n, (c_out, t_out, n), stage))
        add = c_out * t_out * n if kind != "none" else 0
        rows.append(CostRow(f"{prefix}.add+relu", 0, add + c_out * t_out * n,
                            (c_out, t_out, n), stage))
    return rows, c_out, t_out


def network_report(network, input_shape=None, name=None):
    """Per-layer cost rows for one sample of shape ``(C, T, N)``."""
    cfg = network.config
    c, t, n = input_shape if input_shape is not None else (
        cfg.input_channels, cfg.sequence_length, cfg.num_joints)
    report = CostReport(name or "network", metadata={
        "convention": CONVENTION, "input_shape": [c, t, n], "T": t, "N": n,
        "T_prime": network.tam.t_prime if network.tam is not None else None,
    })
    stage = "pre"
    for i, block in enumerate(network.blocks):
        if network.tam is not None and i == cfg.tam_after:
            tam = network.tam
            flops = c * t * n + 2 * t * t + t + 2 * c * t * n
            report.rows.append(CostRow("tam", _count(tam), flops, (c, tam.t_prime, n), "tam"))
            t = tam.t_prime
            stage = "post"
        rows, c, t = _block_rows(f"blocks.{i}", block, c, t, n, stage)
        report.rows.extend(rows)
    k = network.fc.weight.shape[1]
    report.rows.append(CostRow("pool", 0, c * t * n, (c,), "head"))
    fc_flops = 2 * c * k + (k if network.fc.bias is not None else 0)
    report.rows.append(CostRow("fc", _count(network.fc), fc_flops, (k,), "head"))
    return report


def multistream_report(model, input_shape=None, name=None):
    report = CostReport(name or f"{len(model.networks)}s", metadata={"convention": CONVENTION})
    for stream, net in model.networks.items():
        sub = network_report(net, input_shape)
        report.metadata.setdefault("streams", []).append(stream)
        report.metadata.update({k: v for k, v in sub.metadata.items() if k != "convention"})
        for r in sub.rows:
            report.rows.append(CostRow(f"{stream}/{r.name}", r.params, r.flops,
                                       r.output_shape, r.stage))
    return report


def report(model, input_shape=None, name=None):
    if isinstance(model, MultiStreamModel):
        return multistream_report(model, input_shape, name)
    if isinstance(model, Network):
        return network_report(model, input_shape, name)
    raise TypeError(f"cannot analyze {type(model).__name__}")


def count_params(model):
    if isinstance(model, MultiStreamModel):
        return sum(count_params(n) for n in model.networks.values())
    return sum(p.size for p in model.parameters())


def count_flops(model, input_shape=None):
    return report(model, input_shape).flops


def compare(reports, baseline_name):
    """``{name: (flops_ratio, params_ratio)}`` relative to ``baseline_name``."""
    reports = dict(reports)
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    if baseline_name not in reports:
        raise KeyError(f"baseline '{baseline_name}' not among {sorted(reports)}")
    base = reports[baseline_name]
    return {name: (r.flops / base.flops, r.params / base.params) for name, r in reports.items()}


def ratio_table(ratios, baseline_name, include_reported=True):
    lines = [f"{'method':<20}{'FLOPs':>10}{'Params':>10}  (relative to {baseline_name})"]
    for name, (f, p) in ratios.items():
        lines.append(f"{name:<20}{'x%.2f' % f:>10}{'x%.2f' % p:>10}")
    if include_reported:
        lines.append("# published figures, shown as reported and not recomputed:")
        for name, (f, p) in REPORTED_RATIOS.items():
            lines.append(f"{name:<20}{'x%.1f' % f:>10}{'x%.1f' % p:>10}  [reported]")
    return "\n".join(lines)
