"""Command-line entry point: ``tagcn synth|train|eval|analyze|gradcheck|tam-inspect``.

Failures print one JSON object ``{"error": <category>, "message": ...}`` on
stderr and exit with the category's code.
"""

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import autograd as ag
from . import checkpoint, complexity, diagnostics
from .graph import TopologyError, resolve_topology
from .model import ConfigError, ModelConfig, build_multistream, build_stgcn_baseline, \
    build_tagcn, stgcn_config
from .streams import SequenceFormatError, load_split, make_stream, pad_repeat, read_sequence
from .synthetic import SyntheticSpec, generate_synthetic, spec_dict
from .training import TrainConfig, TrainingError, evaluate, save_log, train

DATA_ENV = "TAGCN_DATA_DIR"
EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "shape": 5, "training": 6,
              "gradcheck": 7, "io": 8, "internal": 1}


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _fail(category, message):
    click.echo(json.dumps({"error": category, "message": message}), err=True)
    sys.exit(EXIT_CODES[category])


def default_data_dir():
    return os.environ.get(DATA_ENV, "data")


# --- configuration ---------------------------------------------------------

SECTIONS = ("model", "train", "data", "synthetic")


def parse_override(text):
    """``section.key=value`` with a YAML-typed value."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise CliError("config", f"override '{text}' must look like section.key=value")
    path, raw = text.split("=", 1)
    section, key = path.split(".", 1)
    if section not in SECTIONS:
        raise CliError("config", f"unknown config section '{section}' in '{text}'")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise CliError("config", f"cannot parse value in '{text}': {exc}") from exc
    return section, key, value


def load_run_config(path=None, overrides=()):
    """Merge a YAML file (sections model/train/data/synthetic) with overrides."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise CliError("io", f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise CliError("config", f"{path}: malformed YAML: {exc}") from exc
        if not isinstance(raw, dict) or set(raw) - set(SECTIONS):
            raise CliError("config", f"{path}: top level must map a subset of {SECTIONS}")
    merged = {s: dict(raw.get(s) or {}) for s in SECTIONS}
    for text in overrides:
        section, key, value = parse_override(text)
        merged[section][key] = value
    try:
        model = ModelConfig.from_dict(merged["model"]).validate()
        training = TrainConfig.from_dict(merged["train"]).validate()
        synth = SyntheticSpec(**merged["synthetic"]).validate()
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        raise CliError("config", str(exc)) from exc
    data = {"dir": None, "stream": "joint_bone", "frames": None}
    unknown = set(merged["data"]) - set(data)
    if unknown:
        raise CliError("config", f"unknown data fields: {sorted(unknown)}")
    data.update(merged["data"])
    return {"model": model, "train": training, "data": data, "synthetic": synth}


def dump_run_config(cfg):
    return yaml.safe_dump({"model": cfg["model"].to_dict(), "train": cfg["train"].to_dict(),
                           "data": cfg["data"], "synthetic": spec_dict(cfg["synthetic"])},
                          sort_keys=False)


def _topology(model_cfg):
    try:
        return resolve_topology(model_cfg.topology)
    except (TopologyError, KeyError, OSError) as exc:
        raise CliError("config", f"topology '{model_cfg.topology}': {exc}") from exc


def _load_data(cfg, split, data_dir):
    directory = Path(data_dir or cfg["data"]["dir"] or default_data_dir())
    model = cfg["model"]
    try:
        ds = load_split(directory, split, _topology(model), cfg["data"]["stream"],
                        cfg["data"]["frames"] or model.sequence_length)
    except FileNotFoundError as exc:
        raise CliError("data", f"{directory}: {exc}") from exc
    except (SequenceFormatError, ValueError) as exc:
        raise CliError("data", str(exc)) from exc
    if ds.data.shape[1] != model.input_channels:
        raise CliError("shape", f"stream '{cfg['data']['stream']}' yields {ds.data.shape[1]} "
                                f"channels, model expects {model.input_channels}")
    return ds


def _network_from_run(run_dir):
    run_dir = Path(run_dir)
    cfg = load_run_config(run_dir / "config.yaml")
    net = build_tagcn(cfg["model"], _topology(cfg["model"]))
    try:
        checkpoint.load_module(run_dir / "best.ckpt", net)
    except (OSError, checkpoint.CheckpointError, KeyError, ValueError) as exc:
        raise CliError("io", f"cannot load checkpoint from {run_dir}: {exc}") from exc
    return cfg, net.eval()


def _guard(fn):
    """Translate exceptions into categorized exits."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CliError as exc:
            _fail(exc.category, str(exc))
        except ag.ShapeError as exc:
            _fail("shape", str(exc))
        except TrainingError as exc:
            _fail("training", str(exc))
        except (ConfigError, TopologyError) as exc:
            _fail("config", str(exc))
        except OSError as exc:
            _fail("io", str(exc))
        except Exception as exc:  # noqa: BLE001 - last resort, still machine-readable
            _fail("internal", f"{type(exc).__name__}: {exc}")
    return wrapper


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             help="YAML file with model/train/data/synthetic sections.")
set_option = click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                          help="Override one config value (repeatable).")


@click.group()
def main():
    """Temporal attention graph networks for skeleton action recognition."""


@main.command()
@config_option
@set_option
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=0, show_default=True)
@_guard
def synth(config_path, overrides, out, seed):
    """Generate a planted-window synthetic dataset."""
    cfg = load_run_config(config_path, overrides)
    out = Path(out or default_data_dir())
    n = generate_synthetic(cfg["synthetic"], out, seed)
    click.echo(json.dumps({"directory": str(out), "files": n}))


@main.command("train")
@config_option
@set_option
@click.option("--data", "data_dir", type=click.Path(file_okay=False),
              help=f"Dataset directory (default: ${DATA_ENV} or ./data).")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Run directory.")
@click.option("--seed", type=int, default=0, show_default=True, help="Weight init seed.")
@click.option("--quiet", is_flag=True)
@_guard
def train_cmd(config_path, overrides, data_dir, out, seed, quiet):
    """Train a network and keep the best checkpoint."""
    cfg = load_run_config(config_path, overrides)
    train_set = _load_data(cfg, "train", data_dir)
    try:
        val_set = _load_data(cfg, "val", data_dir)
    except CliError as exc:
        if "no files in split" not in str(exc):
            raise
        val_set = None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_run_config(cfg))
    net = build_tagcn(cfg["model"], _topology(cfg["model"]), seed)
    progress = None if quiet else (lambda e: click.echo(json.dumps(e), err=True))
    result = train(net, train_set, cfg["train"], val_set, out / "best.ckpt", progress)
    save_log(out / "log.json", result)
    click.echo(json.dumps({"run": str(out), "best_epoch": result.best_epoch,
                           "final": result.log[-1]}))


@main.command("eval")
@click.option("--run", "run_dir", type=click.Path(file_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False))
@click.option("--split", default="val", show_default=True)
@_guard
def eval_cmd(run_dir, data_dir, split):
    """Top-1/top-5 accuracy of a trained run on one split."""
    cfg, net = _network_from_run(run_dir)
    ds = _load_data(cfg, split, data_dir)
    top1, top5 = evaluate(net, ds)
    click.echo(json.dumps({"split": split, "samples": len(ds), "top1": top1, "top5": top5}))


def reference_reports(model_cfg, topology):
    """The configured model next to the canonical comparison set."""
    reports = {"model": complexity.report(build_tagcn(model_cfg, topology), name="model")}
    canonical = build_tagcn()
    reports["ta-gcn"] = complexity.report(canonical, name="ta-gcn")
    reports["st-gcn"] = complexity.report(build_stgcn_baseline(stgcn_config()), name="st-gcn")
    for k in (2, 4):
        multi = build_multistream([f"s{i}" for i in range(k)])
        reports[f"{k}s-ta-gcn"] = complexity.report(multi, name=f"{k}s-ta-gcn")
    return reports


@main.command()
@config_option
@set_option
@click.option("--ratio-against", "baseline", default=None,
              help="Print FLOP/param ratios against this report "
                   "(model, ta-gcn, st-gcn, 2s-ta-gcn, 4s-ta-gcn).")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text",
              show_default=True)
@_guard
def analyze(config_path, overrides, baseline, fmt):
    """FLOP and parameter report for the configured model."""
    cfg = load_run_config(config_path, overrides)
    model_cfg = cfg["model"]
    topo = _topology(model_cfg)
    if baseline is None:
        rep = complexity.report(build_tagcn(model_cfg, topo), name="model")
        click.echo(rep.to_json() if fmt == "json" else rep.to_text())
        return
    reports = reference_reports(model_cfg, topo)
    try:
        ratios = complexity.compare(reports, baseline)
    except KeyError as exc:
        raise CliError("config", str(exc.args[0])) from exc
    if fmt == "json":
        click.echo(json.dumps({
            "baseline": baseline, "convention": complexity.CONVENTION,
            "totals": {n: {"params": r.params, "flops": r.flops} for n, r in reports.items()},
            "ratios": {n: {"flops": f, "params": p} for n, (f, p) in ratios.items()},
            "reported": {n: {"flops": f, "params": p, "source": "reported"}
                         for n, (f, p) in complexity.REPORTED_RATIOS.items()},
        }, indent=2))
    else:
        click.echo(complexity.ratio_table(ratios, baseline))


@main.command()
@click.option("--target", type=click.Choice(diagnostics.TARGETS), default="model",
              show_default=True)
@click.option("--seeds", type=int, default=1, show_default=True)
@click.option("--max-coords", type=int, default=None,
              help="Probe at most this many coordinates per tensor.")
@_guard
def gradcheck(target, seeds, max_coords):
    """Central-difference gradient check of one layer type or the toy model."""
    worst = {}
    for seed in range(seeds):
        for name, err in diagnostics.check(target, seed, max_coords).items():
            worst[name] = max(worst.get(name, 0.0), err)
    overall = max(worst.values())
    click.echo(json.dumps({"target": target, "seeds": seeds, "max_relative_error": overall,
                           "tolerance": diagnostics.TOLERANCE, "per_tensor": worst}, indent=2))
    if overall >= diagnostics.TOLERANCE:
        _fail("gradcheck", f"max relative error {overall:.3g} >= {diagnostics.TOLERANCE}")


@main.command("tam-inspect")
@click.option("--run", "run_dir", type=click.Path(file_okay=False), required=True)
@click.option("--input", "input_path", type=click.Path(dir_okay=False), required=True,
              help="A sequence file.")
@_guard
def tam_inspect(run_dir, input_path):
    """Per-frame attention scores and selected frames for one sequence."""
    cfg, net = _network_from_run(run_dir)
    if net.tam is None:
        raise CliError("config", "this model has no attention module")
    try:
        seq = read_sequence(input_path)
    except (SequenceFormatError, OSError) as exc:
        raise CliError("data", str(exc)) from exc
    frames = cfg["data"]["frames"] or cfg["model"].sequence_length
    x = make_stream(pad_repeat(seq.data.astype(np.float64), frames),
                    _topology(cfg["model"]), cfg["data"]["stream"])
    logits, att = net(x, return_attention=True)
    click.echo(json.dumps({
        "input": str(input_path), "label": seq.label,
        "predicted": int(np.argmax(logits.data[0])),
        "scores": att.scores.data[0].tolist(),
        "selected": att.indices[0].tolist(),
        "t_prime": net.tam.t_prime,
    }, indent=2))


if __name__ == "__main__":
    main()
