"""Command-line entry point: ``vquant <command> [options]``.

Exit codes: 0 success, 2 usage / configuration error, 3 data or file format
error, 4 numeric failure (divergence, non-finite values).

Commands taking ``--config FILE`` read a JSON object whose keys are the
long option names with underscores (``{"bits": 3, "ratio": 0.02}``);
explicit flags override file values.  ``VQUANT_SEED`` supplies the default
seed.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .codec import RVQUANT, VQUANT, QuantConfig, dequantize, quant_error, quantize, read_quantized, write_quantized
from .cost import checkpoint_fraction, memory_fraction
from .datasets import DATASET_FILES, TASKS, load_dataset, load_task, load_toy_model, save_dataset
from .exceptions import FormatError, NumericError, ParameterError, VQuantError
from .network import MlpNetwork
from .ptq import InferenceQuantConfig, finetune, quantize_model, sweep
from .reports import RunManifest, dumps
from .rng import Distribution, RngStream, sample
from .shard import ShardPlan, selection_divergence
from .tensor import read_tensor, write_tensor
from .training import AnnealSchedule, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

MODE_ALIASES = {"v": VQUANT, "vquant": VQUANT, "rv": RVQUANT, "rvquant": RVQUANT}


def _bits(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bits must be an integer, got {text!r}") from None
    if not 1 <= value <= 8:
        raise argparse.ArgumentTypeError(f"bits must be in 1..8, got {value}")
    return value


def _ratio(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratio must be a number, got {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"ratio must be in [0, 1), got {value}")
    return value


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def default_seed():
    raw = os.environ.get("VQUANT_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"VQUANT_SEED must be an integer, got {raw!r}") from None


def merged_config(args, defaults):
    """defaults <- JSON config file <- explicit flags.

    The config file may also be a run manifest written by an earlier run, in
    which case its recorded config is replayed.
    """
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ParameterError("config file must hold a JSON object")
        if "command" in loaded and isinstance(loaded.get("config"), dict):
            if loaded["command"] != args.command:
                raise ParameterError(f"manifest is for '{loaded['command']}', not '{args.command}'")
            loaded = loaded["config"]
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg.get("seed") is None:
        cfg["seed"] = default_seed()
    return cfg


def _codec_config(bits, ratio, mode, range_policy, outlier_precision):
    mode = MODE_ALIASES.get(str(mode).lower())
    if mode is None:
        raise ParameterError("mode must be vquant/v or rvquant/rv")
    if range_policy is None:
        range_policy = "nonnegative" if mode == RVQUANT else "symmetric"
    return QuantConfig(int(bits), float(ratio), mode, range_policy, int(outlier_precision))


def cmd_quantize(args):
    cfg = _codec_config(args.bits, args.ratio, args.mode, args.range, args.outlier_precision)
    x = read_tensor(args.input)
    q = quantize(x, cfg, relu_mask=args.mask)
    write_quantized(args.output, q)
    result = quant_error(x, q)
    result.update(
        memory_fraction=cfg.memory_fraction(with_mask=args.mask),
        n_outliers=len(q.outliers),
        step=q.step,
        qmin=q.qmin,
        qmax=q.qmax,
        config=cfg.to_dict(),
    )
    sys.stdout.write(dumps(result))
    return EXIT_OK


def cmd_dequantize(args):
    q = read_quantized(args.input)
    write_tensor(args.output, dequantize(q))
    if args.reference:
        sys.stdout.write(dumps(quant_error(read_tensor(args.reference), q)))
    return EXIT_OK


def _load_data(cfg):
    if cfg.get("data"):
        return load_dataset(cfg["data"])
    return load_task(cfg["task"], seed=cfg.get("split_seed", 0))


TRAIN_DEFAULTS = {
    "task": "digits",
    "data": None,
    "split_seed": 0,
    "hidden": [64, 64],
    "schedule": "F",
    "epochs": 30,
    "learning_rate": 0.1,
    "lr_decay": 0.1,
    "batch_size": 32,
    "seed": None,
}


def cmd_train(args):
    cfg = merged_config(args, TRAIN_DEFAULTS)
    X_train, y_train, X_test, y_test = _load_data(cfg)
    schedule = AnnealSchedule.parse(cfg["schedule"], int(cfg["epochs"]))
    tcfg = TrainConfig(float(cfg["learning_rate"]), int(cfg["batch_size"]), int(cfg["epochs"]), int(cfg["seed"]),
                       schedule, float(cfg["lr_decay"]))
    n_classes = int(max(y_train.max(), y_test.max())) + 1
    net = MlpNetwork.init([X_train.shape[1], *cfg["hidden"], n_classes], int(cfg["seed"]))
    manifest = RunManifest("train", cfg, cfg["seed"])
    out = args.out
    try:
        net, report = train(net, X_train, y_train, tcfg, (X_test, y_test))
    except NumericError as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            payload = {"version": __version__, "seed": cfg["seed"], **report.to_dict()}
            manifest.write_text(os.path.join(out, "report.json"), dumps(payload))
            manifest.write_text(os.path.join(out, "report.csv"), report.to_csv())
        manifest.finish(out)
        raise
    payload = {"version": __version__, "seed": cfg["seed"], **report.to_dict()}
    manifest.write_text(os.path.join(out, "report.json"), dumps(payload))
    manifest.write_text(os.path.join(out, "report.csv"), report.to_csv())
    net.save(os.path.join(out, "model"))
    manifest.outputs.append(os.path.join(out, "model"))
    manifest.finish(out)
    final = report.final
    sys.stdout.write(dumps({"final_acc": final["acc"], "final_eval_acc": final["eval_acc"],
                            "phases": [p.label for p in schedule.phases]}))
    return EXIT_OK


MEMTABLE_MODES = ("vquant+mask", "vquant", "rvquant")


def memtable_rows(bits_list, ratios, modes, layers):
    ckpt = checkpoint_fraction([1.0] * layers)
    rows = []
    for mode in modes:
        if mode not in MEMTABLE_MODES:
            raise ParameterError(f"mode must be one of {MEMTABLE_MODES}, got {mode!r}")
        for bits in bits_list:
            for ratio in ratios:
                frac = memory_fraction(bits, ratio, mode.split("+")[0], with_mask=mode.endswith("+mask"))
                rows.append({"bits": bits, "ratio": ratio, "mode": mode, "memory_fraction": round(frac, 12),
                             "reduction": round(1.0 / frac, 12), "checkpoint_layers": layers,
                             "checkpoint_fraction": round(ckpt, 12)})
    return rows


def cmd_memtable(args):
    if not args.bits or not args.ratios or not args.modes:
        raise ParameterError("bits, ratios and modes must be non-empty")
    rows = memtable_rows(args.bits, args.ratios, args.modes.split(","), args.layers)
    fields = list(rows[0])
    lines = [",".join(fields)] + [",".join(str(r[f]) for f in fields) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


SHARD_DEFAULTS = {
    "input": None,
    "dist": "laplace(0,1)",
    "n": 100000,
    "workers": 4,
    "bits": 3,
    "ratio": 0.01,
    "mode": "vquant",
    "range": None,
    "skewed": False,
    "seed": None,
}


def cmd_shardsim(args):
    cfg = merged_config(args, SHARD_DEFAULTS)
    codec = _codec_config(cfg["bits"], cfg["ratio"], cfg["mode"], cfg["range"], 32)
    if cfg["input"]:
        x = read_tensor(cfg["input"])
    else:
        x = sample(Distribution.parse(cfg["dist"]), int(cfg["n"]), RngStream(int(cfg["seed"])))
    if cfg["skewed"]:
        x = np.sort(x.ravel())
    result = selection_divergence(x, codec, ShardPlan(int(cfg["workers"])))
    payload = {"version": __version__, "seed": cfg["seed"], "config": {**cfg, "codec": codec.to_dict()}, "result": result}
    manifest = RunManifest("shardsim", cfg, cfg["seed"])
    manifest.write_text(os.path.join(args.out, "shardsim.json"), dumps(payload))
    manifest.write_text(os.path.join(args.out, "shardsim.csv"),
                        ",".join(result) + "\n" + ",".join(str(v) for v in result.values()) + "\n")
    manifest.finish(args.out)
    sys.stdout.write(dumps(result))
    return EXIT_OK


PTQ_DEFAULTS = {
    "model": None,
    "task": "digits",
    "data": None,
    "split_seed": 0,
    "weight_bits": 4,
    "act_bits": 4,
    "weight_ratio": 0.01,
    "act_ratio": 0.01,
    "outlier_precision": 16,
    "finetune_epochs": 1,
    "learning_rate": 0.01,
    "batch_size": 32,
    "seed": None,
}


def _model(cfg):
    if cfg.get("model"):
        return MlpNetwork.load(cfg["model"])
    return load_toy_model(int(cfg["seed"]))


def cmd_ptq(args):
    cfg = merged_config(args, PTQ_DEFAULTS)
    net = _model(cfg)
    X_train, y_train, X_test, y_test = _load_data(cfg)
    icfg = InferenceQuantConfig(int(cfg["weight_bits"]), int(cfg["act_bits"]), float(cfg["weight_ratio"]),
                                float(cfg["act_ratio"]), int(cfg["outlier_precision"]))
    float_acc = quantize_model(net, InferenceQuantConfig(32, 32, 0.0, 0.0)).accuracy(X_test, y_test)
    ptq_acc = quantize_model(net, icfg).accuracy(X_test, y_test)
    tuned, losses = finetune(net, icfg, X_train, y_train, int(cfg["finetune_epochs"]),
                             float(cfg["learning_rate"]), int(cfg["batch_size"]), int(cfg["seed"]))
    result = {
        "config": icfg.to_dict(),
        "label": icfg.label,
        "float_accuracy": float_acc,
        "ptq_accuracy": ptq_acc,
        "finetuned_accuracy": quantize_model(tuned, icfg).accuracy(X_test, y_test),
        "finetune_losses": losses,
        "memory_fraction": icfg.memory_fraction,
    }
    manifest = RunManifest("ptq", cfg, cfg["seed"])
    manifest.write_text(os.path.join(args.out, "ptq.json"), dumps({"version": __version__, "seed": cfg["seed"], **result}))
    tuned.save(os.path.join(args.out, "model"))
    manifest.outputs.append(os.path.join(args.out, "model"))
    manifest.finish(args.out)
    sys.stdout.write(dumps(result))
    return EXIT_OK


def parse_candidates(text, outlier_precision=16):
    """``"4:1,5:1,8:0"`` -> weight and activation bits K with ratio R% each."""
    out = []
    for tok in text.split(","):
        parts = tok.strip().split(":")
        if len(parts) != 2:
            raise ParameterError(f"bad candidate {tok!r}; expected BITS:RATIO_PERCENT")
        try:
            bits, ratio = int(parts[0]), float(parts[1]) / 100.0
        except ValueError:
            raise ParameterError(f"bad candidate {tok!r}") from None
        out.append(InferenceQuantConfig(bits, bits, ratio, ratio, outlier_precision))
    return out


SWEEP_DEFAULTS = {
    **PTQ_DEFAULTS,
    "candidates": "4:1,5:1,8:0",
    "max_drop": 1.0,
    "finetune_epochs": 3,
}
for _k in ("weight_bits", "act_bits", "weight_ratio", "act_ratio"):
    SWEEP_DEFAULTS.pop(_k)


def cmd_sweep(args):
    cfg = merged_config(args, SWEEP_DEFAULTS)
    net = _model(cfg)
    X_train, y_train, X_test, y_test = _load_data(cfg)
    cands = parse_candidates(cfg["candidates"], int(cfg["outlier_precision"]))
    result = sweep(net, cands, (X_train, y_train), (X_test, y_test), float(cfg["max_drop"]),
                   int(cfg["finetune_epochs"]), float(cfg["learning_rate"]), int(cfg["batch_size"]),
                   int(cfg["seed"]), n_jobs=args.jobs)
    payload = {"version": __version__, "seed": cfg["seed"], **result.to_dict()}
    manifest = RunManifest("sweep", cfg, cfg["seed"])
    manifest.write_text(os.path.join(args.out, "sweep.json"), dumps(payload))
    manifest.write_text(os.path.join(args.out, "sweep.csv"), result.to_csv())
    manifest.finish(args.out)
    sys.stdout.write(dumps(result.to_dict()))
    return EXIT_OK


def cmd_gen_data(args):
    seed = args.seed if args.seed is not None else default_seed()
    splits = load_task(args.task, seed=seed)
    save_dataset(args.out, *splits)
    manifest = RunManifest("gen-data", {"task": args.task, "seed": seed}, seed)

    manifest.outputs.extend(os.path.join(args.out, f) for f in DATASET_FILES)
    manifest.finish(args.out)
    if args.model:
        net = load_toy_model(seed)
        net.save(os.path.join(args.out, "toy_model"))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="vquant", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"vquant {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize a .vqtn tensor into a .vqtq file")
    q.add_argument("input")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--bits", type=_bits, default=3)
    q.add_argument("--ratio", type=_ratio, default=0.0)
    q.add_argument("--mode", choices=sorted(MODE_ALIASES), default="vquant")
    q.add_argument("--range", choices=["symmetric", "asymmetric", "nonnegative"])
    q.add_argument("--outlier-precision", type=int, choices=[32, 16], default=32)
    q.add_argument("--mask", action="store_true", help="store a 1-bit ReLU mask (vquant only)")
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="expand a .vqtq file back to a .vqtn tensor")
    d.add_argument("input")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--reference", help="original .vqtn; prints the reconstruction error")
    d.set_defaults(func=cmd_dequantize)

    t = sub.add_parser("train", help="train an MLP with quantized activation storage")
    t.add_argument("--config")
    t.add_argument("--task", choices=sorted(TASKS))
    t.add_argument("--data", help="directory written by gen-data")
    t.add_argument("--hidden", type=_int_list)
    t.add_argument("--schedule", help='phases, e.g. "F,3:2,2:0"')
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--lr-decay", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="vquant-runs/train")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("memtable", help="memory-fraction table as CSV")
    m.add_argument("--bits", type=_int_list, default=[2, 3, 4])
    m.add_argument("--ratios", type=_float_list, default=[0.0, 0.01, 0.02])
    m.add_argument("--modes", default="vquant+mask,rvquant")
    m.add_argument("--layers", type=int, default=100, help="equal-size layers for the checkpoint column")
    m.add_argument("-o", "--output")
    m.set_defaults(func=cmd_memtable)

    s = sub.add_parser("shardsim", help="local vs global outlier selection")
    s.add_argument("--config")
    s.add_argument("--input")
    s.add_argument("--dist")
    s.add_argument("--n", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--bits", type=_bits)
    s.add_argument("--ratio", type=_ratio)
    s.add_argument("--mode", choices=sorted(MODE_ALIASES))
    s.add_argument("--range", choices=["symmetric", "asymmetric", "nonnegative"])
    s.add_argument("--skewed", action="store_true", default=None, help="sort the input before sharding")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="vquant-runs/shardsim")
    s.set_defaults(func=cmd_shardsim)

    for name, fn, helptext in (("ptq", cmd_ptq, "quantize a trained model and fine-tune it"),
                               ("sweep", cmd_sweep, "pick the smallest configuration meeting an accuracy target")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config")
        r.add_argument("--model", help="checkpoint directory; default is the bundled toy model")
        r.add_argument("--task", choices=sorted(TASKS))
        r.add_argument("--data")
        if name == "ptq":
            r.add_argument("--weight-bits", type=int)
            r.add_argument("--act-bits", type=int)
            r.add_argument("--weight-ratio", type=_ratio)
            r.add_argument("--act-ratio", type=_ratio)
        else:
            r.add_argument("--candidates", help='e.g. "4:1,5:1,8:0" (bits:ratio%% for weights and activations)')
            r.add_argument("--max-drop", type=float, help="allowed accuracy drop in percentage points")
            r.add_argument("--jobs", type=int, default=1)
        r.add_argument("--outlier-precision", type=int, choices=[16, 32])
        r.add_argument("--finetune-epochs", type=int)
        r.add_argument("--learning-rate", type=float)
        r.add_argument("--batch-size", type=int)
        r.add_argument("--seed", type=int)
        r.add_argument("--out", default=f"vquant-runs/{name}")
        r.set_defaults(func=fn)

    g = sub.add_parser("gen-data", help="write a toy dataset as .vqtn files")
    g.add_argument("--task", choices=sorted(TASKS), default="digits")
    g.add_argument("--seed", type=int)
    g.add_argument("--model", action="store_true", help="also write the trained toy model checkpoint")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"vquant: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"vquant: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"vquant: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VQuantError, ValueError) as exc:
        print(f"vquant: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
