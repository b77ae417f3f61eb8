"""Command-line front door: split, train, eval, gradcheck, predict.

Every command reads one flat key=value config (file via --config, overridden
by trailing key=value arguments; overrides win) and echoes the effective
config before doing any work. All randomness flows from the single `seed`
key; submodules use fixed offsets (split seed+1, batch shuffling seed+2 plus
the epoch index, gradcheck seed+3, weight init seed itself).

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import datapipe as dp
from .graph import GraphError, grad_check
from .metrics import render_report, report
from .models import AllNetConfig, build_allnet
from .tensor import ShapeError
from .trainer import (
    CheckpointError,
    NumericError,
    TrainConfig,
    evaluate,
    load_checkpoint,
    restore_checkpoint,
    save_checkpoint,
    train,
)
from .graph import forward

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class UsageError(ValueError):
    """Bad flags, malformed config values, or unknown config keys."""


def _parse_int(text):
    return int(text)


def _parse_float(text):
    return float(text)


def _parse_str(text):
    return text


def _parse_ints(text):
    return tuple(int(t) for t in text.split(","))


def _parse_floats(text):
    return tuple(float(t) for t in text.split(","))


def _parse_opt_float(text):
    return None if text.strip().lower() == "none" else float(text)


def _parse_tokens(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _render(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


@dataclass(frozen=True)
class _Key:
    name: str
    default: object
    parse: object
    help: str


_SCHEMA = (
    _Key("data_root", ".", _parse_str, "directory holding manifest-relative images"),
    _Key("manifest", "manifest.csv", _parse_str, "input manifest for `split`"),
    _Key("train_manifest", "train.csv", _parse_str, "training-split manifest"),
    _Key("val_manifest", "val.csv", _parse_str, "validation-split manifest"),
    _Key("stats_file", "stats.txt", _parse_str, "standardization stats read by eval/predict"),
    _Key("out_dir", "out", _parse_str, "every output file lands beneath this directory"),
    _Key("image_h", 64, _parse_int, "resize target height"),
    _Key("image_w", 64, _parse_int, "resize target width"),
    _Key("ratios", (0.6, 0.2, 0.2), _parse_floats, "train/val/test split fractions"),
    _Key("seed", 0, _parse_int, "master seed; submodules derive by fixed offsets"),
    _Key("vgg_widths", (16, 32, 64), _parse_ints, "vgg-style backbone stage widths"),
    _Key("resnet_width", 32, _parse_int, "resnet-style backbone channel width"),
    _Key("resnet_blocks", 3, _parse_int, "residual block count (>= 2)"),
    _Key("incep_stem_width", 16, _parse_int, "inception-style stem channels"),
    _Key("incep_widths", (8, 16, 8, 8), _parse_ints, "inception branch output widths"),
    _Key("incep_reduce", 8, _parse_int, "inception 1x1 reduction width"),
    _Key("incep_blocks", 2, _parse_int, "inception block count (>= 2)"),
    _Key("tap_conv_width", 16, _parse_int, "width of the per-tap conv pairs"),
    _Key("bridge_widths", (64, 32), _parse_ints, "widths of the two 1x1 bridge convs"),
    _Key("head_conv_width", 64, _parse_int, "width of the post-merge 1x1 conv"),
    _Key("dense_width", 64, _parse_int, "width of the first fully connected layer"),
    _Key("fusion_grid", 4, _parse_int, "adaptive-pool grid feeding the fusion concats"),
    _Key("epochs", 40, _parse_int, "training epochs"),
    _Key("batch_size", 16, _parse_int, "training batch size"),
    _Key("lr", 1e-3, _parse_float, "learning rate"),
    _Key("optimizer", "adam", _parse_str, "sgd | sgd-momentum | adam"),
    _Key("clip", 5.0, _parse_opt_float, "global grad-norm cap, or `none`"),
    _Key("freeze", (), _parse_tokens, "comma list: scopes (vgg,resnet,incep,head) or id ranges"),
    _Key("threshold", 0.5, _parse_float, "decision threshold for metrics and predict"),
    _Key("gc_samples", 20, _parse_int, "parameters sampled by gradcheck"),
    _Key("gc_tolerance", 1e-3, _parse_float, "relative tolerance for gradcheck"),
)

_BY_NAME = {k.name: k for k in _SCHEMA}


def default_config() -> dict:
    return {k.name: k.default for k in _SCHEMA}


def _set_key(cfg: dict, name: str, text: str, origin: str) -> None:
    key = _BY_NAME.get(name)
    if key is None:
        raise UsageError(f"{origin}: unknown config key {name!r}")
    try:
        cfg[name] = key.parse(text)
    except ValueError as err:
        raise UsageError(f"{origin}: bad value for {name}: {text!r} ({err})") from err


def load_config_file(path, cfg: dict) -> None:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}") from err
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, text = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        _set_key(cfg, name.strip(), text.strip(), f"{path}:{lineno}")


def effective_config(config_path, overrides) -> dict:
    cfg = default_config()
    if config_path:
        load_config_file(config_path, cfg)
    for item in overrides:
        name, sep, text = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not key=value")
        _set_key(cfg, name.strip(), text.strip(), "command line")
    return cfg


def echo_config(cfg: dict) -> None:
    for key in _SCHEMA:
        print(f"{key.name}={_render(cfg[key.name])}")


def config_to_model(cfg: dict) -> AllNetConfig:
    return AllNetConfig(
        input_hw=(cfg["image_h"], cfg["image_w"]),
        vgg_widths=cfg["vgg_widths"],
        resnet_width=cfg["resnet_width"],
        resnet_blocks=cfg["resnet_blocks"],
        incep_stem_width=cfg["incep_stem_width"],
        incep_branch_widths=cfg["incep_widths"],
        incep_reduce=cfg["incep_reduce"],
        incep_blocks=cfg["incep_blocks"],
        tap_conv_width=cfg["tap_conv_width"],
        bridge_widths=cfg["bridge_widths"],
        head_conv_width=cfg["head_conv_width"],
        dense_width=cfg["dense_width"],
        fusion_grid=cfg["fusion_grid"],
        seed=cfg["seed"],
    )


def _manifest_stream(manifest, source, stats, batch_size, hw, base_seed=None):
    def stream(epoch):
        seed = None if base_seed is None else base_seed + epoch
        return dp.batch_iter(manifest, source, stats, batch_size, hw, seed)

    return stream


def cmd_split(cfg: dict) -> int:
    manifest = dp.load_manifest(cfg["manifest"])
    try:
        spec = dp.SplitSpec(cfg["ratios"], seed=cfg["seed"] + 1)
    except ValueError as err:
        raise UsageError(str(err)) from err
    train_m, val_m, test_m = dp.split(manifest, spec)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    dp.save_manifest(train_m, os.path.join(out_dir, "train.csv"))
    dp.save_manifest(val_m, os.path.join(out_dir, "val.csv"))
    dp.save_manifest(test_m, os.path.join(out_dir, "test.csv"))
    print(f"{len(train_m)} {len(val_m)} {len(test_m)}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    hw = (cfg["image_h"], cfg["image_w"])
    source = dp.FileImageSource(cfg["data_root"])
    train_m = dp.load_manifest(cfg["train_manifest"])
    val_m = dp.load_manifest(cfg["val_manifest"])

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    stats = dp.compute_stats(train_m, source, hw)
    stats_path = os.path.join(out_dir, "stats.txt")
    dp.save_stats(stats, stats_path)

    graph = build_allnet(config_to_model(cfg))
    train_cfg = TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        optimizer=cfg["optimizer"],
        seed=cfg["seed"],
        freeze=cfg["freeze"],
        clip=cfg["clip"],
    )
    history, ckpt = train(
        graph,
        _manifest_stream(train_m, source, stats, cfg["batch_size"], hw, cfg["seed"] + 2),
        _manifest_stream(val_m, source, stats, cfg["batch_size"], hw),
        train_cfg,
    )
    ckpt_path = os.path.join(out_dir, "checkpoint.alnc")
    history_path = os.path.join(out_dir, "history.csv")
    save_checkpoint(ckpt, ckpt_path)
    with open(history_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(history.to_csv())
    last = history.records[-1]
    print(
        f"epoch {last.epoch}: train_loss={last.train_loss:.6f} train_acc={last.train_acc:.6f} "
        f"val_loss={last.val_loss:.6f} val_acc={last.val_acc:.6f}"
    )
    print(f"stats={stats_path}")
    print(f"checkpoint={ckpt_path}")
    print(f"history={history_path}")
    return EXIT_OK


def _restored_graph(cfg: dict, checkpoint_path):
    graph = build_allnet(config_to_model(cfg))
    restore_checkpoint(graph, load_checkpoint(checkpoint_path))
    return graph


def cmd_eval(cfg: dict, checkpoint_path, manifest_path) -> int:
    hw = (cfg["image_h"], cfg["image_w"])
    manifest = dp.load_manifest(manifest_path)
    stats = dp.load_stats(cfg["stats_file"])
    graph = _restored_graph(cfg, checkpoint_path)
    source = dp.FileImageSource(cfg["data_root"])
    scores, labels = evaluate(
        graph, dp.batch_iter(manifest, source, stats, cfg["batch_size"], hw)
    )
    print(render_report(report(scores, labels, cfg["threshold"])), end="")
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    graph = build_allnet(config_to_model(cfg))
    rng = np.random.default_rng(cfg["seed"] + 3)
    x = rng.standard_normal((2, 3, cfg["image_h"], cfg["image_w"])).astype(np.float32)
    result = grad_check(
        graph, x, n_samples=cfg["gc_samples"], tolerance=cfg["gc_tolerance"],
        seed=cfg["seed"] + 3,
    )
    verdict = "PASS" if result.passed else "FAIL"
    print(
        f"gradcheck checked={result.n_checked} max_rel_error={result.max_rel_error:.3e} "
        f"tolerance={result.tolerance:g} result={verdict}"
    )
    if not result.passed:
        worst = result.worst()
        print(
            f"worst: node={worst.node_id} param={worst.param} index={worst.index} "
            f"analytic={worst.analytic:.6e} numeric={worst.numeric:.6e}",
            file=sys.stderr,
        )
    return EXIT_OK if result.passed else EXIT_NUMERIC


def cmd_predict(cfg: dict, checkpoint_path, image_path) -> int:
    stats = dp.load_stats(cfg["stats_file"])
    graph = _restored_graph(cfg, checkpoint_path)
    image = dp.decode_ppm(image_path)
    resized = dp.resize_bilinear(image, cfg["image_h"], cfg["image_w"])
    x = dp.standardize(resized, stats)[None]
    score = float(forward(graph, x).output(graph).reshape(-1)[0])
    label = "ALL" if score >= cfg["threshold"] else "healthy"
    print(f"score={score:.6f} label={label}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_epilog() -> str:
    lines = ["config keys (key=value in the file or as trailing overrides):"]
    for key in _SCHEMA:
        lines.append(f"  {key.name:<18} default={_render(key.default):<12} {key.help}")
    return "\n".join(lines)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="allnet",
        description="Hybrid three-backbone CNN: data splitting, training, evaluation.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", help="key=value config file (default: built-in defaults)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides; they win over the file")

    p = sub.add_parser("split", help="shuffle and split a manifest into train/val/test",
                       epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p = sub.add_parser("train", help="train the classifier and write checkpoint + history",
                       epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p = sub.add_parser("eval", help="score a manifest with a checkpoint and print metrics",
                       epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True, help="checkpoint file from `train`")
    p.add_argument("--manifest", required=True, help="manifest to score")
    common(p)
    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences",
                       epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p = sub.add_parser("predict", help="score one image and print score + label",
                       epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True, help="checkpoint file from `train`")
    p.add_argument("--image", required=True, help="PPM (P6) image to score")
    common(p)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help exits 0 through here
        return int(exc.code or 0)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = effective_config(args.config, args.overrides)
        echo_config(cfg)
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.manifest)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.image)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except GraphError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (dp.ManifestError, dp.DecodeError, CheckpointError, ShapeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
