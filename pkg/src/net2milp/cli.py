"""Command-line front end.

Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 usage or input error, 2 infeasible (a
certificate), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import (AdversarialConfig, AdversarialResult, LabelMismatch, encode_for_attack,
                          build_adversarial, format_report, generate_adversarial, report,
                          target_label, verify_adversarial)
from .bnb import BnbConfig, branch_and_bound
from .bounds import BoundSet, interval_propagate, lp_tighten
from .capsules import param_count, route, squash, worked_example
from .encode_cnn import CnnEncodeConfig, encode_cnn
from .encode_common import InputMode
from .encode_dnn import DnnEncodeConfig, encode_dnn
from .imageio import format_grid, read_dataset, read_image, read_mnist, write_pgm
from .lpformat import read_lp, write_lp
from .milp import ModelError
from .network import NetworkError, classify, dump_network, read_network
from .train import (PRESETS, Dataset, TrainConfig, TrainingDiverged, accuracy, init_network, train,
                    write_loss_csv)

log = logging.getLogger("net2milp")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3
BOUND_MODES = {"interval": "interval", "lp": "lp_relaxation", "milp": "exact_milp"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects outputs and writes the manifest for one command."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.monotonic()
        self.inputs: dict = {}
        self.outputs: list = []
        self.result: dict = {}

    def note_input(self, key: str, path) -> None:
        if path is not None:
            self.inputs[key] = {"path": str(path), "sha256": _sha256(path)}

    def write(self, name: str, text: str | bytes) -> Path:
        path = self.out / name
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text)
        self.outputs.append(name)
        return path

    def finish(self, status: str) -> None:
        config = {k: v for k, v in sorted(vars(self.args).items())
                  if k not in ("func", "out", "command", "no_timing")}
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "seed": self.args.seed,
            "inputs": self.inputs,
            "config": config,
            "status": status,
            "result": self.result,
            "outputs": {name: _sha256(self.out / name) for name in sorted(self.outputs)},
            "wall_time": None if self.args.no_timing else round(time.monotonic() - self.started, 6),
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return str(obj)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _load_net(path):
    try:
        return read_network(path)
    except (OSError, NetworkError, ValueError) as exc:
        raise UsageError(f"cannot read weights {path}: {exc}") from None


def _classes(text):
    if text is None:
        return None
    return [int(c) for c in text.split(",") if c.strip()]


def _dataset(args):
    if args.idx_images or args.idx_labels:
        if not (args.idx_images and args.idx_labels):
            raise UsageError("--idx-images and --idx-labels go together")
        images, labels = read_mnist(args.idx_images, args.idx_labels, args.limit)
    elif args.data:
        images, labels = read_dataset(args.data)
    else:
        from .fixtures import load_digits

        images, labels = load_digits()
    keep = _classes(args.classes)
    if keep is not None:
        pairs = [(x, l) for x, l in zip(images, labels) if l in keep]
        images, labels = [p[0] for p in pairs], [p[1] for p in pairs]
    if not images:
        raise UsageError("the dataset selection is empty")
    count = args.class_count or max(labels) + 1
    return images, labels, count


def _input_mode(spec: str | None, net):
    """``box`` (unit box), ``box:LO:HI`` or ``fixed:PATH``."""
    spec = spec or "box"
    if spec.startswith("fixed:"):
        img = read_image(spec[6:])
        if img.shape != net.input_shape:
            raise UsageError(f"image extents {img.shape} != network input {net.input_shape}")
        return InputMode.fixed(img), spec[6:]
    if spec == "box":
        return InputMode.boxed(0.0, 1.0, net.input_shape), None
    if spec.startswith("box:"):
        try:
            lo, hi = (float(v) for v in spec[4:].split(":"))
        except ValueError:
            raise UsageError(f"bad box specification {spec!r}") from None
        return InputMode.boxed(lo, hi, net.input_shape), None
    raise UsageError(f"bad --input {spec!r}; use box, box:LO:HI or fixed:PATH")


def _bounds(net, mode: InputMode, kind: str, threads: int, budget: float) -> BoundSet:
    if kind == "interval":
        return interval_propagate(net, mode.lb, mode.ub)
    return lp_tighten(net, mode.lb, mode.ub, BOUND_MODES[kind], budget, threads)


def _encode(net, arch: str, mode: InputMode, bounds: BoundSet, args):
    if arch == "dnn":
        return encode_dnn(net, bounds, DnnEncodeConfig(args.unit_cost, args.gamma, mode))
    return encode_cnn(net, bounds, CnnEncodeConfig(include_biases=not args.drop_biases, input_mode=mode))


def _adv_config(args) -> AdversarialConfig:
    return AdversarialConfig(margin=args.margin, eps_max=args.eps_cap, target_rule=args.target_rule,
                             bounds=BOUND_MODES[args.bounds], node_limit=args.node_limit,
                             time_limit=args.time_limit)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    run = Run(args, "train")
    images, labels, count = _dataset(args)
    for key in ("data", "idx_images", "idx_labels"):
        run.note_input(key, getattr(args, key))
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    cfg = TrainConfig(args.lr, args.epochs, args.seed, args.init, args.bias_init, args.output_scale)
    data = Dataset.from_labels(images, labels, count)
    net = init_network(args.preset, images[0].shape, count, cfg)
    try:
        net, history = train(net, data, cfg)
    except TrainingDiverged as exc:
        run.result = {"diverged_at_epoch": exc.epoch}
        run.finish("diverged")
        print(f"training diverged at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_NUMERICAL
    run.write("weights.json", dump_network(net))
    loss_path = run.out / "loss.csv"
    write_loss_csv(history, loss_path)
    run.outputs.append("loss.csv")
    acc = accuracy(net, data)
    run.result = {"final_loss": history[-1], "train_accuracy": acc, "instances": len(data), "classes": count}
    run.finish("ok")
    print(f"trained {args.preset}: loss {history[-1]:.6g}, train accuracy {acc:.4f}")
    return EXIT_OK


def _encode_common(args, run):
    net = _load_net(args.weights)
    run.note_input("weights", args.weights)
    mode, img_path = _input_mode(args.input, net)
    run.note_input("image", img_path)
    bounds = _bounds(net, mode, args.bounds, args.threads, args.time_budget)
    model, varmap = _encode(net, args.arch, mode, bounds, args)
    return net, mode, bounds, model, varmap


def cmd_encode(args) -> int:
    run = Run(args, "encode")
    net, mode, bounds, model, varmap = _encode_common(args, run)
    run.write("model.lp", write_lp(model))
    run.write("varmap.json", varmap.to_json(model))
    run.write("bounds.json", bounds.to_json())
    run.result = model.stats()
    run.finish("ok")
    print(json.dumps(model.stats(), sort_keys=True))
    return EXIT_OK


def cmd_export_lp(args) -> int:
    run = Run(args, "export-lp")
    if args.image is not None:
        net = _load_net(args.weights)
        run.note_input("weights", args.weights)
        run.note_input("image", args.image)
        image = read_image(args.image)
        label = args.label if args.label is not None else classify(net, image)[0]
        cfg = _adv_config(args)
        cfg.bounds = BOUND_MODES[args.bounds]
        model, varmap = encode_for_attack(net, image, cfg, args.threads)
        model = build_adversarial(model, varmap, image, label, cfg,
                                  target_label(label, cfg.target_rule, net.class_count))
    else:
        _, _, _, model, _ = _encode_common(args, run)
    run.write("model.lp", write_lp(model))
    run.result = model.stats()
    run.finish("ok")
    return EXIT_OK


def cmd_bounds(args) -> int:
    run = Run(args, "bounds")
    net = _load_net(args.weights)
    run.note_input("weights", args.weights)
    mode, img_path = _input_mode(args.input, net)
    if args.radius is not None:
        if img_path is None:
            raise UsageError("--radius needs --input fixed:PATH")
        mode = InputMode.boxed(np.clip(mode.lb - args.radius, 0, 1), np.clip(mode.ub + args.radius, 0, 1))
    run.note_input("image", img_path)
    bounds = _bounds(net, mode, args.mode, args.threads, args.time_budget)
    run.write("bounds.json", bounds.to_json())
    run.result = {"mode": args.mode, "warnings": bounds.warnings,
                  "sum_pre_ub": float(sum(b.pre_hi.sum() for b in bounds.layers if b.pre_hi is not None))}
    run.finish("ok")
    return EXIT_OK


def _status_code(status: str) -> int:
    if status == "infeasible":
        return EXIT_INFEASIBLE
    if status == "numerical_failure":
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_solve(args) -> int:
    run = Run(args, "solve")
    try:
        model = read_lp(Path(args.model).read_text())
    except (OSError, ModelError) as exc:
        raise UsageError(f"cannot read model {args.model}: {exc}") from None
    run.note_input("model", args.model)
    res = branch_and_bound(model, BnbConfig(args.branching, args.node_limit, time_limit=args.time_limit))
    values = {} if res.assignment is None else {v.name: float(res.assignment[v.id]) for v in model.variables}
    doc = {"status": res.status, "objective": None if not math.isfinite(res.objective) else res.objective,
           "best_bound": None if not math.isfinite(res.best_bound) else res.best_bound,
           "nodes": res.nodes, "values": values}
    run.write("solution.json", json.dumps(doc, indent=1) + "\n")
    run.result = {k: doc[k] for k in ("status", "objective", "best_bound", "nodes")}
    run.finish(res.status)
    print(f"{res.status} objective={doc['objective']} nodes={res.nodes}")
    return _status_code(res.status)


def _write_adversarial(run, result: AdversarialResult):
    if result.image is None:
        return
    run.write("adversarial.txt", format_grid(result.image))
    write_pgm(result.image, run.out / "adversarial.pgm")
    run.outputs.append("adversarial.pgm")


def cmd_adversarial(args) -> int:
    run = Run(args, "adversarial")
    net = _load_net(args.weights)
    run.note_input("weights", args.weights)
    run.note_input("image", args.image)
    image = read_image(args.image)
    if image.shape != net.input_shape:
        raise UsageError(f"image extents {image.shape} != network input {net.input_shape}")
    cfg = _adv_config(args)
    try:
        target_label(args.label, cfg.target_rule, net.class_count)
        result = generate_adversarial(net, image, args.label, cfg, args.threads)
    except (LabelMismatch, ValueError) as exc:
        raise UsageError(str(exc)) from None
    verdict = verify_adversarial(net, result, image, args.label, cfg) if result.status == "optimal" else None
    _write_adversarial(run, result)
    doc = report(result, verdict)
    run.write("report.json", format_report(doc))
    run.result = doc
    run.finish(result.status)
    if result.status == "infeasible":
        print("infeasible: no adversarial exists within the caps at this margin (certificate)")
        return EXIT_INFEASIBLE
    if result.status == "numerical_failure":
        return EXIT_NUMERICAL
    if verdict is not None and not verdict.passed:
        print("adversarial failed verification: " + "; ".join(verdict.reasons), file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{result.status}: label {args.label} -> {result.achieved_label}, margin {result.achieved_margin:.6g}, "
          f"sum eps {result.eps_sum:.6g}, nodes {result.nodes}")
    return EXIT_OK


def cmd_verify(args) -> int:
    run = Run(args, "verify")
    net = _load_net(args.weights)
    for key in ("weights", "original", "adversarial"):
        run.note_input(key, getattr(args, key))
    original, adv = read_image(args.original), read_image(args.adversarial)
    cfg = _adv_config(args)
    try:
        target = target_label(args.label, cfg.target_rule, net.class_count)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = AdversarialResult("optimal", args.label, target, image=adv, eps=np.abs(adv - original))
    verdict = verify_adversarial(net, result, original, args.label, cfg)
    doc = {"verified": verdict.passed, "checks": verdict.checks, "reasons": verdict.reasons, "target": target}
    run.write("verdict.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    run.result = doc
    run.finish("verified" if verdict.passed else "rejected")
    print("verified" if verdict.passed else "rejected: " + "; ".join(verdict.reasons))
    return EXIT_OK if verdict.passed else EXIT_INFEASIBLE


def caps_text(demo: str) -> str:
    lines = []
    if demo == "params":
        for key, value in param_count().items():
            lines.append(f"{key:>24} {value:>12,}")
    elif demo == "routing":
        v, state = route(worked_example(), 3)
        for it, c in enumerate(state.history, 1):
            lines.append(f"iteration {it}:")
            for i, row in enumerate(c, 1):
                lines.append("  " + "  ".join(f"c_{i}{j}={x:.6f}" for j, x in enumerate(row, 1)))
        lines.append("lengths: " + "  ".join(f"|v_{j}|={np.linalg.norm(x):.6f}" for j, x in enumerate(v, 1)))
    elif demo == "squash":
        for s in ([1.0, 0.0], [0.0, 0.0], [3.0, 4.0], [0.1, 0.0]):
            v = squash(np.array(s))
            lines.append(f"s={s} |s|={np.linalg.norm(s):.6f} -> |v|={np.linalg.norm(v):.6f}")
    else:
        raise UsageError(f"unknown demo {demo!r}")
    return "\n".join(lines) + "\n"


def cmd_caps(args) -> int:
    run = Run(args, "caps")
    text = caps_text(args.demo)
    run.write(f"caps_{args.demo}.txt", text)
    run.finish("ok")
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="out")
    p.add_argument("--config", default=None, help="JSON file overriding option defaults")
    p.add_argument("--no-timing", action="store_true", help="leave wall time out of the manifest")


def _encode_flags(p):
    p.add_argument("--weights", required=True)
    p.add_argument("--arch", choices=("dnn", "cnn"), default="dnn")
    p.add_argument("--bounds", choices=tuple(BOUND_MODES), default="interval")
    p.add_argument("--input", default="box", help="box, box:LO:HI or fixed:PATH")
    p.add_argument("--unit-cost", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--drop-biases", action="store_true", help="cnn: encode with biases treated as zero")
    p.add_argument("--time-budget", type=float, default=math.inf, help="per-unit budget for --bounds milp")


def _adv_flags(p):
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--target-rule", default="plus_five_mod_ten")
    p.add_argument("--eps-cap", type=float, default=0.2)
    p.add_argument("--margin", type=float, default=1.2)
    p.add_argument("--bounds", choices=tuple(BOUND_MODES), default="lp")
    p.add_argument("--node-limit", type=int, default=100_000)
    p.add_argument("--time-limit", type=float, default=math.inf)


def build_parser() -> tuple:
    parser = _Parser(prog="net2milp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = subs["train"] = sub.add_parser("train", help="train a toy network")
    p.add_argument("--data", default=None, help="dataset text file (default: bundled 8x8 digits)")
    p.add_argument("--idx-images", default=None)
    p.add_argument("--idx-labels", default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--classes", default=None, help="comma-separated labels to keep")
    p.add_argument("--class-count", type=int, default=None)
    p.add_argument("--preset", default="dense-16-8")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--init", choices=("he_gaussian", "uniform_kernel"), default="he_gaussian")
    p.add_argument("--bias-init", type=float, default=0.0)
    p.add_argument("--output-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = subs["encode"] = sub.add_parser("encode", help="encode a network as a MILP")
    _encode_flags(p)
    p.set_defaults(func=cmd_encode)

    p = subs["export-lp"] = sub.add_parser("export-lp", help="write the LP file of an encoding or attack")
    _encode_flags(p)
    p.add_argument("--image", default=None, help="export the adversarial model for this image")
    p.add_argument("--label", type=int, default=None)
    p.add_argument("--target-rule", default="plus_five_mod_ten")
    p.add_argument("--eps-cap", type=float, default=0.2)
    p.add_argument("--margin", type=float, default=1.2)
    p.add_argument("--node-limit", type=int, default=100_000)
    p.add_argument("--time-limit", type=float, default=math.inf)
    p.set_defaults(func=cmd_export_lp)

    p = subs["bounds"] = sub.add_parser("bounds", help="compute unit bounds")
    p.add_argument("--weights", required=True)
    p.add_argument("--mode", choices=tuple(BOUND_MODES), default="interval")
    p.add_argument("--input", default="box")
    p.add_argument("--radius", type=float, default=None, help="box of this radius around a fixed image")
    p.add_argument("--time-budget", type=float, default=math.inf)
    p.set_defaults(func=cmd_bounds)

    p = subs["solve"] = sub.add_parser("solve", help="solve an LP-format model")
    p.add_argument("--model", required=True)
    p.add_argument("--branching", choices=("most_fractional", "first_fractional"), default="most_fractional")
    p.add_argument("--node-limit", type=int, default=100_000)
    p.add_argument("--time-limit", type=float, default=math.inf)
    p.set_defaults(func=cmd_solve)

    p = subs["adversarial"] = sub.add_parser("adversarial", help="generate and verify an adversarial")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    _adv_flags(p)
    p.set_defaults(func=cmd_adversarial)

    p = subs["verify"] = sub.add_parser("verify", help="check an adversarial image with the forward pass")
    p.add_argument("--weights", required=True)
    p.add_argument("--original", required=True)
    p.add_argument("--adversarial", required=True)
    _adv_flags(p)
    p.set_defaults(func=cmd_verify)

    p = subs["caps"] = sub.add_parser("caps", help="capsule demos")
    p.add_argument("--demo", choices=("routing", "squash", "params"), default="params")
    p.set_defaults(func=cmd_caps)

    for p in subs.values():
        _common(p)
    return parser, subs


def main(argv=None) -> int:
    level = os.environ.get("NET2MILP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            print(f"net2milp: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        sub = subs[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(overrides) - known)
        if unknown:
            print(f"net2milp: unknown config keys {unknown}", file=sys.stderr)
            return EXIT_USAGE
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"net2milp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, NetworkError) as exc:
        print(f"net2milp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
