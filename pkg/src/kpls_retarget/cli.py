"""Command-line front end: ``kpls-retarget {train,retarget,eval-cyclic,synth,inspect}``.

Settings come from an optional JSON config file (``--config``) and are
overridden by command flags.  Logging goes to stderr at the level named by
the ``KPLS_RETARGET_LOG`` environment variable (default WARNING).

Exit codes: 0 success, 2 usage or configuration error, 3 missing or
unreadable file, 4 malformed input file, 5 dimension mismatch, 6 numerical
failure (singular or degenerate data).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence

from . import io
from .errors import DimensionMismatch, InvalidConfig, ParseError, RetargetError
from .evaluation import METHODS, compare_methods, select_components_loo
from .kernel import KERNEL_KINDS, KernelSpec
from .retarget import CorrespondenceSet, default_components, retarget_sequence, train_retargeter
from .synthetic import WorldConfig, gen_synthetic_world

logger = logging.getLogger("kpls_retarget")

LOG_ENV = "KPLS_RETARGET_LOG"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_DIMENSION = 5
EXIT_NUMERIC = 6


@dataclass
class ProjectConfig:
    """Every setting a command may read; paths are resolved against the config file."""

    kernel: Dict[str, Any] = field(default_factory=lambda: KernelSpec().to_dict())
    components: Any = None
    p_max: int = 10
    rigid_alignment: Optional[bool] = None
    source: Optional[str] = None
    target: Optional[str] = None
    model: Optional[str] = None
    input: Optional[str] = None
    output: Optional[str] = None
    rig_a: Optional[str] = None
    sequence: Optional[str] = None
    report: Optional[str] = None
    table: Optional[str] = None
    out_dir: Optional[str] = None
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    world: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    PATH_KEYS = ("source", "target", "model", "input", "output", "rig_a", "sequence",
                 "report", "table", "out_dir")

    def validate(self) -> "ProjectConfig":
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise InvalidConfig(f"seed must be an integer, got {self.seed!r}")
        if self.components is not None and self.components != "auto":
            if isinstance(self.components, bool) or not isinstance(self.components, int) \
                    or self.components < 1:
                raise InvalidConfig(f"components must be a positive integer or 'auto', "
                                    f"got {self.components!r}")
        if isinstance(self.p_max, bool) or not isinstance(self.p_max, int) or self.p_max < 1:
            raise InvalidConfig(f"p_max must be a positive integer, got {self.p_max!r}")
        if self.rigid_alignment is not None and not isinstance(self.rigid_alignment, bool):
            raise InvalidConfig("rigid_alignment must be true or false")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise InvalidConfig(f"methods must be a non-empty subset of {list(METHODS)}")
        self.kernel_spec()
        self.world_config()
        return self

    def kernel_spec(self) -> KernelSpec:
        if not isinstance(self.kernel, dict):
            raise InvalidConfig("kernel must be an object")
        unknown = set(self.kernel) - {"kind", "sigma", "degree", "offset"}
        if unknown:
            raise InvalidConfig(f"unknown kernel settings: {sorted(unknown)}")
        try:
            return KernelSpec.from_dict(self.kernel)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"kernel: {exc}") from None

    def world_config(self) -> WorldConfig:
        if not isinstance(self.world, dict):
            raise InvalidConfig("world must be an object")
        return WorldConfig.from_dict(self.world)

    @classmethod
    def load(cls, path: str) -> "ProjectConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from None
        if not isinstance(data, dict):
            raise ParseError("config must be a JSON object", path)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"{path}: unknown config keys {sorted(unknown)}")
        base = os.path.dirname(os.path.abspath(path))
        for key in cls.PATH_KEYS:
            if isinstance(data.get(key), str):
                data[key] = os.path.join(base, data[key])
        return cls(**data)


def _require(cfg: ProjectConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise InvalidConfig(f"missing required setting(s): {flags}")


def _rigid(cfg: ProjectConfig, default: bool) -> bool:
    return default if cfg.rigid_alignment is None else cfg.rigid_alignment


def _choose_components(cfg: ProjectConfig, corr: CorrespondenceSet, spec: KernelSpec,
                       rigid: bool) -> int:
    if cfg.components == "auto":
        p = select_components_loo(corr, spec, min(cfg.p_max, len(corr) - 2), rigid)
        logger.info("leave-one-out selected p = %d", p)
        return p
    if cfg.components is None:
        return default_components(len(corr))
    if cfg.components > len(corr):
        raise InvalidConfig(f"components = {cfg.components} exceeds the {len(corr)} training pairs")
    return cfg.components


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


# commands

def cmd_train(cfg: ProjectConfig) -> int:
    _require(cfg, "source", "target", "model")
    corr = io.read_correspondence(cfg.source, cfg.target)
    spec = cfg.kernel_spec()
    rigid = _rigid(cfg, True)
    p = _choose_components(cfg, corr, spec, rigid)
    model = train_retargeter(corr, spec, p, rigid)
    _ensure_parent(cfg.model)
    io.save_model(model, cfg.model, metadata={
        "n_pairs": len(corr),
        "neutral_index": corr.neutral_index,
        "requested_components": cfg.components if cfg.components is not None else p,
        "rigid_alignment": rigid,
    })
    reg = model.regressor
    print(f"pairs N = {len(corr)}")
    print(f"source points L_s = {model.n_source_points}")
    print(f"target points L_t = {model.n_target_points}")
    print(f"components p = {reg.n_components}" + (f" (requested {p})" if reg.n_components != p else ""))
    print(f"dims {reg.input_dim} -> {reg.output_dim}")
    return EXIT_OK


def cmd_retarget(cfg: ProjectConfig) -> int:
    _require(cfg, "model", "input", "output")
    model = io.load_model(cfg.model)
    frames, _, n_points = io.read_sequence(cfg.input)
    if n_points != model.n_source_points:
        raise DimensionMismatch(f"{cfg.input} has {n_points} feature points per frame, "
                                f"the model expects {model.n_source_points}")
    out = retarget_sequence(model, frames)
    _ensure_parent(cfg.output)
    io.write_sequence(cfg.output, out, n_points=model.n_target_points)
    logger.info("retargeted %d frames", len(out))
    return EXIT_OK


def _ordering_lines(reports: Dict[str, Any]) -> List[dict]:
    kernel_labels = [k for k in reports if k.startswith("kpls_")]
    lines = []
    for ours in kernel_labels:
        for other in reports:
            if other in kernel_labels:
                continue
            a, b = reports[ours].e_d, reports[other].e_d
            lines.append({"lhs": ours, "rhs": other, "lhs_e_d": a, "rhs_e_d": b, "holds": bool(a <= b)})
    return lines


def cmd_eval_cyclic(cfg: ProjectConfig) -> int:
    """Cyclic evaluation on a synthetic world, or on files when rig_a/source/target/sequence are set."""
    _require(cfg, "report")
    spec = cfg.kernel_spec()
    p = None if cfg.components in (None, "auto") else cfg.components
    from_files = any(getattr(cfg, k) is not None for k in ("rig_a", "source", "target", "sequence"))
    if from_files:
        _require(cfg, "rig_a", "source", "target", "sequence")
        rig_a = io.load_rig(cfg.rig_a)
        corr = io.read_correspondence(cfg.source, cfg.target)
        heldout, _, n_points = io.read_sequence(cfg.sequence)
        if corr.n_source_points != rig_a.n_feature_points or n_points != rig_a.n_feature_points:
            raise DimensionMismatch("rig_a feature points, source file and sequence file disagree")
        rigid = _rigid(cfg, True)
        world_info = {"rig_a": cfg.rig_a, "source": cfg.source, "target": cfg.target,
                      "sequence": cfg.sequence}
    else:
        world = gen_synthetic_world(cfg.world_config(), cfg.seed)
        rig_a, corr, heldout = world.rig_a, world.corr, world.heldout
        rigid = _rigid(cfg, False)
        world_info = {"config": world.config.to_dict(), "seed": world.seed,
                      "ground_truth_map": world.ground_truth_map}
    if cfg.components == "auto":
        p = select_components_loo(corr, spec, min(cfg.p_max, len(corr) - 2), rigid)
    reports = compare_methods(corr, heldout, rig_a, cfg.methods, spec, p, rigid)
    ordering = _ordering_lines(reports)
    report = {
        "world": world_info,
        "kernel": spec.to_dict(),
        "components": p if p is not None else default_components(len(corr)),
        "rigid_alignment": rigid,
        "bounding_box_diagonal": rig_a.bounding_box_diagonal(),
        "methods": {label: r.to_dict() for label, r in reports.items()},
        "ordering": ordering,
    }
    _ensure_parent(cfg.report)
    io.write_json(report, cfg.report)
    if cfg.table is not None:
        _ensure_parent(cfg.table)
        with open(cfg.table, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "method", "error"])
            for label, r in reports.items():
                for frame, f in zip(heldout, r.per_frame_errors):
                    writer.writerow([frame.time_index, label, io.format_float(f)])
    for label, r in reports.items():
        print(f"{label}: e_d = {r.e_d:.6g}")
    for line in ordering:
        verdict = "holds" if line["holds"] else "violated"
        print(f"{line['lhs']} ≤ {line['rhs']}: {verdict} "
              f"({line['lhs_e_d']:.6g} vs {line['rhs_e_d']:.6g})")
    return EXIT_OK


def cmd_synth(cfg: ProjectConfig) -> int:
    _require(cfg, "out_dir")
    world = gen_synthetic_world(cfg.world_config(), cfg.seed)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    io.save_rig(world.rig_a, os.path.join(out, "rig_a.json"))
    io.save_rig(world.rig_b, os.path.join(out, "rig_b.json"))
    io.write_correspondence(world.corr, os.path.join(out, "source.csv"), os.path.join(out, "target.csv"))
    io.write_sequence(os.path.join(out, "heldout.csv"), world.heldout,
                      n_points=world.rig_a.n_feature_points)
    io.write_sequence(os.path.join(out, "heldout_target.csv"), world.heldout_target,
                      n_points=world.rig_b.n_feature_points)
    io.write_json({"config": world.config.to_dict(), "seed": world.seed,
                   "ground_truth_map": world.ground_truth_map}, os.path.join(out, "world.json"))
    print(f"wrote world (seed {world.seed}) to {out}")
    return EXIT_OK


def cmd_inspect(cfg: ProjectConfig) -> int:
    _require(cfg, "model")
    meta = io.read_model_metadata(cfg.model)
    print(json.dumps(meta, sort_keys=True, indent=2))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "retarget": cmd_retarget,
    "eval-cyclic": cmd_eval_cyclic,
    "synth": cmd_synth,
    "inspect": cmd_inspect,
}


# argument parsing

def _components_arg(text: str):
    if text == "auto":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'auto', got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("component count must be positive")
    return value


def _add_kernel_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel", dest="kernel_kind", choices=KERNEL_KINDS, help="kernel family (default rbf)")
    g.add_argument("--sigma", type=float, help="rbf width; omitted means the median pairwise distance")
    g.add_argument("--degree", type=int, help="polynomial degree")
    g.add_argument("--offset", type=float, help="polynomial offset")
    g.add_argument("--components", "-p", type=_components_arg,
                   help="number of latent components or 'auto' for leave-one-out selection")
    g.add_argument("--p-max", type=int, help="upper bound searched by 'auto' (default 10)")
    g.add_argument("--rigid-alignment", action=argparse.BooleanOptionalAction, default=None,
                   help="remove per-frame head rotation from source frames")


def _add_world_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic world")
    g.add_argument("--seed", type=int)
    g.add_argument("--world", metavar="KEY=VALUE", action="append", default=[],
                   help="world setting, e.g. nonlinearity=0.5 or identity=true (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpls-retarget",
        description="Kernel PLS retargeting of facial feature-point animation.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a retargeter on correspondence files")
    p.add_argument("--source", help="source correspondence CSV")
    p.add_argument("--target", help="target correspondence CSV")
    p.add_argument("--model", "-o", help="model file to write")
    _add_kernel_flags(p)

    p = sub.add_parser("retarget", help="retarget a feature-point sequence")
    p.add_argument("--model", "-m", help="trained model file")
    p.add_argument("--input", "-i", help="source sequence CSV")
    p.add_argument("--output", "-o", help="target sequence CSV to write")

    p = sub.add_parser("eval-cyclic", help="cyclic A -> B -> A evaluation")
    p.add_argument("--report", "-o", help="JSON report to write")
    p.add_argument("--table", help="per-frame CSV table (frame, method, error)")
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.add_argument("--rig-a", help="rig of face A (file mode)")
    p.add_argument("--source", help="A-side correspondence CSV (file mode)")
    p.add_argument("--target", help="B-side correspondence CSV (file mode)")
    p.add_argument("--sequence", help="held-out A sequence CSV (file mode)")
    _add_kernel_flags(p)
    _add_world_flags(p)

    p = sub.add_parser("synth", help="write a synthetic world to a directory")
    p.add_argument("--out-dir", "-o")
    _add_world_flags(p)

    p = sub.add_parser("inspect", help="print model metadata")
    p.add_argument("model_path", nargs="?", help="model file")
    p.add_argument("--model", "-m", help="model file")
    return parser


def _parse_world_value(text: str):
    lowered = text.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def config_from_args(args: argparse.Namespace) -> ProjectConfig:
    cfg = ProjectConfig.load(args.config) if args.config else ProjectConfig()
    overrides = {}
    for key in ("source", "target", "model", "input", "output", "report", "table", "out_dir",
                "rig_a", "sequence", "components", "p_max", "rigid_alignment", "seed", "methods"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "model_path", None):
        overrides["model"] = args.model_path
    kernel = dict(cfg.kernel)
    for flag, key in (("kernel_kind", "kind"), ("sigma", "sigma"), ("degree", "degree"), ("offset", "offset")):
        value = getattr(args, flag, None)
        if value is not None:
            kernel[key] = value
    overrides["kernel"] = kernel
    world = dict(cfg.world)
    for item in getattr(args, "world", []) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidConfig(f"--world expects KEY=VALUE, got {item!r}")
        world[key.strip()] = _parse_world_value(value)
    overrides["world"] = world
    return replace(cfg, **overrides).validate()


def _configure_logging() -> None:
    level_name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DimensionMismatch as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        detail = exc.strerror or str(exc)
        print(f"error: {detail}: {name}" if name else f"error: {detail}", file=sys.stderr)
        return EXIT_IO
    except (RetargetError, ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
