"""Command-line entry point.

Commands: generate-data, train, annotate, compare-baseline, gradcheck.
Configuration resolves in three layers — built-in defaults, then a flat
key=value config file (``--config``), then command-line flags — and the
fully resolved result is echoed to stdout and written to
``config.resolved.txt`` in the output directory, so any run can be
reproduced with ``--config <that file>``.

Exit codes: 0 success; 1 failed check (gradcheck); 2 usage or validation
problems; 3 training divergence.  ``LFA_DETERMINISTIC=1`` forces
deterministic mode, which requires an explicit ``--out`` (the default
output directory is timestamped and therefore not reproducible).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import trainer as trainer_mod
from .annotator import (branch_mses, branch_outputs, confidence_map, iou,
                        render_panels, save_confidence_raster,
                        save_confidence_raw, sparse_difference_map,
                        threshold_mask)
from .attributes import TRACE_AXES, compare_panels, compute_attributes
from .data import load_dataset, stack_pixels, write_dataset
from .errors import (CheckpointError, ConfigError, GenerationError, LfaError,
                     ManifestError, ParameterError, ShapeError,
                     TrainingDiverged)
from .models import ArchitectureConfig
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, gradcheck, load_checkpoint, train

_SECTIONS = ("data", "arch", "train")
_EXTRA_PREFIXES = ("io", "annotate", "baseline", "gradcheck")

# optional-float fields that accept the literal value `none`
_NONE_OK = {"lr_proj", "grad_clip"}


@dataclass
class RunConfig:
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str | None = None
    deterministic: bool = False
    extras: dict[str, str] = field(default_factory=dict)


def _coerce(name: str, current, raw: str):
    raw = raw.strip()
    if raw.lower() == "none" and (current is None or name in _NONE_OK):
        return None
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean '{name}={raw}'")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p for p in raw.split(",") if p != ""]
        if current and isinstance(current[0], float):
            return tuple(float(p) for p in parts)
        if current and isinstance(current[0], int):
            return tuple(int(p) for p in parts)
        return tuple(parts)
    if current is None and name in _NONE_OK:
        return float(raw)
    return raw


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def apply_kv(rc: RunConfig, key: str, value: str):
    if key == "out":
        rc.out = value
        return
    if key == "deterministic":
        rc.deterministic = bool(_coerce("deterministic", False, value))
        return
    if key == "command":          # echoed for the record; not a setting
        return
    if "." in key:
        section, name = key.split(".", 1)
        if section in _SECTIONS:
            target = getattr(rc, section)
            if not hasattr(target, name):
                raise ConfigError(f"unknown config key '{key}'")
            setattr(target, name, _coerce(name, getattr(target, name), value))
            return
        if section in _EXTRA_PREFIXES:
            rc.extras[key] = value
            return
    raise ConfigError(f"unknown config key '{key}'")


def load_config_file(path: str | Path) -> list[tuple[str, str]]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    pairs = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{p}:{lineno}: expected key=value, got {s!r}")
        k, v = s.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def resolved_text(rc: RunConfig, command: str) -> str:
    lines = ["# resolved configuration; rerun with --config <this file>",
             f"command={command}",
             f"deterministic={_format_value(rc.deterministic)}",
             f"out={_format_value(rc.out)}"]
    for section in _SECTIONS:
        obj = getattr(rc, section)
        for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
            lines.append(f"{section}.{f.name}={_format_value(getattr(obj, f.name))}")
    for k in sorted(rc.extras):
        lines.append(f"{k}={rc.extras[k]}")
    return "\n".join(lines) + "\n"


def _resolve(args: argparse.Namespace, flag_map: dict[str, str]) -> RunConfig:
    """defaults <- config file <- --set pairs <- explicit flags."""
    rc = RunConfig()
    if getattr(args, "config", None):
        for k, v in load_config_file(args.config):
            apply_kv(rc, k, v)
    for kv in getattr(args, "set", None) or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        apply_kv(rc, k, v)
    for dest, key in flag_map.items():
        val = getattr(args, dest, None)
        if val is None or val is False:
            continue
        if isinstance(val, (list, tuple)):
            val = ",".join(str(x) for x in val)
        apply_kv(rc, key, str(val))
    if getattr(args, "out", None):
        rc.out = args.out
    if getattr(args, "deterministic", False):
        rc.deterministic = True
    if os.environ.get("LFA_DETERMINISTIC") == "1":
        rc.deterministic = True
    return rc


def _prepare_out(rc: RunConfig, command: str) -> Path:
    if rc.out is None:
        if rc.deterministic:
            raise ConfigError(
                "deterministic mode needs an explicit --out "
                "(the default output directory is timestamped)")
        rc.out = time.strftime(f"run-{command}-%Y%m%d-%H%M%S")
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    text = resolved_text(rc, command)
    sys.stdout.write(text)
    (out / "config.resolved.txt").write_text(text)
    return out


def _extra(rc: RunConfig, args, dest: str, key: str, default, cast=str):
    val = getattr(args, dest, None)
    if val is not None:
        rc.extras[key] = _format_value(val)
        return val
    if key in rc.extras:
        return cast(rc.extras[key])
    if default is not None:
        rc.extras[key] = _format_value(default)
    return default


# -- commands -----------------------------------------------------------------


def cmd_generate_data(args) -> int:
    rc = _resolve(args, {
        "seed": "data.seed", "n_per_class": "data.n_per_class",
        "patch_size": "data.patch_size", "area_fraction": "data.area_fraction",
        "noise_sigma": "data.noise_sigma",
    })
    rc.data.validate()
    out = _prepare_out(rc, "generate-data")
    samples = generate_synthetic(rc.data)
    manifest = write_dataset(out, samples)
    print(f"wrote {len(samples)} image/mask pairs "
          f"({len(rc.data.structure_kinds)} kinds x {rc.data.n_per_class}) "
          f"and manifest {manifest}")
    return 0


def _parse_inject(spec: str | None) -> tuple[str, int] | None:
    if spec is None:
        return None
    try:
        name, step = spec.rsplit(":", 1)
        return name, int(step)
    except ValueError as e:
        raise ConfigError(f"--debug-inject-nan expects LOSS:STEP, got {spec!r}") from e


def cmd_train(args) -> int:
    rc = _resolve(args, {
        "epochs": "train.epochs", "batch_size": "train.batch_size",
        "seed": "train.seed", "checkpoint_every": "train.checkpoint_every",
        "lr": "train.lr_egp", "lr_disc": "train.lr_disc", "lr_proj": "train.lr_proj",
    })
    manifest = _extra(rc, args, "manifest", "io.manifest", None)
    if manifest is None:
        raise ConfigError("train needs --manifest (or io.manifest in the config)")
    resume = _extra(rc, args, "resume", "io.resume", None)
    rc.train.deterministic = rc.deterministic
    out = _prepare_out(rc, "train")

    patches = load_dataset(manifest, rc.arch.patch_size)
    pixels = stack_pixels(patches)
    inject = _parse_inject(getattr(args, "debug_inject_nan", None))
    if resume is not None:
        ckpt = load_checkpoint(resume)
        _, stored = trainer_mod.checkpoint_configs(ckpt)
        cfg = replace(stored, epochs=rc.train.epochs) if args.epochs else None
        final, records = train(pixels, config=cfg, out_dir=out,
                               resume=ckpt, inject_nan=inject)
    else:
        final, records = train(pixels, arch=rc.arch, config=rc.train,
                               out_dir=out, inject_nan=inject)
    last = records[-1] if records else None
    print(f"trained to epoch {final.epoch}; "
          f"final l_rec={last.l_rec:.6f} l_proj={last.l_proj:.6f}"
          if last else f"checkpoint already at epoch {final.epoch}; nothing to do")
    print(f"metrics: {out / 'metrics.jsonl'}; checkpoint: {out / 'final.ckpt'}")
    return 0


def _annotate_inputs(rc: RunConfig, args):
    ckpt_path = _extra(rc, args, "checkpoint", "io.checkpoint", None)
    manifest = _extra(rc, args, "manifest", "io.manifest", None)
    if ckpt_path is None or manifest is None:
        raise ConfigError("this command needs --checkpoint and --manifest")
    ckpt = load_checkpoint(ckpt_path)
    models = trainer_mod.models_from_checkpoint(ckpt)
    patches = load_dataset(manifest, models.arch.patch_size, with_masks=True)
    return models, patches


def cmd_annotate(args) -> int:
    rc = _resolve(args, {})
    tau = float(_extra(rc, args, "tau", "annotate.tau", 0.5, float))
    radius = int(_extra(rc, args, "smoothing_radius", "annotate.smoothing_radius", 1, int))
    if not (0.0 <= tau <= 1.0):
        raise ParameterError(f"threshold {tau} outside [0, 1]")
    models, patches = _annotate_inputs(rc, args)
    out = _prepare_out(rc, "annotate")

    scores = []
    iou_file = None
    try:
        with open(out / "annotate.jsonl", "w", encoding="utf-8") as report:
            for i in range(0, len(patches), 32):
                chunk = patches[i: i + 32]
                y1, y2, r = branch_outputs(models, np.stack([p.pixels for p in chunk]))
                for j, p in enumerate(chunk):
                    d = sparse_difference_map(y1[j].numpy(), y2[j].numpy())
                    conf = confidence_map(d, radius, source_id=p.source_id)
                    save_confidence_raster(conf, out / f"{p.source_id}.conf.png")
                    save_confidence_raw(conf, out / f"{p.source_id}.conf.raw")
                    render_panels(p.pixels, y1[j].numpy(), y2[j].numpy(), r[j].numpy(),
                                  d, conf, out / f"{p.source_id}.panel.png")
                    rec = {"source_id": p.source_id}
                    rec.update(branch_mses(p.pixels, y1[j].numpy(), y2[j].numpy(),
                                           r[j].numpy()))
                    if p.mask is not None:
                        score = iou(threshold_mask(conf, tau), p.mask)
                        scores.append(score)
                        rec["iou"] = score
                        if iou_file is None:
                            iou_file = open(out / "iou.jsonl", "w", encoding="utf-8")
                        iou_file.write(json.dumps(
                            {"source_id": p.source_id, "iou": score}) + "\n")
                    report.write(json.dumps(rec) + "\n")
        if iou_file is not None:
            mean = float(np.mean(scores))
            iou_file.write(json.dumps({"mean_iou": mean, "n": len(scores)}) + "\n")
            print(f"mean IoU over {len(scores)} masks at tau={tau}: {mean:.4f}")
    finally:
        if iou_file is not None:
            iou_file.close()
    print(f"annotated {len(patches)} images into {out}")
    return 0


def cmd_compare_baseline(args) -> int:
    rc = _resolve(args, {})
    axis = _extra(rc, args, "trace_axis", "baseline.trace_axis", "columns")
    if axis not in TRACE_AXES:
        raise ParameterError(f"trace_axis must be one of {TRACE_AXES}, got {axis!r}")
    radius = int(_extra(rc, args, "smoothing_radius", "annotate.smoothing_radius", 1, int))
    models, patches = _annotate_inputs(rc, args)
    out = _prepare_out(rc, "compare-baseline")

    for i in range(0, len(patches), 32):
        chunk = patches[i: i + 32]
        y1, y2, _ = branch_outputs(models, np.stack([p.pixels for p in chunk]))
        for j, p in enumerate(chunk):
            d = sparse_difference_map(y1[j].numpy(), y2[j].numpy())
            conf = confidence_map(d, radius, source_id=p.source_id)
            attrs = compute_attributes(p.pixels, trace_axis=axis, source_id=p.source_id)
            compare_panels(p.pixels, conf, attrs, out / f"{p.source_id}.compare.png")
    print(f"wrote {len(patches)} comparison panels into {out}")
    return 0


def cmd_gradcheck(args) -> int:
    rc = _resolve(args, {})
    fd_step = float(_extra(rc, args, "fd_step", "gradcheck.fd_step", 1e-3, float))
    tol = float(_extra(rc, args, "tol", "gradcheck.tol", 1e-4, float))
    seed = int(_extra(rc, args, "seed", "gradcheck.seed", 0, int))
    text = resolved_text(rc, "gradcheck")
    sys.stdout.write(text)
    report = gradcheck(seed=seed, fd_step=fd_step, tol=tol)
    print(report.format())
    if rc.out is not None:
        out = Path(rc.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.txt").write_text(text)
        (out / "gradcheck.txt").write_text(report.format() + "\n")
    return 0 if report.passed() else 1


# -- parser -------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", help="output directory (default: timestamped)")
    p.add_argument("--deterministic", action="store_true", default=False,
                   help="bit-reproducible mode; requires --out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set arch.latent_dim=256")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfa",
        description="Latent-factorization annotation of seismic image patches.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic patch dataset")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-per-class", type=int, dest="n_per_class")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--area-fraction", type=float, nargs=2, dest="area_fraction",
                   metavar=("LO", "HI"))
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="run the staged training schedule")
    _add_common(p)
    p.add_argument("--manifest", help="dataset manifest (file or directory)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--lr", type=float, help="encoder/decoder/projection rate")
    p.add_argument("--lr-disc", type=float, dest="lr_disc")
    p.add_argument("--lr-proj", type=float, dest="lr_proj")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--debug-inject-nan", dest="debug_inject_nan",
                   help=argparse.SUPPRESS, metavar="LOSS:STEP")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("annotate", help="confidence maps and panels from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--tau", type=float, help="mask threshold in [0, 1]")
    p.add_argument("--smoothing-radius", type=int, dest="smoothing_radius")
    p.set_defaults(fn=cmd_annotate)

    p = sub.add_parser("compare-baseline",
                       help="side-by-side with instantaneous attributes")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--trace-axis", choices=TRACE_AXES, dest="trace_axis")
    p.add_argument("--smoothing-radius", type=int, dest="smoothing_radius")
    p.set_defaults(fn=cmd_compare_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of all five losses")
    _add_common(p)
    p.add_argument("--fd-step", type=float, dest="fd_step")
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.fn(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (LfaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
