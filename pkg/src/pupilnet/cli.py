"""Command-line entry point: ``pupilnet synth|train|detect|eval|inspect``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import zlib
from fractions import Fraction

import numpy as np

from . import datagen, evaluation, nn, pipeline
from .imaging import GrayImage, PgmError, bicubic_resize, load_pgm, save_pgm
from .presets import PRESETS, STAGE_PRESETS, get_preset, preset_name

log = logging.getLogger("pupilnet")

RESULT_FIELDS = ["image_id", "coarse_x", "coarse_y", "coarse_conf", "fine_x", "fine_y",
                 "fine_conf"]


class CliError(Exception):
    pass


def sub_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for one named source of randomness."""
    seq = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _fmt(v: float) -> str:
    return format(float(v), ".10g")


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_image(path: str) -> GrayImage:
    try:
        return load_pgm(path)
    except (PgmError, OSError) as exc:
        raise CliError(f"{path}: {exc}") from None


def _list_images(paths: list[str]) -> list[str]:
    found = []
    for p in paths:
        if os.path.isdir(p):
            found.extend(os.path.join(p, n) for n in sorted(os.listdir(p))
                         if n.lower().endswith(".pgm"))
        else:
            found.append(p)
    return found


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


# -- synth ----------------------------------------------------------------------

def _spec_with_overrides(pairs: list[str]) -> datagen.SynthSpec:
    fields = datagen.SynthSpec.__dataclass_fields__
    values = {}
    for pair in pairs or []:
        key, _, raw = pair.partition("=")
        key = key.strip().replace("-", "_")
        if key not in fields:
            raise CliError(f"unknown synth parameter {key!r}")
        default = getattr(datagen.SynthSpec(), key)
        if isinstance(default, tuple):
            lo, _, hi = raw.partition(":")
            hi = hi or lo
            cast = type(default[0])
            values[key] = (cast(float(lo)) if cast is int else cast(lo),
                           cast(float(hi)) if cast is int else cast(hi))
        else:
            values[key] = type(default)(raw)
    try:
        return datagen.SynthSpec(**values)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid synth parameters: {exc}") from None


def cmd_synth(args) -> int:
    spec = _spec_with_overrides(args.set)
    os.makedirs(args.out_dir, exist_ok=True)
    labels = []
    for i in range(args.count):
        name = f"eye_{i:05d}.pgm"
        image, label = datagen.synth_eye(spec, sub_seed(args.seed, f"image/{i}"), name)
        save_pgm(image, os.path.join(args.out_dir, name))
        labels.append(label)
    datagen.save_labels(labels, os.path.join(args.out_dir, "labels.csv"))
    print(f"wrote {args.count} images to {args.out_dir}")
    return 0


# -- train ----------------------------------------------------------------------

def _load_corpus_labels(args) -> list[datagen.PupilLabel]:
    try:
        labels = datagen.load_labels(args.labels)
    except (datagen.LabelError, OSError) as exc:
        raise CliError(f"{args.labels}: {exc}") from None
    if not labels:
        raise CliError(f"{args.labels}: no labels")
    if args.train_fraction < 1.0:
        labels, held = datagen.split_dataset(labels, args.train_fraction,
                                             sub_seed(args.seed, "split"))
        log.info("training on %d images, holding out %d", len(labels), len(held))
    return labels


def _coarse_samples(args, labels, size):
    patches, targets = [], []
    clamped = 0
    factor = Fraction(1, args.factor)
    for lab in labels:
        image = _read_image(os.path.join(args.images, lab.image_id))
        small = bicubic_resize(image, factor)
        x, y = pipeline.map_original_to_coarse(lab.x, lab.y, args.factor)
        wins, moved = datagen.coarse_windows(small.width, small.height,
                                             datagen.PupilLabel(lab.image_id, x, y), size)
        clamped += moved
        for w in wins:
            patches.append(small.pixels[w.top:w.top + size, w.left:w.left + size])
            targets.append(w.target)
    return np.array(patches), np.array(targets, dtype=np.float64), clamped


def _fine_samples(args, labels, size):
    windows = []
    clamped = 0
    for idx, lab in enumerate(labels):
        image = _read_image(os.path.join(args.images, lab.image_id))
        wins, moved = datagen.fine_windows(image.width, image.height, lab, size,
                                           image_index=idx)
        windows.extend(wins)
        clamped += moved
    kept = datagen.subsample_fine(windows, sub_seed(args.seed, "subsample"))
    patches = np.empty((len(kept), size, size))
    targets = np.empty(len(kept))
    current, image = None, None
    for i, w in enumerate(kept):
        if w.image_index != current:
            current = w.image_index
            image = _read_image(os.path.join(args.images, labels[current].image_id))
        patches[i] = image.pixels[w.top:w.top + size, w.left:w.left + size]
        targets[i] = w.target
    return patches, targets, clamped


def cmd_train(args) -> int:
    preset = args.preset or STAGE_PRESETS[args.stage][1 if args.stage == "coarse" else 0]
    if preset not in PRESETS:
        raise CliError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if preset not in STAGE_PRESETS[args.stage]:
        raise CliError(f"preset {preset} does not fit stage {args.stage}")
    config = get_preset(preset)
    labels = _load_corpus_labels(args)
    if args.stage == "fine":
        X, t, clamped = _fine_samples(args, labels, config.input_size)
    else:
        X, t, clamped = _coarse_samples(args, labels, config.input_size)
    if clamped:
        print(f"warning: {clamped} labels were clamped inward to fit the sample grid",
              file=sys.stderr)
    log.info("%d samples (%d valid)", len(t), int(t.sum()))

    model = nn.init_model(config, sub_seed(args.seed, "init"))
    model, history = nn.train(
        model, (X, t), epochs=args.epochs, batch_size=args.batch,
        learning_rate=args.lr, seed=sub_seed(args.seed, "shuffle"),
        on_epoch=lambda e, l: log.info("epoch %d loss %.6f", e, l))

    os.makedirs(os.path.dirname(os.path.abspath(args.model_out)), exist_ok=True)
    nn.save_model(model, args.model_out)
    loss_out = args.loss_out or os.path.splitext(args.model_out)[0] + ".loss.csv"
    _write_text(loss_out, "epoch,loss\n" + "".join(
        f"{e},{l:.17g}\n" for e, l in enumerate(history, start=1)))
    print(f"trained {preset} on {len(t)} samples; final loss {history[-1]:.6f}")
    return 0


# -- detect ----------------------------------------------------------------------

def _load_model_file(path: str) -> nn.CnnModel:
    try:
        return nn.load_model(path)
    except (nn.ModelFormatError, OSError) as exc:
        raise CliError(f"{path}: {exc}") from None


def _check_model(model: nn.CnnModel, role: str, path: str) -> None:
    name = preset_name(model.config)
    if name is not None and name not in STAGE_PRESETS[role]:
        raise CliError(f"{path}: {name} model cannot serve as the {role} network")


def cmd_detect(args) -> int:
    cfg = pipeline.PipelineConfig(args.mode, args.factor, args.radius)
    paths = {"coarse": args.coarse_model, "fine": args.fine_model, "single": args.single_model}
    models = {}
    for role in cfg.required_models():
        if paths[role] is None:
            raise CliError(f"mode {args.mode} needs --{role}-model")
        models[role] = _load_model_file(paths[role])
        _check_model(models[role], role, paths[role])

    images = _list_images(args.inputs)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RESULT_FIELDS)
    for path in images:
        image = _read_image(path)
        try:
            r = pipeline.detect(cfg, models, image)
        except pipeline.DetectionError as exc:
            raise CliError(f"{path}: {exc}") from None
        writer.writerow([os.path.basename(path), _fmt(r.coarse_x), _fmt(r.coarse_y),
                         _fmt(r.coarse_confidence), _fmt(r.fine_x), _fmt(r.fine_y),
                         _fmt(r.fine_confidence)])
    if args.out:
        _write_text(args.out, out.getvalue())
    else:
        sys.stdout.write(out.getvalue())
    log.info("detected %d images", len(images))
    return 0


# -- eval ------------------------------------------------------------------------

def read_results(path: str) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"{path}: {exc}") from None
    if rows and set(RESULT_FIELDS) - set(rows[0]):
        raise CliError(f"{path}: missing columns {sorted(set(RESULT_FIELDS) - set(rows[0]))}")
    return rows


def cmd_eval(args) -> int:
    rows = read_results(args.results)
    if not rows:
        raise CliError(f"{args.results}: no results")
    try:
        labels = {lab.image_id: lab for lab in datagen.load_labels(args.labels)}
    except (datagen.LabelError, OSError) as exc:
        raise CliError(f"{args.labels}: {exc}") from None
    preds, truth = [], []
    for line, row in enumerate(rows, start=2):
        lab = labels.get(row["image_id"])
        if lab is None:
            raise CliError(f"{args.results}:{line}: no label for {row['image_id']!r}")
        preds.append((float(row["fine_x"]), float(row["fine_y"])))
        truth.append((lab.x, lab.y))
    curve = evaluation.detection_rate_curve(preds, truth, args.t_max)
    if args.out:
        _write_text(args.out, curve.to_csv())
    errors = evaluation.pixel_errors(preds, truth)
    headline = curve.rate(min(5, curve.t_max))
    print(f"rate@{min(5, curve.t_max)}px={headline:.3f}")
    log.info("mean error %.3f px over %d images", errors.mean(), len(errors))
    return 0


# -- inspect ---------------------------------------------------------------------

def cmd_inspect(args) -> int:
    model = _load_model_file(args.model)
    cfg = model.config
    size = args.image_size
    if size is None:
        size = (96, 72)
        if cfg.input_size > 72:
            side = cfg.input_size + 2 * 10
            size = (side, side)
    written = evaluation.dump_filters(model, args.out_dir, args.scale)
    _write_text(os.path.join(args.out_dir, "flops.csv"), evaluation.flops_csv(cfg, size))
    print(f"wrote {len(written)} weight images and flops.csv to {args.out_dir}")
    return 0


# -- wiring ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pupilnet", description=__doc__)
    parser.add_argument("--config", help="key=value defaults file; flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic eye corpus")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a generator parameter; ranges as LO:HI")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--stage", choices=sorted(STAGE_PRESETS), required=True)
    p.add_argument("--preset")
    p.add_argument("--images", required=True, help="directory holding the PGM files")
    p.add_argument("--labels", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--train-fraction", type=float, default=1.0)
    p.add_argument("--model-out", required=True)
    p.add_argument("--loss-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="locate pupils in images")
    p.add_argument("inputs", nargs="+", help="PGM files or directories")
    p.add_argument("--mode", choices=pipeline.MODES, default="two-stage")
    p.add_argument("--coarse-model")
    p.add_argument("--fine-model")
    p.add_argument("--single-model")
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--radius", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="detection-rate curve against labels")
    p.add_argument("--results", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--t-max", type=int, default=15)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump weight images and cost figures")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", type=int, default=20)
    p.add_argument("--image-size", type=_parse_size)
    p.set_defaults(func=cmd_inspect)
    return parser


def _read_config(path: str) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CliError(f"{path}:{lineno}: expected key=value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre_parser = argparse.ArgumentParser(add_help=False)
        pre_parser.add_argument("--config")
        pre, rest = pre_parser.parse_known_args(argv)
        subparsers = parser._subparsers._group_actions[0].choices
        command = next((a for a in rest if a in subparsers), None)
        if pre.config and command is not None:
            overrides = _read_config(pre.config)
            sub = subparsers[command]
            for action in sub._actions:
                if action.dest in overrides:
                    raw = overrides.pop(action.dest)
                    action.default = action.type(raw) if action.type else raw
                    action.required = False
            if overrides:
                raise CliError(f"{pre.config}: unknown keys {sorted(overrides)}")
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
