"""``pose-forge`` command line: labels -> dataset -> train -> eval -> report.

Every subcommand writes into ``--out`` (a directory) and leaves a
``config_echo.json`` holding the effective parameters; passing that file
back as ``--spec`` reproduces the run.  Exit codes: 0 success, 1 user
error (bad input, missing file, invalid config), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .classifier import ModelConfig, ModelFormatError, TrainConfig, Model, config_dict, load_model, predict_features, save_model, train
from .dataset import DatasetSpec, ManifestError, build_dataset, load_split, read_manifest
from .evaluation import compare_table, read_samples_csv, report, report_from_samples
from .posespace import DiscretizationSpec, generate_labels, labels_checksum, read_labels, write_labels
from .renderer import CameraIntrinsics, LightingSpec, MeshFormatError, load_mesh

log = logging.getLogger("poseforge")

CONFIG_ECHO = "config_echo.json"
LABELS_FILE = "labels.txt"
MODEL_FILE = "model.pfnet"
HISTORY_FILE = "history.csv"


class UserError(Exception):
    """Bad input from the command line or config files (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers ---------------------------------------------------------------------


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UserError(f"{path}: expected a JSON object")
    # a config echo from an earlier run carries the effective spec under "spec"
    if "command" in data and "spec" in data:
        return data["spec"]
    return data


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_echo(out: Path, command: str, spec: dict, **extra) -> None:
    echo = {"command": command, "version": __version__, "spec": spec, **extra}
    (out / CONFIG_ECHO).write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_label_args(values, default_name: str) -> dict:
    """``--labels path`` or ``--labels name=path`` (repeatable) -> {name: labels}."""
    sets = {}
    for v in values or []:
        name, sep, path = v.partition("=")
        if not sep:
            name, path = default_name, v
        if name in sets:
            raise UserError(f"label set {name!r} given twice")
        sets[name] = read_labels(path)
    return sets


# -- subcommands -------------------------------------------------------------------


def cmd_labels(args) -> int:
    raw = _load_json(args.spec)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = DiscretizationSpec.from_dict(raw)
    labels = generate_labels(spec)
    out = _out_dir(args.out)
    digest = write_labels(labels, out / LABELS_FILE)
    _write_echo(out, "labels", spec.to_dict(), label_count=len(labels), checksum=digest)
    print(f"{len(labels)} labels -> {out / LABELS_FILE} (sha256 {digest})")
    return 0


def cmd_dataset(args) -> int:
    if args.action == "verify":
        if not args.manifest:
            raise UserError("dataset verify needs --manifest")
        man = read_manifest(args.manifest, verify=True)
        print(f"{len(man.entries)} images verified")
        return 0
    if not args.spec:
        raise UserError("dataset build needs --spec")
    raw = _load_json(args.spec)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = DatasetSpec.from_dict(raw)
    labels = _parse_label_args(args.labels, spec.label_set) or None
    model = load_mesh(raw["model"]) if raw.get("model") else None
    intr = CameraIntrinsics(**raw.get("intrinsics", {}))
    light = LightingSpec(**raw.get("lighting", {}))
    out = _out_dir(args.out)
    man = build_dataset(spec, labels, model, intr, light, out_dir=out, threads=args.threads)
    if args.verify:
        read_manifest(out / "manifest.jsonl", verify=True)
    effective = dict(spec.to_dict(), intrinsics={"fov_deg": intr.fov_deg, "width": intr.width, "height": intr.height}, lighting=light.to_dict())
    if raw.get("model"):
        effective["model"] = raw["model"]
    _write_echo(out, "dataset", effective, labels=list(args.labels or []), label_sets=man.label_sets)
    splits = {s: len(man.select(s)) for s in ("train", "validation", "test")}
    print(f"{len(man.entries)} images -> {out} (train {splits['train']}, validation {splits['validation']}, test {splits['test']})")
    return 0


def cmd_train(args) -> int:
    raw = _load_json(args.spec) if args.spec else {}
    man = read_manifest(args.manifest, verify=args.verify)
    label_set = raw.get("label_set") or man.primary_label_set
    if label_set not in man.label_sets:
        raise UserError(f"label set {label_set!r} not in manifest")
    mraw = dict(raw.get("model", {}))
    traw = dict(raw.get("train", {}))
    if args.seed is not None:
        mraw["seed"] = args.seed
        traw["seed"] = args.seed
    if args.hflip:
        traw["hflip_augment"] = True
    mcfg = ModelConfig(num_classes=int(man.label_sets[label_set]["count"]), **mraw)
    tcfg = TrainConfig(**traw)
    X, y, X_flip = load_split(man, "train", mcfg.input_side, with_flip=tcfg.hflip_augment, label_set=label_set)
    if len(X) == 0:
        raise UserError("manifest has no training entries")
    X_val, y_val, _ = load_split(man, "validation", mcfg.input_side, label_set=label_set)
    model, history = train(Model.init(mcfg), X, y, tcfg, X_flip, X_val, y_val)
    out = _out_dir(args.out)
    save_model(model, out / MODEL_FILE)
    (out / HISTORY_FILE).write_text(history.to_csv(), encoding="utf-8")
    spec = {"label_set": label_set, "model": {k: v for k, v in config_dict(mcfg).items() if k != "num_classes"}, "train": config_dict(tcfg)}
    _write_echo(out, "train", spec, manifest=str(args.manifest), num_classes=mcfg.num_classes, samples_per_epoch=history.samples)
    last = history.val_accuracy[-1] if history.val_accuracy else float("nan")
    print(f"trained {tcfg.epochs} epochs on {len(X)} images ({history.samples[-1] if history.samples else 0} samples/epoch); validation accuracy {last:.4f}")
    return 0


def cmd_eval(args) -> int:
    if not args.model:
        raise UserError("eval needs --model")
    model = load_model(args.model)
    man = read_manifest(args.manifest, verify=args.verify)
    label_set = man.primary_label_set
    if args.labels:
        labels = read_labels(args.labels[0].partition("=")[2] or args.labels[0])
    elif man.spec.get("discretization"):
        labels = generate_labels(DiscretizationSpec.from_dict(man.spec["discretization"]))
    else:
        raise UserError("eval needs --labels (the manifest spec carries no discretization)")
    expected = man.label_sets.get(label_set, {}).get("checksum")
    if expected and labels_checksum(labels) != expected:
        raise UserError("label set does not match the one recorded in the manifest")
    if len(labels) != model.config.num_classes:
        raise UserError(f"model has {model.config.num_classes} classes but the label set has {len(labels)}")
    entries = man.select(args.split)
    X, _, _ = load_split(man, args.split, model.config.input_side, label_set=label_set)
    preds = predict_features(model, X) if len(X) else []
    rep = report(entries, preds, labels, label_set)
    out = _out_dir(args.out)
    title = f"{Path(args.model).name} on {Path(args.manifest).parent.name or args.manifest} ({args.split}, {rep.total} images)"
    text = rep.to_text(title)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(rep.to_csv(), encoding="utf-8")
    (out / "per_class.csv").write_text(rep.per_class_csv(), encoding="utf-8")
    (out / "per_sample.csv").write_text(rep.samples_csv(), encoding="utf-8")
    _write_echo(out, "eval", {"split": args.split, "label_set": label_set}, manifest=str(args.manifest), model=str(args.model), num_classes=len(labels))
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    reports = {}
    for run in args.runs:
        name, sep, path = run.partition("=")
        if not sep:
            path = run
            name = Path(run).name
        run_dir = Path(path)
        echo = _load_echo(run_dir)
        samples = read_samples_csv(run_dir / "per_sample.csv")
        reports[name] = report_from_samples(samples, int(echo["num_classes"]))
    table = compare_table(reports, high_confidence_too=not args.all_only)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def _load_echo(run_dir: Path) -> dict:
    try:
        with open(run_dir / CONFIG_ECHO, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UserError(f"{run_dir / CONFIG_ECHO}: invalid JSON ({exc})") from None


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pose-forge", description="Synthetic pose-classification pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("labels", help="generate a pose-label set")
    s.add_argument("--spec", required=True, help="discretization JSON: radii, n, m, seed")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_labels)

    s = sub.add_parser("dataset", help="render a labelled dataset, or verify one")
    s.add_argument("action", nargs="?", choices=("build", "verify"), default="build")
    s.add_argument("--spec", help="dataset JSON")
    s.add_argument("--labels", action="append", help="label file, or name=file for extra label sets")
    s.add_argument("--manifest")
    s.add_argument("--out", default=".")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--verify", action="store_true", help="re-hash every image after building")
    s.set_defaults(func=cmd_dataset)

    s = sub.add_parser("train", help="train the classifier on a manifest's train split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--spec", help='JSON with optional "model", "train" and "label_set" sections')
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--hflip", action="store_true")
    s.add_argument("--verify", action="store_true")
    s.add_argument("--threads", type=int, default=1, help="accepted for symmetry; training is single-threaded")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a model on a manifest split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--labels", action="append")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="test", choices=("train", "validation", "test"))
    s.add_argument("--verify", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="side-by-side table of eval run directories")
    s.add_argument("runs", nargs="+", help="eval output directories, optionally name=dir")
    s.add_argument("--out")
    s.add_argument("--all-only", action="store_true", help="omit the high-confidence columns")
    s.set_defaults(func=cmd_report)
    return p


_USER_ERRORS = (UserError, ValueError, KeyError, TypeError, FileNotFoundError, NotADirectoryError, PermissionError, ManifestError, ModelFormatError, MeshFormatError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("pose-forge: error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, KeyError):
            msg = f"missing key {msg!r}"
        print(f"pose-forge: error: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - reported, not expected
        log.debug("internal error", exc_info=True)
        print(f"pose-forge: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
