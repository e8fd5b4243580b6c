"""Command-line entry point.

Subcommands cover the full pipeline: synth -> fuse/preprocess -> split ->
train -> evaluate -> predict.  Settings come from documented defaults, an
optional JSON config file, and flags, in increasing precedence.  Every
artifact-producing run writes a run-manifest (resolved config, seed, and
sha256 of each artifact) so reruns can be compared byte-for-byte.

Exit codes: 0 success, 2 usage, 3 data/validation error, 4 I/O error,
5 internal invariant violation.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dataset, imaging, metrics, model
from .errors import ConfigError, ThermocrackError

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_IO = 4
EXIT_INTERNAL = 5


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = "."
    out_dir: str = "out"
    source: str = "fusion"
    n_per_level: int = 200
    height: int = 120
    width: int = 160
    hard_boundaries: bool = False
    ratios: tuple = dataset.DEFAULT_RATIOS
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 16
    model_input: tuple = model.DEFAULT_MODEL_INPUT  # (height, width)
    denoise: bool = True
    sharpen: bool = True
    resize: tuple = (1080, 1440)  # (width, height); preprocessing target
    paper_formulas: bool = False

    def to_dict(self):
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        d["model_input"] = list(self.model_input)
        d["resize"] = list(self.resize)
        return d


_FIELD_TYPES = {
    "seed": int, "data_dir": str, "out_dir": str, "source": str,
    "n_per_level": int, "height": int, "width": int, "hard_boundaries": bool,
    "ratios": (list, 3, float), "learning_rate": float, "epochs": int,
    "batch_size": int, "model_input": (list, 2, int), "denoise": bool,
    "sharpen": bool, "resize": (list, 2, int), "paper_formulas": bool,
}


def _check_type(key, value, expected):
    if isinstance(expected, tuple):
        _, length, elem = expected
        if not isinstance(value, list) or len(value) != length:
            raise ConfigError(f"config key {key!r}: expected a list of {length} values")
        return tuple(_check_type(f"{key}[]", v, elem) for v in value)
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r}: expected a boolean, got {value!r}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"config key {key!r}: expected a string, got {value!r}")
    return value


def parse_config(config_path=None, overrides=None):
    """Defaults <- config file <- flag overrides; echoes the result."""
    cfg = RunConfig()
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        for key, value in raw.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{config_path}: unknown config key {key!r}")
            setattr(cfg, key, _check_type(key, value, _FIELD_TYPES[key]))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.source not in dataset.SOURCE_KINDS:
        raise ConfigError(f"unknown source {cfg.source!r}; expected one of {dataset.SOURCE_KINDS}")
    print("config: " + json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_run_manifest(command, cfg, out_dir, artifacts):
    doc = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "artifacts": {str(rel): _sha256(p) for rel, p in sorted(artifacts.items())},
    }
    path = Path(out_dir) / f"run_{command}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _parse_wxh(text, flag):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"{flag}: expected WxH (e.g. 1080x1440), got {text!r}")
    if w < 1 or h < 1:
        raise ConfigError(f"{flag}: dimensions must be positive, got {text!r}")
    return w, h


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_synth(args):
    overrides = {"seed": args.seed, "n_per_level": args.n_per_level, "source": args.source,
                 "out_dir": args.out_dir, "hard_boundaries": args.hard_boundaries or None}
    cfg = parse_config(args.config, overrides)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = dataset.synth_dataset(cfg.seed, cfg.n_per_level, cfg.source, out_dir,
                                     height=cfg.height, width=cfg.width,
                                     ratios=cfg.ratios, hard_boundaries=cfg.hard_boundaries)
    manifest_path = out_dir / "manifest.jsonl"
    dataset.save_manifest(manifest, manifest_path)
    artifacts = {"manifest.jsonl": manifest_path}
    for rec in manifest.records:
        artifacts[rec.image_path] = out_dir / rec.image_path
    _write_run_manifest("synth", cfg, out_dir, artifacts)
    print(f"wrote {len(manifest.records)} samples under {out_dir}")
    return 0


def _cmd_fuse(args):
    cfg = parse_config(args.config, {})
    thermal = imaging.load_rgb_png(args.thermal)
    visible = imaging.load_rgb_png(args.visible)
    if args.method == "alpha":
        fused = imaging.alpha_fuse(thermal, visible)
    else:
        fused = imaging.edge_overlay_msx(thermal, visible, gain=args.gain)
    imaging.save_rgb_png(fused, args.out)
    _write_run_manifest("fuse", cfg, Path(args.out).parent, {Path(args.out).name: args.out})
    print(f"wrote {args.out}")
    return 0


def _cmd_preprocess(args):
    overrides = {}
    if args.resize:
        overrides["resize"] = _parse_wxh(args.resize, "--resize")
    if args.no_denoise:
        overrides["denoise"] = False
    if args.no_sharpen:
        overrides["sharpen"] = False
    cfg = parse_config(args.config, overrides)
    img = imaging.load_rgb_png(args.input)
    if cfg.denoise:
        img = imaging.median_denoise(img)
    if cfg.sharpen:
        img = imaging.unsharp_sharpen(img, amount=args.amount)
    w, h = cfg.resize
    img = imaging.resize_bilinear(img, out_w=w, out_h=h)
    imaging.save_rgb_png(img, args.output)
    _write_run_manifest("preprocess", cfg, Path(args.output).parent,
                        {Path(args.output).name: args.output})
    print(f"wrote {args.output}")
    return 0


def _cmd_split(args):
    cfg = parse_config(args.config, {"seed": args.seed})
    manifest = dataset.load_manifest(args.manifest)
    records = dataset.stratified_split(manifest.records, ratios=cfg.ratios, seed=cfg.seed)
    out_path = Path(args.out or args.manifest)
    new_manifest = dataset.Manifest(records=records, seed=cfg.seed)
    dataset.save_manifest(new_manifest, out_path)
    _write_run_manifest("split", cfg, out_path.parent, {out_path.name: out_path})
    counts = new_manifest.counts()
    print(f"wrote {out_path}; counts per level: "
          + ", ".join(f"L{lv}={c}" for lv, c in sorted(counts.items())))
    return 0


def _cmd_train(args):
    overrides = {"seed": args.seed, "learning_rate": args.learning_rate,
                 "epochs": args.epochs, "batch_size": args.batch_size,
                 "out_dir": args.out_dir}
    if args.model_input:
        w, h = _parse_wxh(args.model_input, "--model-input")
        overrides["model_input"] = (h, w)
    cfg = parse_config(args.config, overrides)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    manifest = dataset.load_manifest(manifest_path)
    train_cfg = model.TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                                  batch_size=cfg.batch_size, seed=cfg.seed,
                                  model_input=tuple(cfg.model_input))
    spec = model.ArchitectureSpec(input_shape=(3,) + tuple(cfg.model_input))
    params = model.build_network(spec, seed=cfg.seed)
    params, history = model.train(params, manifest, train_cfg, manifest_path.parent,
                                  log=print)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.tck1"
    model.save_checkpoint(params, ckpt_path)
    history_path = out_dir / "history.json"
    history_path.write_text(json.dumps(history, sort_keys=True, indent=2) + "\n",
                            encoding="utf-8")
    _write_run_manifest("train", cfg, out_dir,
                        {"model.tck1": ckpt_path, "history.json": history_path})
    print(f"wrote {ckpt_path}")
    return 0


def _cmd_evaluate(args):
    overrides = {"out_dir": args.out_dir, "paper_formulas": args.paper_formulas or None}
    cfg = parse_config(args.config, overrides)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    manifest = dataset.load_manifest(manifest_path)
    params, _ = model.load_checkpoint(args.checkpoint)
    model_input = params.spec.input_shape[1:]
    records = [r for r in manifest.records if r.split == args.split]
    if not records:
        raise ConfigError(f"manifest has no records in split {args.split!r}")

    by_source = {}
    for kind in dataset.SOURCE_KINDS:
        group = [r for r in records if r.source_kind == kind]
        if not group:
            continue
        cm = metrics.ConfusionMatrix()
        for start in range(0, len(group), 64):
            chunk = group[start:start + 64]
            x = np.stack([
                model.image_to_input(imaging.load_rgb_png(manifest_path.parent / r.image_path),
                                     model_input)
                for r in chunk
            ])
            levels, _ = model.predict_batch(params, x)
            for rec, pred in zip(chunk, levels):
                cm.accumulate(rec.level, pred)
        by_source[kind] = metrics.compute_metrics(cm, paper_formulas=cfg.paper_formulas)

    report_text = metrics.render_report(by_source)
    print(report_text, end="")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.txt"
    report_path.write_text(report_text, encoding="utf-8")
    artifacts = {"report.txt": report_path}
    if args.json:
        doc = {kind: rep.to_dict() for kind, rep in by_source.items()}
        json_path = out_dir / "metrics.json"
        json_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")
        artifacts["metrics.json"] = json_path
    _write_run_manifest("evaluate", cfg, out_dir, artifacts)
    return 0


def _cmd_predict(args):
    params, _ = model.load_checkpoint(args.checkpoint)
    image = imaging.load_rgb_png(args.image)
    level, probs = model.predict(params, image)
    print(f"{level.name} " + " ".join(f"{p:.6f}" for p in probs))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="thermocrack",
                                     description="Thermal crack-severity pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="JSON config file (flags take precedence)")
        p.set_defaults(func=func)
        return p

    p = add("synth", _cmd_synth, help="generate a labeled synthetic dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-per-level", type=int, dest="n_per_level")
    p.add_argument("--source", choices=dataset.SOURCE_KINDS)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--hard-boundaries", action="store_true", dest="hard_boundaries")

    p = add("fuse", _cmd_fuse, help="blend a thermal render with a visible image")
    p.add_argument("--thermal", required=True)
    p.add_argument("--visible", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("alpha", "msx"), default="alpha")
    p.add_argument("--gain", type=float, default=64.0)

    p = add("preprocess", _cmd_preprocess, help="denoise, sharpen, and resize an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--resize", metavar="WxH")
    p.add_argument("--amount", type=float, default=1.0)
    p.add_argument("--no-denoise", action="store_true", dest="no_denoise")
    p.add_argument("--no-sharpen", action="store_true", dest="no_sharpen")

    p = add("split", _cmd_split, help="re-assign stratified train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("train", _cmd_train, help="train the classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--model-input", metavar="WxH", dest="model_input")

    p = add("evaluate", _cmd_evaluate, help="confusion matrix and metrics on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=dataset.SPLITS, default="test")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--json", action="store_true")
    p.add_argument("--paper-formulas", action="store_true", dest="paper_formulas")

    p = add("predict", _cmd_predict, help="classify one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)

    return parser


def run_cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        return args.func(args)
    except (ConfigError, ThermocrackError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:  # invariant violation / bug
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
