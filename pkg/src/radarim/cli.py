"""``radarim`` command line: generate, train, evaluate and render.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import ccnn, experiment, metrics, render, sim
from .tensor import load_tensor
from .train import NumericalError, Predictor, TrainConfig, history_csv, train_model

log = logging.getLogger("radarim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ----------------------------------------------------------------------------
# experiment configuration


@dataclasses.dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 300
    n_val: int = 50
    n_test: int = 50
    seed: int = 0
    fixed_aoa: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Either a preset ``name`` or an explicit architecture (``channels`` set)."""
    name: str = "ccnn3d-s"
    angle_padding: str = "zero"
    variant: Optional[str] = None
    channels: Optional[tuple[int, ...]] = None
    kernel: Optional[tuple[int, ...]] = None
    batch_norm: bool = True

    def spec(self, n_antennas: int) -> ccnn.ModelSpec:
        if self.channels is None:
            return ccnn.preset(self.name, n_antennas, self.angle_padding)
        variant = self.variant or "3d"
        kernel = self.kernel or ((3, 3, 3) if variant == "3d" else (3, 3))
        if variant == "3d":
            return ccnn.ModelSpec("3d", self.channels, kernel, padding=("zero", "zero", self.angle_padding),
                                  batch_norm=self.batch_norm)
        return ccnn.ModelSpec("2d", self.channels, kernel, in_channels=n_antennas,
                              batch_norm=self.batch_norm)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    radar: sim.RadarConfig = sim.RadarConfig()
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    cfar: metrics.CfarConfig = metrics.CfarConfig()
    methods: tuple[str, ...] = experiment.METHOD_ORDER

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        _reject_unknown("config", doc, {f.name for f in dataclasses.fields(cls)})
        sections = {}
        for key, typ in (("radar", sim.RadarConfig), ("dataset", DatasetConfig), ("model", ModelConfig),
                         ("train", TrainConfig), ("cfar", metrics.CfarConfig)):
            if key not in doc:
                continue
            body = doc[key]
            if key == "model" and isinstance(body, str):
                body = {"name": body}
            if not isinstance(body, dict):
                raise UsageError(f"config section {key!r} must be an object")
            _reject_unknown(key, body, {f.name for f in dataclasses.fields(typ)})
            for seq in ("channels", "kernel"):
                if body.get(seq) is not None:
                    body = {**body, seq: tuple(body[seq])}
            try:
                sections[key] = typ(**body)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config section {key!r}: {exc}") from exc
        if "methods" in doc:
            try:
                sections["methods"] = tuple(experiment.order_methods(list(doc["methods"])))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
        return cls(**sections)

    @classmethod
    def load(cls, path: Optional[str]) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def _reject_unknown(where: str, doc: dict, allowed: set) -> None:
    extra = sorted(set(doc) - allowed)
    if extra:
        raise UsageError(f"unknown keys in {where}: {', '.join(extra)}")


# ----------------------------------------------------------------------------
# commands


def _load_manifest(path) -> dict:
    try:
        return sim.load_manifest(path)
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"unreadable manifest {path}: {exc}") from exc


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    ds = cfg.dataset
    seed = ds.seed if args.seed is None else args.seed
    fixed = ds.fixed_aoa if args.fixed_aoa is None else args.fixed_aoa
    out = Path(args.out or "data")
    try:
        sim.generate_dataset(ds.n_train, ds.n_val, ds.n_test, seed, out, cfg.radar,
                             fixed_aoa=fixed, cfar=cfg.cfar, overwrite=args.overwrite)
    except FileExistsError as exc:
        raise DataError(f"{exc}; pass --overwrite to replace it") from exc
    except OSError as exc:
        raise DataError(str(exc)) from exc
    print(out / "manifest.json")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    manifest = _load_manifest(args.manifest)
    model_cfg = cfg.model if args.model is None else dataclasses.replace(cfg.model, name=args.model,
                                                                        channels=None)
    try:
        spec = model_cfg.spec(sim.radar_config(manifest).n_antennas)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    tcfg = dataclasses.replace(cfg.train, **overrides)
    out = Path(args.out or f"{model_cfg.name}.ckp")
    if out.exists() and not (args.resume or args.overwrite):
        raise DataError(f"{out} exists; pass --resume to continue or --overwrite to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)

    print("epoch,lr,train_mse,val_mse", flush=True)

    def echo(row):
        print(f"{row['epoch']},{row['lr']:.6g},{row['train_mse']:.9g},{row['val_mse']:.9g}", flush=True)

    try:
        result = train_model(spec, manifest, tcfg, out_checkpoint=out, resume=args.resume, on_epoch=echo)
    except NumericalError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    stem = out.with_suffix("")
    Path(f"{stem}.history.csv").write_text(history_csv(result.history))
    if result.history:
        render.history_figure(result.history, f"{stem}.history.png")
    log.info("best epoch %s, validation MSE %.6g", result.header.get("best_epoch"),
             result.header.get("best_val_mse", float("nan")))
    print(out)
    return EXIT_OK


def _parse_checkpoints(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items or ():
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"checkpoint must look like METHOD=PATH, got {item!r}")
        if name not in ccnn.NN_METHODS:
            raise UsageError(f"unknown network method {name!r}")
        if not Path(path).is_file():
            raise DataError(f"checkpoint for {name} not found: {path}")
        out[name] = path
    return out


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    manifest = _load_manifest(args.manifest)
    try:
        methods = experiment.order_methods(args.methods.split(",")) if args.methods else list(cfg.methods)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    checkpoints = _parse_checkpoints(args.checkpoint)
    cross = _parse_checkpoints(args.cross_checkpoint)
    out = Path(args.out or "report")
    try:
        results = experiment.evaluate(manifest, methods, checkpoints, cfg.cfar)
        rows = experiment.write_results(results, out, "table2")
        render.metrics_figure(rows, out / "table2.png")
        if cross:
            cross_results = experiment.evaluate(manifest, list(cross), cross, cfg.cfar)
            cross_rows = experiment.write_results(cross_results, out, "table3")
            render.metrics_figure(cross_rows, out / "table3.png")
    except experiment.MissingCheckpointError as exc:
        raise UsageError(exc.args[0]) from exc
    except (ValueError, FileNotFoundError) as exc:
        raise DataError(str(exc)) from exc
    sys.stdout.write(experiment.rows_csv(rows))
    if cross:
        sys.stdout.write(experiment.rows_csv(cross_rows))
    return EXIT_OK


def cmd_render(args, cfg: ExperimentConfig) -> int:
    out = Path(args.out or "render")
    if args.report:
        tables = [p for p in (Path(args.report) / f"{n}.csv" for n in ("table2", "table3")) if p.exists()]
        if not tables:
            raise DataError(f"no report tables in {args.report}")
        out.mkdir(parents=True, exist_ok=True)
        for path in tables:
            target = out / f"{path.stem}.png"
            render.metrics_figure(experiment.read_rows_csv(path), target)
            print(target)
        return EXIT_OK

    maps = {}
    if args.tensor:
        try:
            maps[Path(args.tensor).name.split(".")[0]] = load_tensor(args.tensor)
        except FileNotFoundError as exc:
            raise DataError(f"tensor not found: {args.tensor}") from exc
    elif args.manifest and args.sample:
        manifest = _load_manifest(args.manifest)
        record = next((r for split in manifest["splits"].values() for r in split if r["id"] == args.sample), None)
        if record is None:
            raise DataError(f"sample {args.sample!r} not in manifest")
        sample = sim.load_sample(manifest, record)
        maps[f"{args.sample}.interfered"] = sample.interfered_rda
        maps[f"{args.sample}.clean"] = sample.clean_rda
        for name, path in _parse_checkpoints(args.checkpoint).items():
            pred = Predictor.from_checkpoint(path)
            mitigated, kind = pred(sample.interfered_rda)
            if kind == "rd":
                from .dsp import rd_to_rda
                mitigated = rd_to_rda(mitigated)
            maps[f"{args.sample}.{name}"] = mitigated
    else:
        raise UsageError("render needs --tensor, --manifest with --sample, or --report")

    for stem, rda in maps.items():
        if rda.ndim != 3:
            raise DataError(f"{stem}: expected an RDA tensor, got shape {rda.shape}")
        try:
            paths = render.render_range_angle(rda, out, stem, upsample=args.upsample, title=stem)
        except render.DegenerateMapError as exc:
            raise DataError(f"{stem}: {exc}") from exc
        print(paths["pgm"])
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded, deterministic kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="radarim", description="Radar interference mitigation experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="simulate a dataset")
    g.add_argument("--fixed-aoa", type=float, help="fix every interferer AoA (degrees)")
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--manifest", required=True)
    t.add_argument("--model", choices=sorted(ccnn.PRESETS))
    t.add_argument("--epochs", type=int, help="override train.max_epochs")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--overwrite", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="score mitigation methods on the test split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--methods", help="comma separated subset of " + ",".join(experiment.METHOD_ORDER))
    e.add_argument("--checkpoint", action="append", default=[], metavar="METHOD=PATH")
    e.add_argument("--cross-checkpoint", action="append", default=[], metavar="METHOD=PATH",
                   help="networks trained on fixed-AoA data, reported in table3")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", parents=[common], help="range-angle images and report figures")
    r.add_argument("--tensor", help="CRT1 file holding an RDA map")
    r.add_argument("--manifest")
    r.add_argument("--sample", help="sample id, e.g. s00003")
    r.add_argument("--checkpoint", action="append", default=[], metavar="METHOD=PATH")
    r.add_argument("--report", help="directory holding table2.csv / table3.csv")
    r.add_argument("--upsample", type=int, default=8, help="display-only angle zero-padding factor")
    r.set_defaults(func=cmd_render)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or an argument error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"radarim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"radarim: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"radarim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
