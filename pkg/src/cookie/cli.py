"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import ConfigError, CookieError, InputError, NumericError
from .evaluation import (
    classification_probe,
    complexity_table,
    modality_sweep,
    regression_probe,
    run_ablation,
    write_csv,
    write_json,
)
from .objectives import MAX_FACTORIZED_M, Scheme, enumerate_objectives
from .synth import GaussianFactorModel, SyntheticRegionDataset, generate
from .train import TrainConfig, export_embeddings, load_model, save_model, train
from .verify import SUITES, write_checks

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass(frozen=True)
class GenConfig:
    """Dataset generation settings; ``seed`` is required."""

    seed: int
    n: int = 512
    m: int = 4
    dim: int = 16
    d_s: int = 4
    d_u: int = 2
    sigma_obs: float = 0.3
    shared_weight: float = 1.0
    unique_weight: float = 0.0
    sigma_y: float = 0.1
    unique_signal: tuple[int, ...] | None = None
    count_modalities: tuple[int, ...] = (0,)
    model_seed: int | None = None

    @classmethod
    def from_json(cls, obj) -> "GenConfig":
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key in obj:
            if key not in fields:
                raise ConfigError(key, "unknown field")
        if "seed" not in obj:
            raise ConfigError("seed", "required field is missing")
        kwargs = {}
        for key, value in obj.items():
            if key in ("unique_signal", "count_modalities"):
                if value is None and key == "unique_signal":
                    kwargs[key] = None
                    continue
                if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                          for v in value):
                    raise ConfigError(key, "expected a list of integers")
                kwargs[key] = tuple(value)
            elif key == "model_seed" and value is None:
                kwargs[key] = None
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"expected a number, got {value!r}")
            elif key in ("seed", "n", "m", "dim", "d_s", "d_u", "model_seed"):
                if not float(value).is_integer():
                    raise ConfigError(key, f"expected an integer, got {value!r}")
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        cfg = cls(**kwargs)
        for name in ("n", "m", "dim", "d_s", "d_u"):
            if getattr(cfg, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if cfg.n < 2:
            raise ConfigError("n", "must be >= 2")
        if cfg.sigma_obs < 0:
            raise ConfigError("sigma_obs", "must be >= 0")
        if cfg.sigma_y < 0:
            raise ConfigError("sigma_y", "must be >= 0")
        if any(not 0 <= i < cfg.m for i in cfg.count_modalities):
            raise ConfigError("count_modalities", f"indices must lie in [0, {cfg.m})")
        return cfg

    def model(self) -> GaussianFactorModel:
        return GaussianFactorModel.random(
            self.m, self.dim, self.d_s, self.d_u, sigma_obs=self.sigma_obs, shared_weight=self.shared_weight,
            unique_weight=self.unique_weight, sigma_y=self.sigma_y, unique_signal=self.unique_signal,
            seed=self.seed if self.model_seed is None else self.model_seed,
            count_modalities=self.count_modalities)


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config_sha256: str | None
    seed: int | None
    outputs: list[str]
    duration_s: float
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


class UsageError(CookieError):
    pass


def _read_json(path: str):
    raw = Path(path).read_bytes()
    try:
        return json.loads(raw), hashlib.sha256(raw).hexdigest()
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"{path}: invalid JSON ({exc.msg})") from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, out: Path, outputs, started: float, config_path=None, checksum=None, seed=None) -> None:
    rel = sorted(str(Path(p).relative_to(out)) if Path(p).is_relative_to(out) else str(p) for p in outputs)
    RunManifest(args.command, config_path, checksum, seed, rel, round(time.time() - started, 3)).write(out)


def _load_dataset(path: str) -> SyntheticRegionDataset:
    if not (Path(path) / "dataset.json").is_file():
        raise FileNotFoundError(f"no dataset found in {path}")
    return SyntheticRegionDataset.load(path)


# -- commands ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    started = time.time()
    obj, checksum = _read_json(args.config)
    cfg = GenConfig.from_json(obj)
    try:
        model = cfg.model()
    except InputError as exc:
        raise ConfigError("<model>", str(exc)) from None
    ds = generate(model, cfg.n, cfg.seed)
    out = _out_dir(args.out)
    files = ds.save(out)
    _finish(args, out, files, started, args.config, checksum, cfg.seed)
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    obj, checksum = _read_json(args.config)
    if args.scheme is not None:
        obj = {**obj, "scheme": args.scheme}
    if args.ablation == "ir":
        obj = {**obj, "disable_intra": True}
    elif args.ablation == "ur":
        obj = {**obj, "disable_unique": True}
    cfg = TrainConfig.from_json(obj)
    ds = _load_dataset(args.data)
    model = train(ds, cfg)
    out = _out_dir(args.out)
    files = save_model(model, out)
    _finish(args, out, files, started, args.config, checksum, cfg.seed)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    if not 2 <= args.m <= MAX_FACTORIZED_M:
        raise UsageError(f"--m must be between 2 and {MAX_FACTORIZED_M}, got {args.m}")
    objs = enumerate_objectives(args.m, args.scheme)
    if args.format == "json":
        print(json.dumps({"m": args.m, "scheme": args.scheme, "count": len(objs),
                          "objectives": [o.label for o in objs]}, indent=2))
    else:
        for o in objs:
            print(o.label)
        print(f"{len(objs)} objectives", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    started = time.time()
    checks = SUITES[args.suite]()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.6g}  need {c.threshold}")
    if args.out:
        out = _out_dir(args.out)
        path = write_checks(checks, out / f"verify_{args.suite}.csv")
        _finish(args, out, [path], started)
    return EXIT_OK if all(c.passed for c in checks) else 1


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _parse_subsets(text: str | None, m: int) -> list[tuple[int, ...]]:
    if text is None:
        return [c for k in range(2, m + 1) for c in itertools.combinations(range(m), k)]
    subsets = []
    for part in text.split(";"):
        try:
            subsets.append(tuple(int(i) - 1 for i in part.split(",") if i.strip()))
        except ValueError:
            raise UsageError(f"bad subset {part!r}; use 1-based indices like '1,2;1,2,3'") from None
    return subsets


def cmd_eval(args) -> int:
    started = time.time()
    if not (Path(args.model) / "model.json").is_file():
        raise FileNotFoundError(f"no model found in {args.model}")
    model = load_model(args.model)
    ds = _load_dataset(args.data)
    if model.assembly.m != ds.m or tuple(s.d_in for s in model.encoders.specs) != ds.dims:
        raise UsageError(f"model expects modalities of widths {[s.d_in for s in model.encoders.specs]}, "
                         f"dataset has {list(ds.dims)}")
    out = _out_dir(args.out)
    cfg = model.config
    seeds = _parse_seeds(args.seeds)
    files = []
    if args.task == "regression":
        rep = regression_probe(export_embeddings(model, ds), ds.y, args.folds, cfg.seed)
        files.append(write_csv(rep.folds, out / "regression.csv", ["fold", "mae", "rmse", "r2"]))
        files.append(write_json({**rep.mean, "constant_labels": rep.constant_labels}, out / "regression.json"))
    elif args.task == "classification":
        rep = classification_probe(export_embeddings(model, ds), ds.classes, args.folds, cfg.seed)
        files.append(write_csv(rep.folds, out / "classification.csv", ["fold", "l1", "kl", "cosine"]))
        files.append(write_json(rep.mean, out / "classification.json"))
    elif args.task == "ablation":
        arms = run_ablation(ds, cfg, seeds)
        rows = [a.row() for a in arms]
        files.append(write_csv(rows, out / "ablation.csv",
                               ["variant", "r2_mean", "r2_std", "cosine_mean", "cosine_std"]))
        files.append(write_json({a.name: {"seeds": a.seeds, "r2": a.r2, "cosine": a.cosine} for a in arms},
                                out / "ablation.json"))
    elif args.task == "sweep":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rows = modality_sweep(ds, cfg, _parse_subsets(args.subsets, ds.m), seeds)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        files.append(write_csv(rows, out / "sweep.csv", ["subset", "n_modalities", "r2_mean", "r2_std"]))
        files.append(write_json(rows, out / "sweep.json"))
    else:
        ms = range(2, ds.m + 1) if args.all_m else [ds.m]
        rows = complexity_table(ms, cfg, ds.dims[0] if len(set(ds.dims)) == 1 else ds.dims)
        files.append(write_csv(rows, out / "complexity.csv"))
        files.append(write_json(rows, out / "complexity.json"))
    _finish(args, out, files, started, seed=cfg.seed)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cookie", description="Multimodal region embedding toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic region dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="pretrain and jointly train encoders")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--scheme", choices=[s.value for s in Scheme])
    t.add_argument("--ablation", choices=["ir", "ur"])
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enumerate", help="list the objectives of a scheme")
    e.add_argument("--m", type=int, required=True)
    e.add_argument("--scheme", choices=[s.value for s in Scheme], required=True)
    e.add_argument("--format", choices=["text", "json"], default="text")
    e.set_defaults(func=cmd_enumerate)

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("--suite", choices=sorted(SUITES), required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    ev = sub.add_parser("eval", help="probe, ablate, sweep, or count complexity")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--task", choices=["regression", "classification", "ablation", "sweep", "complexity"],
                    required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--folds", type=int, default=5)
    ev.add_argument("--seeds", default="0", help="comma-separated seeds for ablation and sweep")
    ev.add_argument("--subsets", help="1-based modality subsets for sweep, e.g. '1,2;1,2,3'")
    ev.add_argument("--all-m", action="store_true", help="complexity rows for every m from 2 up to the data's m")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
