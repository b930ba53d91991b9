"""Command-line interface: train, eval, predict, gradcheck, ablate.

All commands are non-interactive. Machine-parseable results go to stdout,
progress and diagnostics to stderr. Exit codes: 0 success, 2 configuration
or checkpoint error, 3 data error, 4 numerical abort, 5 gradient-check
failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunSpec, load_run_spec
from .data import CommentSchema, Dataset, load_dataset, parse_extended_xyz_records, split
from .errors import (CheckpointError, ConfigError, DataError, NumericalError, ParseError,
                     VocabularyError)
from .gradcheck import DEFAULT_CHECK_CONFIG, run_gradcheck
from .model import ModelConfig, forward
from .training import ABLATION_FLAGS, evaluate, run_ablation, train

__all__ = ["main", "entrypoint", "build_parser"]


@contextlib.contextmanager
def _thread_cap(n: int | None):
    """Cap BLAS worker threads; --threads 1 makes numerics run-to-run identical."""
    if not n:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=n):
        yield


def _parse_schema_arg(spec: str | None) -> CommentSchema | None:
    if not spec:
        return None
    if spec.startswith("builtin:"):
        return CommentSchema.builtin(spec.split(":", 1)[1])
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"schema file not found: {spec}")
    return CommentSchema.from_file(path)


def _load_spec_dataset(spec: RunSpec) -> Dataset:
    return load_dataset(spec.dataset_path(), spec["dataset.format"], spec.schema(),
                        spec["dataset.elements"])


def _checked_target(spec: RunSpec, ds: Dataset) -> str:
    target = spec["target"]
    if not target:
        raise ConfigError("config key 'target' is required")
    if target not in ds.property_names:
        raise DataError(f"target '{target}' not among dataset properties {ds.property_names}")
    return target


def _train_overrides(args) -> list[str]:
    overrides = list(args.overrides)
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.runs is not None:
        overrides.append(f"run.runs={args.runs}")
    if args.resplit:
        overrides.append("run.resplit=true")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    return overrides


def _cmd_train(args) -> int:
    spec = load_run_spec(args.config, _train_overrides(args))
    with _thread_cap(spec["run.threads"]):
        return _run_training(spec, Path(args.out))


def _run_training(spec: RunSpec, out: Path) -> int:
    ds = _load_spec_dataset(spec)
    target = _checked_target(spec, ds)
    unit = ds.units.get(target, "")
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.cfg").write_text(spec.manifest_text(), encoding="utf-8")

    runs = spec["run.runs"]
    run_infos = []
    for r in range(runs):
        run_dir = out if runs == 1 else out / f"run{r}"
        run_dir.mkdir(parents=True, exist_ok=True)
        split_offset = r if spec["run.resplit"] else 0
        train_ds, val_ds, test_ds = split(ds, spec.split_spec(split_offset))
        cfg = spec.train_config(seed_offset=r)

        with open(run_dir / "metrics.jsonl", "w", encoding="utf-8") as metrics_fh, \
                open(run_dir / "timing.jsonl", "w", encoding="utf-8") as timing_fh:

            def on_epoch(rep, _metrics=metrics_fh, _timing=timing_fh, _run=r):
                _metrics.write(json.dumps(
                    {"epoch": rep.epoch, "lr": rep.lr, "train_mse": rep.train_mse,
                     "val_mae": rep.val_mae, "grad_norm": rep.grad_norm},
                    sort_keys=True) + "\n")
                _timing.write(json.dumps({"epoch": rep.epoch, "seconds": rep.seconds}) + "\n")
                print(f"run {_run} epoch {rep.epoch}: lr={rep.lr:.6g} "
                      f"train_mse={rep.train_mse:.6g} val_mae={rep.val_mae:.6g} "
                      f"({rep.seconds:.2f}s)", file=sys.stderr)

            result = train(train_ds, val_ds, cfg, epoch_callback=on_epoch)

        save_checkpoint(run_dir / "best.ckpt", result.best_params, cfg.model,
                        result.vocabulary, result.normalizer, target, unit)
        save_checkpoint(run_dir / "final.ckpt", result.final_params, cfg.model,
                        result.vocabulary, result.normalizer, target, unit)
        test_best = evaluate(result.best_params, test_ds, result.normalizer, cfg.model,
                             result.vocabulary, target)
        test_final = evaluate(result.final_params, test_ds, result.normalizer, cfg.model,
                              result.vocabulary, target)
        run_infos.append({"run": r, "seed": cfg.seed,
                          "split_seed": spec.split_spec(split_offset).seed,
                          "best_epoch": result.best_epoch,
                          "best_val_mae": result.best_val_mae,
                          "test_mae_best": test_best.mae,
                          "test_mae_final": test_final.mae})

    def agg(key):
        values = [info[key] for info in run_infos]
        return sum(values) / len(values), max(values) - min(values)

    mean_best, spread_best = agg("test_mae_best")
    mean_final, spread_final = agg("test_mae_final")
    report = {"property": target, "unit": unit, "runs": run_infos,
              "mean_test_mae_best": mean_best, "spread_test_mae_best": spread_best,
              "mean_test_mae_final": mean_final, "spread_test_mae_final": spread_final}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    print(json.dumps(report, sort_keys=True))
    return 0


_PARTITIONS = {"train": 0, "val": 1, "test": 2}


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.config:
        spec = load_run_spec(args.config)
        ds = _load_spec_dataset(spec)
        if list(ds.element_vocabulary) != list(ckpt.vocabulary):
            raise CheckpointError(f"vocabulary mismatch: dataset uses "
                                  f"{ds.element_vocabulary}, checkpoint expects "
                                  f"{ckpt.vocabulary}")
        partition = args.partition or "test"
        if partition != "all":
            ds = split(ds, spec.split_spec())[_PARTITIONS[partition]]
    elif args.data:
        schema = _parse_schema_arg(args.schema)
        ds = load_dataset(args.data, args.format, schema, ckpt.vocabulary)
    else:
        raise ConfigError("eval needs either --config or --data")

    target = ckpt.target_property
    if target not in ds.property_names:
        raise DataError(f"checkpoint target '{target}' not among dataset properties "
                        f"{ds.property_names}")
    with _thread_cap(args.threads):
        report = evaluate(ckpt.params, ds, ckpt.normalizer, ckpt.config, ckpt.vocabulary,
                          target, with_residuals=args.residuals)
    payload = {"property": target, "unit": ckpt.unit, "n": report.n, "mae": report.mae}
    if args.residuals:
        payload["residuals"] = list(report.residuals)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    path = Path(args.molecules)
    if not path.is_file():
        raise DataError(f"molecule file not found: {path}")
    schema = _parse_schema_arg(args.schema)
    molecules = parse_extended_xyz_records(path.read_bytes(), schema, ckpt.vocabulary)
    with _thread_cap(args.threads):
        for mol in molecules:
            value = ckpt.normalizer.invert(
                forward(None, mol, ckpt.params, ckpt.config, ckpt.vocabulary).item())
            print(f"{mol.mol_id}\t{value!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    atom_counts = [int(tok) for tok in args.atoms.split(",") if tok.strip()]
    if not atom_counts or min(atom_counts) < 1:
        raise ConfigError(f"--atoms must list positive atom counts, got '{args.atoms}'")
    cfg = ModelConfig(atom_dim=args.atom_dim, count_dim=args.count_dim,
                      hidden_dim=args.hidden_dim, mlp_dim=args.mlp_dim, steps=args.steps)
    with _thread_cap(args.threads):
        reports = run_gradcheck(seed=args.seed, seeds=args.seeds, atom_counts=atom_counts,
                                cfg=cfg, fd_step=args.fd_step, corrupt=args.corrupt)
    for k, rep in enumerate(reports):
        print(f"seed={args.seed + k} params={rep.parameter_count} "
              f"max_error={rep.max_error:.3e} worst={rep.worst_tensor}{list(rep.worst_index)}")
    worst = max(reports, key=lambda rep: rep.max_error)
    print(f"max_error={worst.max_error:.6e} threshold={args.threshold:.6e}")
    if worst.max_error < args.threshold:
        return 0
    print(f"gradient check failed: {worst.worst_tensor}{list(worst.worst_index)} "
          f"error {worst.max_error:.3e} >= {args.threshold:.3e}", file=sys.stderr)
    return 5


def _cmd_ablate(args) -> int:
    overrides = list(args.overrides)
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    spec = load_run_spec(args.config, overrides)
    which = list(ABLATION_FLAGS) if args.which == "all" else [args.which]

    with _thread_cap(args.threads if args.threads is not None else spec["run.threads"]):
        ds = _load_spec_dataset(spec)
        target = _checked_target(spec, ds)
        train_ds, val_ds, test_ds = split(ds, spec.split_spec())

        def progress(name, rep):
            print(f"{name} epoch {rep.epoch}: train_mse={rep.train_mse:.6g} "
                  f"val_mae={rep.val_mae:.6g}", file=sys.stderr)

        rows = run_ablation(spec.train_config(), train_ds, val_ds, test_ds, which,
                            epoch_callback=progress)

    print("variant\tval_mae\ttest_mae")
    for row in rows:
        print(f"{row.name}\t{row.val_mae!r}\t{row.test_mae!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.cfg").write_text(spec.manifest_text(), encoding="utf-8")
        payload = [{"variant": row.name, "val_mae": row.val_mae, "test_mae": row.test_mae}
                   for row in rows]
        (out / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ggrnet",
        description="Gated graph recursive network for molecular property regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="split, normalize, train, and evaluate per config")
    p.add_argument("--config", required=True, help="run config file (flat key = value)")
    p.add_argument("--out", default="ggrnet_run", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--runs", type=int, help="independent runs with stepped seeds")
    p.add_argument("--resplit", action="store_true",
                   help="also step the split seed across runs")
    p.add_argument("--threads", type=int, help="cap BLAS threads (1 = bit-reproducible)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="MAE of a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="run config; evaluates its test partition")
    p.add_argument("--data", help="dataset file/directory; evaluates everything")
    p.add_argument("--format", default="auto", choices=("auto", "xyz", "tabular"))
    p.add_argument("--schema", help="comment-line schema (path or builtin:NAME)")
    p.add_argument("--partition", choices=("train", "val", "test", "all"),
                   help="with --config: which partition (default test)")
    p.add_argument("--residuals", action="store_true", help="include per-molecule residuals")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="print predictions for molecules in a file")
    p.add_argument("checkpoint")
    p.add_argument("molecules", help="extended-XYZ file (single or concatenated records)")
    p.add_argument("--schema", help="comment-line schema (path or builtin:NAME)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds to run")
    p.add_argument("--atoms", default="1,2,4,6", help="comma list of molecule sizes")
    p.add_argument("--atom-dim", type=int, default=DEFAULT_CHECK_CONFIG.atom_dim)
    p.add_argument("--count-dim", type=int, default=DEFAULT_CHECK_CONFIG.count_dim)
    p.add_argument("--hidden-dim", type=int, default=DEFAULT_CHECK_CONFIG.hidden_dim)
    p.add_argument("--mlp-dim", type=int, default=DEFAULT_CHECK_CONFIG.mlp_dim)
    p.add_argument("--steps", type=int, default=DEFAULT_CHECK_CONFIG.steps)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="train full model plus feature ablations")
    p.add_argument("--config", required=True)
    p.add_argument("--which", required=True,
                   choices=(*ABLATION_FLAGS, "all"))
    p.add_argument("--out", help="optional output directory for ablation.json")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ParseError, VocabularyError, DataError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())
