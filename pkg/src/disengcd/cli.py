"""Command-line interface.

Subcommands: train, eval, diagnose, experiment, synth, export-metagraph.
Flags override config-file keys; unknown config keys are rejected.
Exit codes: 0 success, 2 usage/config error, 3 data validation error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import evaluation, student_meta
from .data import SplitSpec, generate_synthetic, load_dataset, save_dataset, save_id_maps
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataValidationError,
    DisenGCDError,
    NumericError,
    ShapeError,
)
from .trainer import (
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    prepare_splits,
    save_checkpoint,
    train_bilevel,
)

TRAIN_KEYS = {
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "patience": int,
    "hyper_nodes": int,
    "gat_layers": int,
    "lam": float,
    "d": int,
    "variant": str,
    "student_mode": str,
    "noise_ratio": float,
    "delete_fraction": float,
}


def _parse_split(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--split needs three comma-separated fractions, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad --split value {text!r}: {exc}") from exc


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}: {exc}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}: {exc}") from exc


def _merge_config_file(args: argparse.Namespace, allowed: set[str]):
    """Apply config-file keys where no flag was given; reject unknown keys."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in data.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(
        lr=args.lr if args.lr is not None else 1e-4,
        batch_size=args.batch_size if args.batch_size is not None else 256,
        max_epochs=args.epochs if args.epochs is not None else 100,
        patience=args.patience if args.patience is not None else 10,
        seed=args.seed,
        n_hyper_nodes=args.hyper_nodes if args.hyper_nodes is not None else 5,
        gat_layers=args.gat_layers if args.gat_layers is not None else 2,
        lam=args.lam if args.lam is not None else 0.8,
        d=args.d,
        variant=args.variant if args.variant is not None else "full",
        student_mode=args.student_mode if args.student_mode is not None else "meta_multigraph",
        noise_ratio=args.noise_ratio if args.noise_ratio is not None else 0.0,
        delete_fraction=args.delete_fraction if args.delete_fraction is not None else 0.0,
    )
    cfg.validate()
    return cfg


def _load(args):
    return load_dataset(args.logs, args.q, args.dep, min_logs=args.min_logs)


def _run_config_dict(args, cfg: TrainConfig) -> dict:
    split_fr = _parse_split(args.split) if args.split else (0.6, 0.1, 0.3)
    return {
        "train": cfg.to_dict(),
        "split": {"train": split_fr[0], "val": split_fr[1], "test": split_fr[2]},
        "split_seed": args.seed,
        "min_logs": args.min_logs,
    }


def _split_spec(run_cfg: dict) -> SplitSpec:
    s = run_cfg["split"]
    return SplitSpec(s["train"], s["val"], s["test"], seed=run_cfg["split_seed"])


def _log_run(outdir: Path, message: str):
    with open(outdir / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")


# -- subcommands ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _train_config(args)
    run_cfg = _run_config_dict(args, cfg)
    digest = evaluation.config_digest(run_cfg)
    ds = _load(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _log_run(outdir, f"train started digest={digest}")

    parts = prepare_splits(ds, _split_spec(run_cfg), cfg)
    model, history = train_bilevel(parts, cfg)

    save_checkpoint(
        outdir / "checkpoint.bin",
        model,
        model.opt_omega,
        model.opt_alpha,
        run_config={**run_cfg, "digest": digest},
        epoch=history.best_epoch,
    )
    (outdir / "history.csv").write_text(history.to_csv())
    export = model.export_metagraph()
    if export is not None:
        student_meta.save_export(export, outdir / "metagraph.json")
    save_id_maps(ds, outdir / "id_maps.json")
    (outdir / "run.json").write_text(
        json.dumps(
            {"config": run_cfg, "digest": digest, "warnings": parts.warnings,
             "best_epoch": history.best_epoch, "diverged": history.diverged},
            indent=1,
        )
    )
    _log_run(outdir, "train finished")
    print(f"trained {cfg.variant}/{cfg.student_mode}; best epoch {history.best_epoch}; "
          f"artifacts in {outdir}")
    return 0


def _restore(args):
    ckpt = load_checkpoint(args.checkpoint)
    run_cfg = ckpt.run_config
    if "split" not in run_cfg:
        raise CheckpointError("checkpoint lacks the run config needed to re-split")
    if args.min_logs is None:
        args.min_logs = run_cfg.get("min_logs")
    ds = _load(args)
    parts = prepare_splits(ds, _split_spec(run_cfg), ckpt.train_config)
    model = model_from_checkpoint(ckpt, parts.train)
    return ckpt, ds, parts, model


def cmd_eval(args) -> int:
    ckpt, _, parts, model = _restore(args)
    chosen = {"train": parts.train, "val": parts.val, "test": parts.test}[args.split_name]
    probs = model.predict_probs(chosen.logs)
    digest = ckpt.run_config.get("digest", "")
    report = evaluation.metrics(probs, chosen.logs[:, 2], args.split_name, digest)
    payload = json.dumps(report.to_dict(), indent=1)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / f"report_eval_{args.split_name}_{digest}.json").write_text(payload)
    print(payload)
    return 0


def cmd_diagnose(args) -> int:
    ckpt, ds, parts, model = _restore(args)
    ids = ds.id_maps.students if ds.id_maps else [str(i) for i in range(ds.n_students)]
    index = {sid: i for i, sid in enumerate(ids)}
    if args.all:
        requested = list(ids)
    elif args.students:
        requested = [s.strip() for s in args.students.split(",") if s.strip()]
    else:
        raise ConfigError("diagnose needs --students or --all")

    reports, unknown = [], []
    s_all, e_all, c_all = model.representations()
    from .diagnosis import mastery_report

    for sid in requested:
        if sid not in index:
            unknown.append(sid)
            continue
        mastery, flags = mastery_report(
            s_all[index[sid]], e_all, c_all, model.q, model.params
        )
        reports.append(
            {"student_id": sid, "mastery": [float(x) for x in mastery], "flags": flags}
        )
    payload = {"reports": reports, "unknown": unknown}
    text = json.dumps(payload, indent=1)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "diagnosis.json").write_text(text)
    print(text)
    return 0


def cmd_experiment(args) -> int:
    cfg = _train_config(args)
    run_cfg = _run_config_dict(args, cfg)
    digest = evaluation.config_digest({**run_cfg, "experiment": args.kind})
    ds = _load(args)
    spec = _split_spec(run_cfg)

    if args.kind == "robustness":
        ratios = _parse_floats(args.ratios if args.ratios else "0,0.1,0.3,0.5")
        rows = evaluation.robustness_experiment(ds, spec, cfg, ratios)
    elif args.kind == "sparsity":
        fractions = _parse_floats(args.fractions if args.fractions else "0.05,0.1,0.2")
        rows = evaluation.sparsity_experiment(ds, spec, cfg, fractions)
    elif args.kind == "sensitivity":
        counts = _parse_ints(args.hyper_node_sweep if args.hyper_node_sweep else "4,5,6,7")
        rows = evaluation.sensitivity_experiment(ds, spec, cfg, counts)
    elif args.kind == "ablation":
        rows = evaluation.ablation_experiment(ds, spec, cfg)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown experiment {args.kind!r}")

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    base = outdir / f"report_{args.kind}_{digest}"
    evaluation.write_rows(rows, f"{base}.csv", f"{base}.json")
    _log_run(outdir, f"experiment {args.kind} finished digest={digest}")
    print(f"{args.kind}: {len(rows)} rows -> {base}.csv")
    return 0


def cmd_synth(args) -> int:
    ds, truth = generate_synthetic(
        args.n_students, args.n_exercises, args.n_concepts, args.logs_per_student, args.seed
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, outdir / "logs.csv", outdir / "q.csv", outdir / "dep.csv")
    save_id_maps(ds, outdir / "id_maps.json")
    with open(outdir / "truth.json", "w") as fh:
        json.dump(
            {
                "mastery": truth.mastery.tolist(),
                "difficulty": truth.difficulty.tolist(),
                "seed": args.seed,
            },
            fh,
        )
    print(f"synthetic dataset with {ds.n_logs} logs written to {outdir}")
    return 0


def cmd_export_metagraph(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if "alpha" not in ckpt.params:
        raise ConfigError("checkpoint variant has no meta-multigraph to export")
    mg = student_meta.MetaMultigraph(
        ckpt.train_config.n_hyper_nodes, ckpt.train_config.lam, ckpt.params["alpha"]
    )
    export = student_meta.export_structure(mg)
    Path(args.out).write_text(json.dumps(export, indent=1))
    if args.dot:
        Path(args.dot).write_text(student_meta.render_dot(export))
    print(f"meta-multigraph structure written to {args.out}")
    return 0


# -- parser -----------------------------------------------------------------------


def _add_dataset_flags(p):
    p.add_argument("--logs", required=True, help="response log CSV")
    p.add_argument("--q", required=True, help="Q-matrix CSV")
    p.add_argument("--dep", default=None, help="concept dependency CSV")
    p.add_argument("--min-logs", dest="min_logs", type=int, default=None,
                   help="drop students with fewer logs before anything else")


def _add_train_flags(p):
    p.add_argument("--config", default=None, help="JSON config file; flags win")
    p.add_argument("--split", default=None, help="train,val,test fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--hyper-nodes", dest="hyper_nodes", type=int, default=None)
    p.add_argument("--gat-layers", dest="gat_layers", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--variant", default=None,
                   choices=["full", "disengcd_i", "is_rec", "ise_rc", "isc_re"])
    p.add_argument("--student-mode", dest="student_mode", default=None,
                   choices=["meta_multigraph", "meta_graph", "fixed_paths", "naive"])
    p.add_argument("--noise-ratio", dest="noise_ratio", type=float, default=None)
    p.add_argument("--delete-fraction", dest="delete_fraction", type=float, default=None)


CONFIG_FILE_KEYS = {
    "split", "seed", "lr", "batch_size", "epochs", "patience", "hyper_nodes",
    "gat_layers", "lam", "d", "variant", "student_mode", "noise_ratio",
    "delete_fraction", "min_logs",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disengcd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write artifacts")
    _add_dataset_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    _add_dataset_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split-name", dest="split_name", default="test",
                   choices=["train", "val", "test"])
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diagnose", help="per-student mastery reports")
    _add_dataset_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--students", default=None, help="comma-separated student ids")
    p.add_argument("--all", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("experiment", help="robustness/sparsity/sensitivity/ablation")
    p.add_argument("kind", choices=["robustness", "sparsity", "sensitivity", "ablation"])
    _add_dataset_flags(p)
    _add_train_flags(p)
    p.add_argument("--ratios", default=None, help="noise ratios (robustness)")
    p.add_argument("--fractions", default=None, help="delete fractions (sparsity)")
    p.add_argument("--hyper-node-sweep", dest="hyper_node_sweep", default=None,
                   help="P values (sensitivity)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("synth", help="write a synthetic dataset with ground truth")
    p.add_argument("--n-students", dest="n_students", type=int, default=200)
    p.add_argument("--n-exercises", dest="n_exercises", type=int, default=100)
    p.add_argument("--n-concepts", dest="n_concepts", type=int, default=10)
    p.add_argument("--logs-per-student", dest="logs_per_student", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("export-metagraph", help="dump the learned structure")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dot", default=None)
    p.set_defaults(fn=cmd_export_metagraph)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if hasattr(args, "config"):
            _merge_config_file(args, CONFIG_FILE_KEYS)
        return args.fn(args)
    except (ConfigError, ContractError, ShapeError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DisenGCDError as exc:  # anything else from the package
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
