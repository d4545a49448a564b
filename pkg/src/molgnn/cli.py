"""Command-line interface: split preparation, training, prediction,
ensembling, and the verification suites."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path


from . import __version__
from .gnn2d import Model2D, Model2DConfig
from .gnn3d import Model3D, Model3DConfig
from .molgraph import (load_conformer_dataset, load_graph_dataset, load_split,
                       make_new_splits, save_split)
from .train import (TrainConfig, ensemble_predict, fit, load_checkpoint)
from .verify import run_suite

CONFIG_DEFAULTS = {
    # 2D architecture
    "num_layers": 16, "dagnn_steps": 5, "hidden_dim": 600,
    "dropout_rate": 0.25, "epsilon": 1e-7, "virtual_node": True,
    # 3D architecture
    "num_confdss_layers": 5, "radius_cutoff": 5.0, "num_rbf": 64,
    "max_train_conformers": 20, "max_predict_conformers": 40,
    # optimization
    "epochs": None, "batch_size": 256, "lr0": 1e-3,
    "decay_factor": None, "decay_every": None,
}


def parse_config_file(path) -> dict:
    """Parse a `key = value` config file with # comments."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if raw.lower() in ("true", "false"):
                values[key] = raw.lower() == "true"
            elif raw.lstrip("+-").isdigit():
                values[key] = int(raw)
            else:
                values[key] = float(raw)
    return values


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                   inputs: list, start: float, warnings: dict | None = None
                   ) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _digest(p) for p in inputs if p},
        "started": start,
        "finished": time.time(),
        "version": __version__,
        "warnings": warnings or {},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def cmd_prepare_splits(args) -> int:
    start = time.time()
    if args.folds < 1:
        raise SystemExit("--folds must be >= 1")
    base = load_split(args.base_split)
    splits = make_new_splits(base, args.folds, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, spec in enumerate(splits):
        save_split(spec, out / f"fold-{k}.json")
    write_manifest(out, "prepare-splits", {"folds": args.folds}, args.seed,
                   [args.base_split], start)
    print(f"wrote {len(splits)} split files to {out}")
    return 0


def _resolve_train_config(args) -> tuple[dict, TrainConfig]:
    values = dict(CONFIG_DEFAULTS)
    if args.config:
        values.update(parse_config_file(args.config))
    # paper schedule defaults depend on the model kind
    schedule = TrainConfig.paper_defaults(args.model)
    for key in ("epochs", "decay_factor", "decay_every"):
        if values[key] is None:
            values[key] = getattr(schedule, key)
    if args.epochs is not None:
        values["epochs"] = args.epochs
    cfg = TrainConfig(model_kind=args.model, epochs=values["epochs"],
                      batch_size=values["batch_size"], lr0=values["lr0"],
                      decay_factor=values["decay_factor"],
                      decay_every=values["decay_every"], seed=args.seed)
    return values, cfg


def cmd_train(args) -> int:
    start = time.time()
    if args.model == "3d" and not args.conformers:
        raise SystemExit("--conformers is required for --model 3d")
    values, cfg = _resolve_train_config(args)
    graphs, vocab = load_graph_dataset(args.graphs)
    split = load_split(args.split)
    conformers = None
    if args.conformers:
        conformers = load_conformer_dataset(args.conformers, graphs)
    if args.model == "2d":
        mcfg = Model2DConfig(
            num_layers=values["num_layers"], dagnn_steps=values["dagnn_steps"],
            hidden_dim=values["hidden_dim"],
            dropout_rate=values["dropout_rate"], epsilon=values["epsilon"],
            virtual_node=values["virtual_node"])
        model = Model2D.from_vocab(mcfg, vocab, seed=args.seed)
    else:
        mcfg = Model3DConfig(
            num_confdss_layers=values["num_confdss_layers"],
            hidden_dim=values["hidden_dim"],
            radius_cutoff=values["radius_cutoff"], num_rbf=values["num_rbf"],
            max_train_conformers=values["max_train_conformers"],
            max_predict_conformers=values["max_predict_conformers"],
            virtual_node=values["virtual_node"])
        model = Model3D.from_vocab(mcfg, vocab, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.jsonl"
    metrics.unlink(missing_ok=True)
    fit(model, graphs, split, cfg, conformers,
        metrics_path=metrics, best_path=out / "best.ckpt",
        final_path=out / "final.ckpt",
        log=lambda r: print(f"epoch {r['epoch']:>4}  lr {r['lr']:.2e}  "
                            f"train {r['train_mae']:.4f}  "
                            f"valid {r['valid_mae']:.4f}"))
    write_manifest(out, "train", values, args.seed,
                   [args.graphs, args.split, args.conformers, args.config],
                   start)
    return 0


def cmd_predict(args) -> int:
    start = time.time()
    model, _, _, _ = load_checkpoint(args.checkpoint)
    graphs, _ = load_graph_dataset(args.graphs)
    by_id = {g.id: g for g in graphs}
    with open(args.ids, encoding="utf-8") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    unknown = [i for i in ids if i not in by_id]
    if unknown:
        raise SystemExit(f"unknown molecule ids: {unknown[:5]}")
    conformers = None
    if args.conformers:
        conformers = load_conformer_dataset(args.conformers, graphs)
    if model.kind == "3d" and conformers is None:
        raise SystemExit("--conformers is required for a 3d checkpoint")

    from .train import _forward_batch
    preds: dict[str, float] = {}
    for s in range(0, len(ids), 256):
        chunk = [by_id[i] for i in ids[s:s + 256]]
        out, served = _forward_batch(model, chunk, conformers, False, None)
        if out is not None:
            preds.update(zip(served, (float(v) for v in out.data)))
    missing = [i for i in ids if i not in preds]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,pred\n")
        for i in ids:
            fh.write(f"{i},{preds[i]!r}\n" if i in preds else f"{i},\n")
    write_manifest(out_path.parent, "predict", {}, 0,
                   [args.checkpoint, args.graphs, args.conformers], start,
                   warnings={"molecules_without_prediction": len(missing)})
    print(f"wrote {len(ids)} rows ({len(missing)} without prediction)")
    return 0


def read_predictions_csv(path) -> dict[str, float | None]:
    preds: dict[str, float | None] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "pred"]:
            raise ValueError(f"{path}: expected header 'id,pred'")
        for row in reader:
            raw = (row["pred"] or "").strip()
            preds[row["id"]] = float(raw) if raw else None
    return preds


def cmd_ensemble(args) -> int:
    members = [read_predictions_csv(p) for p in args.inputs]
    ids: list[str] = []
    for m in members:
        for i in m:
            if i not in ids:
                ids.append(i)
    merged = ensemble_predict(members, ids)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,pred\n")
        for i in ids:
            fh.write(f"{i},{merged[i]!r}\n")
    print(f"averaged {len(members)} members over {len(ids)} molecules")
    return 0


def cmd_verify(args) -> int:
    results = run_suite(args.suite, corrupt=args.corrupt)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}" + (f"  ({r.detail})" if r.detail else ""))
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molgnn",
        description="Train and evaluate 2D/3D molecular GNNs for "
                    "HOMO-LUMO gap regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-splits",
                       help="derive k folds from a base split's validation set")
    p.add_argument("--graphs")
    p.add_argument("--base-split", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare_splits)

    p = sub.add_parser("train", help="train a 2d or 3d model")
    p.add_argument("--model", choices=["2d", "3d"], required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--conformers")
    p.add_argument("--split", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--conformers")
    p.add_argument("--ids", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="average prediction CSVs")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", choices=["gradcheck", "invariants", "oracles"],
                   required=True)
    p.add_argument("--corrupt", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control test hook
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
