"""Command line entry point: ``marginkge {sweep,eval,synth,report,stats}``.

Exit codes: 0 success, 1 hard error, 2 sweep finished with failed cells.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .classifier import ClassifierConfig
from .kg import KGError, dataset_stats, load_manifest, write_dataset
from .report import emit_report
from .sweep import CELL_DIR, SweepConfig, SweepGrid, load_cells, run_cell, run_sweep, write_cells_csv
from .synth import generate_synthetic
from .trainer import TrainConfig, read_run_config, train_config_from

logger = logging.getLogger("marginkge")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2

_CLS_KEYS = {"cls_lr": "lr", "cls_max_epochs": "max_epochs", "cls_eval_every": "eval_every", "cls_patience": "patience"}


def _csv_list(conv):
    def parse(text: str):
        try:
            return tuple(conv(x) for x in text.split(",") if x.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list: {text!r}") from None
    return parse


def _load_config(args) -> tuple[dict, TrainConfig, ClassifierConfig]:
    values = read_run_config(args.config) if getattr(args, "config", None) else {}
    train = train_config_from(values)
    cls_kwargs = {}
    for key, attr in _CLS_KEYS.items():
        if key in values:
            cls_kwargs[attr] = (float if attr == "lr" else int)(values[key])
    if getattr(args, "seed", None) is not None:
        train = train_config_from({"seed": args.seed}, train)
    for name in ("max_epochs", "replicas"):
        if getattr(args, name, None) is not None:
            train = train_config_from({name: getattr(args, name)}, train)
    cls = ClassifierConfig(seed=train.seed, **cls_kwargs)
    return values, train, cls


def cmd_sweep(args) -> int:
    values, train, cls = _load_config(args)
    manifest = args.dataset or values.get("dataset")
    if not manifest:
        raise SystemExit("sweep: --dataset (or dataset= in the config) is required")
    margins = args.margins or (_csv_list(float)(values["margins"]) if "margins" in values else None)
    dims = args.dims or (_csv_list(int)(values["dims"]) if "dims" in values else None)
    ds = load_manifest(manifest)
    cfg = SweepConfig(
        manifest=Path(manifest),
        train=train,
        classifier=cls,
        out_dir=Path(args.out),
        parallel=args.parallel,
        task_seed=train.seed,
        **({"margins": margins} if margins else {}),
        **({"dims": dims} if dims else {}),
    )
    grid = run_sweep(ds, cfg)
    written = emit_report(grid, cfg.out_dir)
    print(written["summary"].read_text(encoding="utf-8"), end="")
    return EXIT_PARTIAL if grid.failed() else EXIT_OK


def cmd_eval(args) -> int:
    from . import classifier as clsmod

    values, train, cls = _load_config(args)
    manifest = args.dataset or values.get("dataset")
    if not manifest:
        raise SystemExit("eval: --dataset is required")
    margin = args.margin if args.margin is not None else float(values.get("margin", 1.0))
    dim = args.dim if args.dim is not None else int(values.get("dim", 32))
    ds = load_manifest(manifest)
    target = clsmod.select_target_relation(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cell = run_cell(ds, margin, dim, train, cls, target, train.seed, out / "trainlog.csv", args.checkpoint)
    write_cells_csv([cell], out / "cell.csv")
    with open(out / "lp_report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "gamma", "k", "mrr", "mr", "hits1", "hits3", "hits10", "mrr_r", "relation"])
        w.writerow(["test", f"{margin:g}", dim, cell.mrr, cell.mr, cell.hits1, cell.hits3, cell.hits10,
                    cell.mrr_r, cell.target_relation])
    for name in ("mrr", "mr", "hits1", "hits3", "hits10", "mrr_r", "cls_acc"):
        print(f"{name}\t{getattr(cell, name):.6f}")
    print(f"target_relation\t{cell.target_relation}")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = generate_synthetic(args.entities, args.seed)
    manifest = write_dataset(ds, args.out)
    print(manifest)
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    cells = load_cells(out / CELL_DIR)
    if not cells:
        raise SystemExit(f"report: no cell files under {out / CELL_DIR}")
    grid = SweepGrid.from_cells(cells)
    written = emit_report(grid, out)
    print(written["summary"].read_text(encoding="utf-8"), end="")
    return EXIT_PARTIAL if grid.failed() else EXIT_OK


def cmd_stats(args) -> int:
    st = dataset_stats(load_manifest(args.dataset))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["dataset", "quantity", "count"])
    for name, value in st.rows():
        w.writerow([st.label, name, value])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marginkge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run the margin x dimension grid")
    s.add_argument("--config", type=Path)
    s.add_argument("--dataset", type=Path, help="dataset manifest (learn=, valid=, tune=, test=)")
    s.add_argument("--out", type=Path, default=Path("sweep-out"))
    s.add_argument("--margins", type=_csv_list(float))
    s.add_argument("--dims", type=_csv_list(int))
    s.add_argument("--parallel", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-epochs", dest="max_epochs", type=int)
    s.add_argument("--replicas", type=int)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="train and evaluate a single (margin, dim) cell")
    e.add_argument("--config", type=Path)
    e.add_argument("--dataset", type=Path)
    e.add_argument("--margin", type=float)
    e.add_argument("--dim", type=int)
    e.add_argument("--out", type=Path, default=Path("eval-out"))
    e.add_argument("--seed", type=int)
    e.add_argument("--max-epochs", dest="max_epochs", type=int)
    e.add_argument("--replicas", type=int)
    e.add_argument("--checkpoint", type=Path, help="also save the chosen model here")
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    y.add_argument("--entities", type=int, default=200)
    y.add_argument("--seed", type=int, default=7)
    y.add_argument("--out", type=Path, required=True)
    y.set_defaults(func=cmd_synth)

    r = sub.add_parser("report", help="re-emit reports from existing cell files")
    r.add_argument("--out", type=Path, required=True)
    r.set_defaults(func=cmd_report)

    t = sub.add_parser("stats", help="dataset statistics (entities, relations, types, triples)")
    t.add_argument("--dataset", type=Path, required=True)
    t.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (KGError, ValueError, OSError, KeyError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
