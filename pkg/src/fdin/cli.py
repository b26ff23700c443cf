"""Command line entry point: ``fdin <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Progress and summaries go to standard error; results go to files (or to
standard output where a command says so).

CSV columns
  loss curve     epoch,loss
  rankings       group,rank,regions,names,chi   (regions: comma-joined 1-based indices)
  perturbations  regions,kind,donor,mean_error,stderr_error,mean_delta,stderr_delta,mean_abs_delta,n

CSV files open with ``# tool=fdin <version> config_digest=<sha256>``; JSON
files carry ``tool``, ``version``, ``schema`` and ``config_digest`` keys.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import GraphError, set_precision
from .checkpoint import CheckpointError, load_model, save_model
from .config import VARIANTS, ConfigError, RunConfig, config_digest
from .data import PRESETS, DatasetFormatError, generate, preset, read_dataset, write_dataset
from .interpretation import (PerturbationEntry, label_bins, perturb_swap, perturb_zero, rank_relations,
                             standard_error)
from .regions import FACE_REGION_NAMES, format_regions, parse_regions
from .training import TrainingDiverged, cross_validate, evaluate, pooled_summary, train

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("fdin")


class UsageError(Exception):
    pass


# -- output helpers ---------------------------------------------------------


def _stamp(digest: str, kind: str) -> dict:
    return {"tool": "fdin", "version": __version__, "schema": SCHEMA_VERSION, "kind": kind,
            "config_digest": digest}


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, digest: str, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# tool=fdin {__version__} config_digest={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _emit_json(doc: dict, out: str | None) -> None:
    if out:
        _write_json(Path(out), doc)
    else:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _region_names(model):
    n = model.n_regions
    return FACE_REGION_NAMES if n == len(FACE_REGION_NAMES) else [f"region {k + 1}" for k in range(n)]


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = preset(args.preset, seed=args.seed, n_samples=args.n_samples, sigma=args.sigma)
    data = generate(spec)
    doc = spec.to_dict()
    side = _stamp(config_digest(doc), "dataset") | {"synthetic_spec": doc}
    write_dataset(data, args.out, dtype=args.dtype, sidecar=side)
    log.info("wrote %d sequences to %s", len(data), args.out)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    m, t = run.model.to_dict(), run.train.to_dict()
    if getattr(args, "variant", None):
        m.update(VARIANTS[args.variant])
    for key, dest in (("task", m), ("dropout", m)):
        if getattr(args, key, None) is not None:
            dest[key] = getattr(args, key)
    for key in ("epochs", "batch_size", "lr", "optimizer", "seed", "precision"):
        if getattr(args, key, None) is not None:
            t[key] = getattr(args, key)
    doc = run.to_dict() | {"model": m, "train": t}
    for key in ("data", "out", "folds", "fold_seed", "jobs"):
        if getattr(args, key, None) is not None:
            doc[key] = getattr(args, key)
    return RunConfig.from_dict(doc)


def _check_task(data, task: str, n_classes: int) -> None:
    labels = np.array([s.label for s in data])
    if task == "classification":
        if not np.all(labels == np.round(labels)) or labels.min() < 0 or labels.max() >= n_classes:
            raise DatasetFormatError(f"classification needs integer labels in [0, {n_classes}); "
                                     f"got values in [{labels.min()}, {labels.max()}]")


def cmd_train(args) -> int:
    run = _run_config(args)
    if not run.data or not run.out:
        raise UsageError("train needs --data and --out (flags or config file)")
    data = read_dataset(run.data)
    _check_task(data, run.model.task, run.model.n_classes)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = run.model.digest()
    run_doc = run.to_dict()
    base = _stamp(digest, "train") | {"run_config": run_doc, "run_digest": run.digest(),
                                      "variant": run.model.variant_name()}
    if run.folds:
        split, results = cross_validate(data, run.model, run.train, k=run.folds,
                                        fold_seed=run.fold_seed, jobs=run.jobs)
        subjects = [s.subject_id for s in data]
        for r in results:
            fdir = out / f"fold_{r.fold:02d}"
            fdir.mkdir(exist_ok=True)
            _save_run(fdir, r.model, r.losses, digest, r.report.to_dict(), base)
        summary = base | {"kind": "cv-summary", "pooled": pooled_summary(results),
                          "fold_audit_violations": split.audit(subjects),
                          "folds": [{"fold": r.fold, "n_test": r.report.n_test,
                                     "mae": r.report.mae, "accuracy": r.report.accuracy}
                                    for r in results]}
        _write_json(out / "summary.json", summary)
        log.info("cross-validation summary: %s", json.dumps(summary["pooled"]))
        return EXIT_OK
    res = train(data, run.model, run.train,
                progress=lambda e, l: log.info("epoch %d loss %.6g", e + 1, l))
    _save_run(out, res.model, res.losses, digest, evaluate(res.model, data).to_dict(), base)
    log.info("wrote checkpoint to %s", out / "model.ckpt")
    return EXIT_OK


def _save_run(out: Path, model, losses, digest, train_report, base) -> None:
    save_model(model, out / "model.ckpt", meta={"tool": "fdin", "version": __version__})
    _write_csv(out / "loss.csv", digest, ["epoch", "loss"],
               [(k + 1, repr(float(v))) for k, v in enumerate(losses)])
    _write_json(out / "report.json", base | {"losses": [float(v) for v in losses],
                                             "report": train_report})


def _load(args):
    expect = None
    if getattr(args, "config", None):
        expect = RunConfig.load(args.config).model.digest()
    elif getattr(args, "expect_digest", None):
        expect = args.expect_digest
    model, _ = load_model(args.ck, expect_digest=expect)
    data = read_dataset(args.data)
    return model, data


def cmd_eval(args) -> int:
    model, data = _load(args)
    _check_task(data, model.config.task, model.config.n_classes)
    report = evaluate(model, data)
    doc = _stamp(model.config.digest(), "eval") | {"report": report.to_dict()}
    _emit_json(doc, args.out)
    metric = f"MAE {report.mae:.4f}" if report.mae is not None else f"accuracy {report.accuracy:.4f}"
    log.info("%s on %d sequences", metric, report.n_test)
    return EXIT_OK


def cmd_interpret(args) -> int:
    model, data = _load(args)
    n = model.n_regions
    if not 2 <= args.ni <= n:
        raise UsageError(f"--ni must lie in [2, {n}] for this model, got {args.ni}")
    groups = None
    if args.group_by:
        if not args.bins:
            raise UsageError("--group-by label-bins needs a bin list such as 13-19,20-36,66+")
        groups = label_bins(args.bins)
    result = rank_relations(model, data, groups, args.ni)
    names = _region_names(model)
    digest = model.config.digest()
    doc = _stamp(digest, "ranking") | {
        "n_i": args.ni, "skipped_groups": result.skipped,
        "groups": [{"group": gr.name, "n_sequences": gr.n_sequences,
                    "mean_importance": gr.mean_importance.tolist()} | gr.subsets.to_dict(names)
                   for gr in result.groups]}
    prefix = Path(args.out)
    _write_json(prefix.with_suffix(".json"), doc)
    rows = []
    for gr in result.groups:
        for row in gr.subsets.rows(names)[:args.top or None]:
            rows.append((gr.name, row["rank"], row["regions"], row["names"], repr(row["chi"])))
    _write_csv(prefix.with_suffix(".csv"), digest, ["group", "rank", "regions", "names", "chi"], rows)
    for gr in result.groups:
        top = ", ".join(f"{{{format_regions(s)}}} {v:.4f}" for s, v in gr.subsets.top(3))
        log.info("%s (%d sequences): %s", gr.name, gr.n_sequences, top)
    for name in result.skipped:
        log.info("group %s has no sequences; skipped", name)
    return EXIT_OK


def cmd_perturb(args) -> int:
    model, data = _load(args)
    digest = model.config.digest()
    if args.mode == "zero":
        targets = [parse_regions(t) for t in (args.regions or [])]
        targets = [t for t in targets if t]
        report = perturb_zero(model, data, targets)
        doc = report.to_dict()
        entries = report.entries
    else:
        if args.region is None or args.donor_index is None:
            raise UsageError("--mode swap needs --region and --donor-index")
        if not 0 <= args.donor_index < len(data):
            raise UsageError(f"--donor-index must lie in [0, {len(data)})")
        (region,) = parse_regions(str(args.region))
        donor = data[args.donor_index]
        picked = [args.index] if args.index is not None else range(len(data))
        rows = [perturb_swap(model, data[i], donor, region, donor=args.donor_index) for i in picked]
        errors = np.concatenate([e.errors for e in rows])
        deltas = np.concatenate([e.deltas for e in rows])
        entry = PerturbationEntry((region,), "swap", errors, deltas, args.donor_index)
        base = errors - deltas
        doc = {"baseline_errors": base.tolist(), "baseline_error": float(base.mean()),
               "n": int(base.size), "sample_indices": list(picked), "entries": [entry.to_dict()]}
        doc["baseline_stderr"] = standard_error(base)
        entries = [entry]
    doc = _stamp(digest, f"perturb-{args.mode}") | doc
    prefix = Path(args.out)
    _write_json(prefix.with_suffix(".json"), doc)
    cols = ["regions", "kind", "donor", "mean_error", "stderr_error", "mean_delta",
            "stderr_delta", "mean_abs_delta", "n"]
    _write_csv(prefix.with_suffix(".csv"), digest, cols,
               [[e.to_dict()[c] if c != "donor" or e.donor is not None else "" for c in cols]
                for e in entries])
    log.info("baseline error %.4f", doc["baseline_error"])
    for e in entries:
        log.info("%s {%s}: error %.4f (delta %+.4f)", e.kind, format_regions(e.regions),
                 e.mean_error, float(e.deltas.mean()))
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdin", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"fdin {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic planted-relation dataset")
    g.add_argument("--preset", choices=sorted(PRESETS), default="planted-pair")
    g.add_argument("--out", required=True, help="dataset path; the spec goes to <out>.json")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-samples", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model or run subject-disjoint cross-validation",
                       description="Writes model.ckpt, loss.csv (epoch,loss) and report.json; "
                                   "with --folds K, one such set per fold_NN/ plus summary.json.")
    t.add_argument("--config", help="JSON run config; flags override its values")
    t.add_argument("--data")
    t.add_argument("--out", help="output directory")
    t.add_argument("--task", choices=("age", "gender", "regression", "classification"))
    t.add_argument("--variant", choices=sorted(VARIANTS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--dropout", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--precision", choices=("float64", "float32"))
    t.add_argument("--folds", type=int)
    t.add_argument("--fold-seed", type=int)
    t.add_argument("--jobs", type=int, help="parallel fold workers")
    t.set_defaults(func=cmd_train)

    def loaded(sp):
        sp.add_argument("--ck", required=True, help="checkpoint file")
        sp.add_argument("--data", required=True)
        sp.add_argument("--config", help="refuse the checkpoint unless its config digest matches")
        sp.add_argument("--expect-digest", help="refuse unless the checkpoint digest equals this")

    e = sub.add_parser("eval", help="MAE or accuracy of a checkpoint on a dataset")
    loaded(e)
    e.add_argument("--out", help="report path (default: standard output)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("interpret", help="rank N_I-region subsets by relational importance",
                       description="Writes <out>.json and <out>.csv (group,rank,regions,names,chi).")
    loaded(i)
    i.add_argument("--ni", type=int, default=2, help="subset size")
    i.add_argument("--group-by", choices=("label-bins",), help="average importance within label groups")
    i.add_argument("bins", nargs="?", help="label bins such as 13-19,20-36,37-65,66+")
    i.add_argument("--top", type=int, default=0, help="rows per group in the CSV (0: all)")
    i.add_argument("--out", required=True, help="output prefix")
    i.set_defaults(func=cmd_interpret)

    q = sub.add_parser("perturb", help="zero or swap local dynamic features and re-estimate",
                       description="Writes <out>.json (per-sample values) and <out>.csv (one row "
                                   "per target).")
    loaded(q)
    q.add_argument("--mode", choices=("zero", "swap"), required=True)
    q.add_argument("--regions", action="append",
                   help="1-based region set zeroed jointly, e.g. 4,8; repeat for more sets")
    q.add_argument("--region", type=int, help="1-based region to swap")
    q.add_argument("--donor-index", type=int, help="0-based dataset index of the donor sequence")
    q.add_argument("--index", type=int, help="only perturb this 0-based sequence (swap mode)")
    q.add_argument("--out", required=True, help="output prefix")
    q.set_defaults(func=cmd_perturb)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="fdin: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DatasetFormatError, CheckpointError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (GraphError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    finally:
        set_precision("float64")


if __name__ == "__main__":
    sys.exit(main())
