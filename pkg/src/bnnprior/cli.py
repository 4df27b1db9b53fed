"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 file I/O error,
4 numerical failure. Relative output paths are placed under
``$BNNPRIOR_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import checkpoint, metrics
from .config import load_config
from .data.container import load_dataset, save_dataset
from .errors import BnnPriorError, DegenerateLabels, FormatError, InvalidConfig, NumericalFailure
from .experiments import TASKS, Split, ensemble_size_sweep, task_from_options
from .family import GaussianMixturePrior, IsotropicPrior, sample_prior
from .losses import DomainLossSpec
from .nn import ArchSpec
from .posterior import Ensemble, lagrangian_train, sgld_sample, sgld_sample_mixture
from .prior import train_prior, train_swag_prior
from .rng import child_seed, derive_rng
from .transfer import transfer

log = logging.getLogger("bnnprior")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "BNNPRIOR_OUTPUT_ROOT"
SPLITS = ("train", "val", "test")


class UsageError(BnnPriorError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# paths and files ---------------------------------------------------------

def out_path(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def sidecar(path: str, suffix: str) -> str:
    base, _ = os.path.splitext(path)
    return base + suffix


def require(path: str, what: str) -> str:
    if not path or not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def split_file(path: str, split: str) -> str:
    """A directory resolves to its ``<split>.bnnd`` file; a file is used as is."""
    if os.path.isdir(path):
        path = os.path.join(path, f"{split}.bnnd")
    return require(path, f"{split} dataset")


def write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_json(path: str, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class Dataset:
    """One split loaded from a BNNDATA file."""

    def __init__(self, path: str):
        arrays, meta = load_dataset(path)
        self.path = path
        self.meta = meta
        self.X = arrays["X"].astype(np.float64)
        self.y = arrays["y"].astype(np.float64)
        self.masks = arrays.get("masks")
        if meta.get("label_kind") == "class":
            self.y = self.y.astype(np.int64)
        self.arch = ArchSpec.from_dict(meta["arch"])
        self.spec = DomainLossSpec.from_dict(meta["loss"])
        self.task = meta["task"]

    def __len__(self):
        return len(self.X)


def _check_arch(arch: ArchSpec, data: Dataset) -> None:
    if arch.input_dim != data.X.shape[1]:
        raise UsageError(f"network expects {arch.input_dim} inputs, dataset has {data.X.shape[1]} features")


def _spec_for(data: Dataset, cfg) -> DomainLossSpec:
    if data.spec.kind == "background" and "loss" in cfg.values:
        return DomainLossSpec("background", background_output=cfg.loss().background_output)
    return data.spec


def _load_prior(path: str):
    require(path, "prior checkpoint")
    return checkpoint.load_prior(path)


# commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    overrides = {"run": {}}
    if args.task:
        if args.task not in TASKS:
            raise UsageError(f"unknown task {args.task!r}; expected one of {TASKS}")
        overrides["run"]["task"] = args.task
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    run = cfg.run
    task = task_from_options(run.task, run.seed, cfg.data())
    outdir = out_path(args.out)
    os.makedirs(outdir, exist_ok=True)
    label_kind = "value" if task.arch.output_head == "identity" else "class"
    manifest = {"task": run.task, "seed": run.seed, "data": cfg.data(), "files": {}}
    for name, split in (("train", task.train), ("val", task.unlabeled), ("test", task.test)):
        arrays = {"X": split.X, "y": split.y}
        if split.masks is not None:
            arrays["masks"] = np.asarray(split.masks, dtype=bool)
        meta = {"task": run.task, "split": name, "seed": run.seed, "rows": len(split),
                "arch": task.arch.to_dict(), "loss": task.spec.to_dict(), "label_kind": label_kind,
                "generator": task.metadata}
        path = os.path.join(outdir, f"{name}.bnnd")
        save_dataset(path, arrays, meta)
        manifest["files"][name] = {"file": f"{name}.bnnd", "rows": len(split),
                                   "sha256": checkpoint.file_sha256(path)}
    write_json(os.path.join(outdir, "manifest.json"), manifest)
    print(f"wrote {run.task} data to {outdir}: " + ", ".join(
        f"{k}={v['rows']}" for k, v in manifest["files"].items()))
    return EXIT_OK


def cmd_train_prior(args) -> int:
    overrides = {"run": {"seed": args.seed}} if args.seed is not None else {}
    data = Dataset(split_file(args.data, "val"))
    overrides.setdefault("run", {})["task"] = data.task
    cfg = load_config(args.config, overrides)
    seed = cfg.run.seed
    spec = _spec_for(data, cfg)
    out = out_path(args.out)
    meta = {"task": data.task, "seed": seed, "phi": spec.describe(), "prior_mode": cfg.run.prior_mode,
            "data_sha256": checkpoint.file_sha256(data.path)}
    if cfg.run.prior_mode == "swag":
        pc = cfg.prior()
        sc = cfg.swag()
        q = train_swag_prior(data.arch, data.X, spec, sc, pc.tau, pc.base_prior_variance,
                             derive_rng(seed, "swag-prior"), masks=data.masks)
        meta["config"] = {"swag": sc.to_dict(), "tau": pc.tau, "base_prior_variance": pc.base_prior_variance}
        curve = []
    else:
        pc = cfg.prior()
        q, curve = train_prior(data.arch, data.X, spec, pc, derive_rng(seed, "prior"), masks=data.masks)
        meta["config"] = pc.to_dict()
    checkpoint.save_prior(q, out, meta)
    rows = [(r["epoch"], repr(r["objective"]), repr(r["kl"]), repr(r["mean_phi"])) for r in curve]
    write_text(sidecar(out, ".curve.csv"), rows_csv(["epoch", "objective", "kl", "mean_phi"], rows))
    if curve:
        from .plotting import curve_figure
        curve_figure(curve, sidecar(out, ".curve.png"))
    print(f"wrote prior {out}" + (f" (final objective {curve[-1]['objective']:.6g}, kl {curve[-1]['kl']:.6g})"
                                  if curve else ""))
    return EXIT_OK


def _prior_and_arch(args, data: Dataset):
    if args.isotropic is not None:
        if args.prior:
            raise UsageError("give either --prior or --isotropic, not both")
        if not args.isotropic > 0:
            raise UsageError("--isotropic variance must be positive")
        arch = ArchSpec.parse(args.arch, data.arch.activation, data.arch.output_head) if args.arch else data.arch
        return IsotropicPrior(args.isotropic), arch, {"prior": f"isotropic({args.isotropic!r})"}
    if not args.prior:
        raise UsageError("--prior or --isotropic is required")
    q, meta = _load_prior(args.prior)
    if q.arch is None:
        raise UsageError("prior checkpoint carries no architecture")
    return q, q.arch, {"prior": os.path.basename(args.prior), "prior_sha256": checkpoint.file_sha256(args.prior)}


def cmd_sample_prior(args) -> int:
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    data = Dataset(split_file(args.phi_eval, "test"))
    prior, arch, _ = _prior_and_arch(args, data)
    _check_arch(arch, data)
    rng = derive_rng(args.seed, "sample-prior")
    values = []
    for _ in range(args.n):
        w = sample_prior(prior, rng, arch.n_params)
        values.append(metrics.mean_phi(arch, w, data.X, data.spec, mode="per_sample", masks=data.masks))
    rows = [(i, repr(v), "") for i, v in enumerate(values)]
    if values:
        m, se = metrics.mean_se(values)
        rows.append(("mean", repr(m), repr(se)))
        print(f"mean phi over {len(values)} samples: {m:.6g} +/- {se:.3g}")
    write_text(out_path(args.out), rows_csv(["sample_id", "phi", "se"], rows))
    return EXIT_OK


def cmd_sample_posterior(args) -> int:
    data = Dataset(split_file(args.data, "train"))
    overrides = {"run": {"task": data.task}}
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    prior, arch, prov = _prior_and_arch(args, data)
    _check_arch(arch, data)
    sc = cfg.sgld()
    if args.n_samples is not None:
        from dataclasses import replace
        sc = replace(sc, n_samples=args.n_samples)
    seed = cfg.run.seed
    if isinstance(prior, GaussianMixturePrior) and prior.K > 1:
        ens = sgld_sample_mixture(arch, data.X, data.y, prior, sc, child_seed(seed, "sgld"), jobs=args.jobs)
    else:
        ens = sgld_sample(arch, data.X, data.y, prior, sc, derive_rng(seed, "sgld"))
    out = out_path(args.out)
    checkpoint.save_ensemble(ens, out, {**prov, "method": "sgld", "seed": seed, "task": data.task,
                                        "sgld": vars(sc)})
    print(f"wrote {len(ens)}-member ensemble to {out}")
    return EXIT_OK


def _member_score(arch, w, data, metric):
    try:
        return metrics.task_scores(arch, w, data.X, data.y, metric)
    except DegenerateLabels:
        return math.nan


def cmd_evaluate(args) -> int:
    data = Dataset(split_file(args.data, "test"))
    if len(data) == 0:
        raise UsageError("evaluation set is empty")
    cfg = load_config(args.spec, {"run": {"task": data.task}})
    spec = _spec_for(data, cfg)
    labels = args.label or []
    report = metrics.MetricsReport(data.task, phi_mode="ensemble")
    clouds = {}
    task_metrics = {"pendulum": ["l1"], "decoy": ["accuracy"],
                    "fairness": ["accuracy", "auroc"], "clinical": ["auroc", "accuracy"]}[data.task]
    for i, path in enumerate(args.ensemble):
        require(os.path.join(path, "manifest.json"), "ensemble manifest")
        ens, manifest = checkpoint.load_ensemble(path)
        _check_arch(ens.arch, data)
        ens = Ensemble(ens.arch, ens.members, args.averaging or ens.averaging)
        method = labels[i] if i < len(labels) else os.path.basename(os.path.normpath(path))
        seed = int(manifest.get("seed", 0))
        for m in task_metrics:
            try:
                value = metrics.task_scores(ens.arch, ens, data.X, data.y, m)
            except DegenerateLabels as exc:
                warnings.warn(f"{m} undefined on this split: {exc}")
                value = math.nan
            report.add(method, seed, m, value)
        report.add(method, seed, "phi", metrics.mean_phi(ens.arch, ens, data.X, spec, "ensemble", data.masks))
        report.add(method, seed, "phi_per_sample",
                   metrics.mean_phi(ens.arch, ens, data.X, spec, "per_sample", data.masks))
        if args.pareto:
            head = task_metrics[0]
            pts = []
            for w in ens.members:
                s = _member_score(ens.arch, w, data, head)
                s = -s if head == "l1" else s
                pts.append((s, metrics.mean_phi(ens.arch, w, data.X, spec, "per_sample", data.masks)))
            clouds[method] = pts
    out = out_path(args.out)
    write_text(out, report.to_csv())
    write_text(sidecar(out, ".summary.csv"), report.summary_csv())
    if args.pareto:
        from .plotting import pareto_figure
        write_text(sidecar(out, ".pareto.csv"), metrics.pareto_csv(clouds))
        xlabel = "-L1" if task_metrics[0] == "l1" else task_metrics[0]
        pareto_figure(clouds, sidecar(out, ".pareto.png"), xlabel=xlabel, ylabel=spec.describe())
    for (method, metric), (m, se, n) in sorted(report.summary().items()):
        print(f"{method:>20s} {metric:>15s} {m:.6g} +/- {se:.3g} (n={n})")
    return EXIT_OK


def cmd_transfer_prior(args) -> int:
    source, smeta = _load_prior(args.source)
    if source.arch is None:
        raise UsageError("source checkpoint carries no architecture")
    probe = Dataset(split_file(args.probe, "val"))
    overrides = {"run": {"task": probe.task}}
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    try:
        target = ArchSpec.parse(args.target_arch, source.arch.activation, source.arch.output_head)
    except (ValueError, BnnPriorError) as exc:
        raise UsageError(f"bad --target-arch {args.target_arch!r}: {exc}") from exc
    if target.input_dim != source.arch.input_dim or target.output_dim != source.arch.output_dim:
        raise UsageError("target architecture must keep the source's input and output sizes")
    tc = cfg.transfer(method=args.method, init_from_source=True if args.init_from_source else None)
    X = probe.X[:tc.probe_size]
    q, diag = transfer(source, target, tc, X, derive_rng(cfg.run.seed, f"transfer-{tc.method}"), source.arch)
    chain = list(smeta.get("provenance", []))
    chain.append({"source_sha256": checkpoint.file_sha256(args.source), "method": tc.method})
    meta = {"task": smeta.get("task", probe.task), "seed": cfg.run.seed, "phi": smeta.get("phi"),
            "provenance": chain, "config": {k: v for k, v in tc.to_dict().items() if k != "swag"}}
    out = out_path(args.out)
    checkpoint.save_prior(q, out, meta)
    final = diag[-1] if isinstance(diag, list) and diag else diag
    print(f"wrote transferred prior {out} (method {tc.method}, final objective {final})")
    return EXIT_OK


def cmd_baseline_lagrangian(args) -> int:
    if args.lam < 0:
        raise UsageError("--lambda must be non-negative")
    if args.ensemble < 1:
        raise UsageError("--ensemble must be >= 1")
    data = Dataset(split_file(args.data, "train"))
    unl = Dataset(split_file(args.unlabeled, "val")) if args.unlabeled else None
    overrides = {"run": {"task": data.task}}
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    lc = cfg.lagrangian()
    spec = _spec_for(data, cfg)
    members = []
    for k in range(args.ensemble):
        rng = derive_rng(cfg.run.seed, f"lagrangian-{k}")
        members.append(lagrangian_train(data.arch, data.X, data.y, None if unl is None else unl.X, spec,
                                        args.lam, lc, rng, masks_unlabeled=None if unl is None else unl.masks))
    ens = Ensemble(data.arch, members)
    out = out_path(args.out)
    method = "supervised" if args.lam == 0 else ("lagrangian_ens" if args.ensemble > 1 else "lagrangian")
    checkpoint.save_ensemble(ens, out, {"method": method, "lambda": args.lam, "seed": cfg.run.seed,
                                        "task": data.task})
    print(f"wrote {method} ensemble ({len(ens)} members) to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .plotting import sweep_figure
    train = Dataset(split_file(args.data, "train"))
    unl = Dataset(split_file(args.data, "val"))
    test = Dataset(split_file(args.data, "test"))
    cfg = load_config(args.config, {"run": {"task": train.task}})
    metric = {"pendulum": "l1", "decoy": "accuracy", "fairness": "accuracy", "clinical": "auroc"}[train.task]
    arch, spec = train.arch, _spec_for(train, cfg)
    defaults = {"ensemble-size": "1,2,3,5,10,15,20,25", "components": "1,2,3,4,5", "rank": "5,10,20,30"}
    values = [int(v) for v in (args.values or defaults[args.sweep]).split(",")]
    rows = []
    for s in range(args.seeds):
        seed = cfg.run.seed + s
        if args.sweep == "ensemble-size":
            q, _ = train_prior(arch, unl.X, spec, cfg.prior(), derive_rng(seed, "prior"), masks=unl.masks)
            scores = ensemble_size_sweep(arch, q, Split(train.X, train.y), Split(test.X, test.y), cfg.sgld(),
                                         values, metric, derive_rng(seed, "sgld"))
            rows.extend((args.sweep, k, seed, metric, v) for k, v in scores)
            continue
        for v in values:
            if args.sweep == "components":
                pc = cfg.prior()
                q = train_swag_prior(arch, unl.X, spec, replace(cfg.swag(), components=v), pc.tau,
                                     pc.base_prior_variance, derive_rng(seed, "swag-prior"), masks=unl.masks)
                ens = sgld_sample_mixture(arch, train.X, train.y, q, cfg.sgld(), child_seed(seed, "sgld"),
                                          jobs=args.jobs)
            else:
                q, _ = train_prior(arch, unl.X, spec, replace(cfg.prior(), rank=v), derive_rng(seed, "prior"),
                                   masks=unl.masks)
                ens = sgld_sample(arch, train.X, train.y, q, cfg.sgld(), derive_rng(seed, "sgld"))
            rows.append((args.sweep, v, seed, metric, metrics.task_scores(arch, ens, test.X, test.y, metric)))
            rows.append((args.sweep, v, seed, "phi", metrics.mean_phi(arch, ens, test.X, spec, masks=test.masks)))
    out = out_path(args.out)
    write_text(out, rows_csv(["sweep", "value", "seed", "metric", "score"],
                             [(a, b, c, d, repr(float(e))) for a, b, c, d, e in rows]))
    series = {}
    for name in sorted({r[3] for r in rows}):
        xs = sorted({r[1] for r in rows if r[3] == name})
        stats = [metrics.mean_se([r[4] for r in rows if r[3] == name and r[1] == x]) for x in xs]
        series[name] = (xs, [m for m, _ in stats], [se for _, se in stats])
    if metric in series:
        sweep_figure({metric: series[metric]}, sidecar(out, ".png"), args.sweep, metric)
    print(f"wrote {len(rows)} sweep rows to {out}")
    return EXIT_OK


# parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bnnprior", description="Informative priors for Bayesian neural networks.")
    p.add_argument("--jobs", type=int, default=1, help="worker bound for independent chains")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate train/val/test dataset files")
    g.add_argument("--task", help=f"one of {', '.join(TASKS)}")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-prior", help="learn an informative prior from unlabeled data")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="dataset directory or unlabeled split file")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_prior)

    s = sub.add_parser("sample-prior", help="per-sample domain loss of prior draws")
    s.add_argument("--prior")
    s.add_argument("--isotropic", type=float, metavar="VARIANCE")
    s.add_argument("--arch", help="layer sizes for --isotropic, e.g. 4,64,64,4")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--phi-eval", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_prior)

    sp = sub.add_parser("sample-posterior", help="SGLD posterior ensemble")
    sp.add_argument("--prior")
    sp.add_argument("--isotropic", type=float, metavar="VARIANCE")
    sp.add_argument("--arch")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample_posterior)

    e = sub.add_parser("evaluate", help="metrics CSV for one or more ensembles")
    e.add_argument("--ensemble", required=True, action="append")
    e.add_argument("--label", action="append", help="method name per --ensemble")
    e.add_argument("--data", required=True)
    e.add_argument("--spec", help="config file whose [loss] section overrides the dataset's")
    e.add_argument("--averaging", choices=("logits", "predictions"))
    e.add_argument("--pareto", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    tr = sub.add_parser("transfer-prior", help="move a prior to another architecture")
    tr.add_argument("--source", required=True)
    tr.add_argument("--target-arch", required=True)
    tr.add_argument("--method", required=True)
    tr.add_argument("--probe", required=True)
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--init-from-source", action="store_true")
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_transfer_prior)

    b = sub.add_parser("baseline-lagrangian", help="penalized point-estimate baseline")
    b.add_argument("--data", required=True)
    b.add_argument("--unlabeled")
    b.add_argument("--lambda", dest="lam", type=float, required=True)
    b.add_argument("--config")
    b.add_argument("--seed", type=int)
    b.add_argument("--ensemble", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline_lagrangian)

    a = sub.add_parser("ablate", help="ensemble size / mixture size / rank sweeps")
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--sweep", required=True, choices=("ensemble-size", "components", "rank"))
    a.add_argument("--values", help="comma-separated sweep values")
    a.add_argument("--seeds", type=int, default=1)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if getattr(args, "method", None) is not None:
            args.method = args.method.replace("-", "_")
        return args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BnnPriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
