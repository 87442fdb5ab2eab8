"""Command-line driver: ``rots {train, eval, distance, bench-pl, grad-check}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numeric failure
or divergence, 3 file I/O or checkpoint loading.
"""

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from rots import __version__, config as cfgmod, gak
from rots.baselines import AttackSpec, adv_train, clean_train, eval_robust_accuracy, stn_train
from rots.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from rots.data import align_labels, load_dataset, load_series, synth_two_class, znormalize
from rots.errors import DivergenceError, NumericError, RotsError, StateError
from rots.gradcheck import SCOPES, TOLERANCE, run_scope
from rots.net import ArchSpec, init_model
from rots.plbench import PlProblemSpec, build_pl_problem, primal_minimum, run_bench
from rots.scagda import ScagdaParams
from rots.training import RotsHyper, rots_train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
TEST_SEED_OFFSET = 1000
ACCURACY_COLUMNS = ("level", "mean_acc", "min_acc", "max_acc")
DISTANCE_COLUMNS = ("dtw", "k_gak", "d_gak", "prop1_gap", "prop1_bound")
METRIC_COLUMNS = ("P_star", "final_gap", "final_ma_error", "tail_correlation")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_manifest(out_dir, command, cfg, seed, extra=None):
    cfg_seed = dataclasses.replace(cfg, seeds=[seed]) if seed is not None else cfg
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfgmod.to_dict(cfg_seed),
        "config_sha256": cfgmod.config_hash(cfg_seed),
    }
    if extra:
        manifest.update(extra)
    with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# datasets and models

def build_datasets(cfg, seed, base_dir="."):
    """``(train, test)`` for one seed; ``test`` is None when no test data is configured."""
    ds = cfg.dataset
    if ds.synth is not None:
        sp = ds.synth
        train = synth_two_class(sp.n, sp.T, sp.noise_sigma, seed, "train")
        test = synth_two_class(sp.n_test, sp.T, sp.noise_sigma, seed + TEST_SEED_OFFSET, "test")
    else:
        base = Path(base_dir)
        train = load_dataset(base / ds.train_path, ds.format, ds.channels, "train")
        test = None
        if ds.test_path is not None:
            test = align_labels(load_dataset(base / ds.test_path, ds.format, ds.channels, "test"),
                                train)
    if ds.normalize:
        train = znormalize(train)
        test = znormalize(test) if test is not None else None
    return train, test


def build_arch(cfg, dataset):
    return ArchSpec.parse(cfg.arch, (dataset.channels, dataset.length), dataset.num_classes)


def rots_hyper(cfg, seed):
    fields = dataclasses.asdict(cfg.rots)
    return RotsHyper(**fields, eta=cfg.train.eta, s=cfg.train.batch_size,
                     K=cfg.train.iterations, seed=seed)


def train_one(cfg, train, seed):
    """Returns ``(model, trace, hyper_record)`` for the configured method."""
    model = init_model(build_arch(cfg, train), seed)
    tr = cfg.train
    if cfg.method == "rots":
        if tr.optimizer != "sgd":
            raise cfgmod.ConfigError("robust training uses sgd", "train.optimizer")
        hyper = rots_hyper(cfg, seed)
        model, _, trace = rots_train(train, model, hyper)
        record = hyper.record()
        record["nu"] = trace.flags["nu"]
        return model, trace, record
    common = dict(eta=tr.eta, s=tr.batch_size, seed=seed, optimizer=tr.optimizer)
    record = {"method": cfg.method, "eta": tr.eta, "s": tr.batch_size, "K": tr.iterations,
              "optimizer": tr.optimizer, "seed": seed}
    if cfg.method == "clean":
        model, trace = clean_train(train, model, tr.iterations, **common)
    elif cfg.method in ("adv_fgs", "adv_pgd"):
        a = cfg.attack
        spec = AttackSpec(cfg.method[4:], a.epsilon, a.sigma, a.steps, a.alpha, seed)
        model, trace = adv_train(train, model, spec, epochs=0, K=tr.iterations, **common)
        record["attack"] = dataclasses.asdict(spec)
    else:
        model, trace = stn_train(train, model, cfg.stn.sigma, epochs=0, weight=cfg.stn.weight,
                                 K=tr.iterations, **common)
        record["stn"] = dataclasses.asdict(cfg.stn)
    return model, trace, record


# subcommands

def _seed_dir(cfg, seed):
    d = Path(cfg.output_dir) / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(cfg, base_dir="."):
    from rots.plotting import plot_trace
    for seed in cfg.seeds:
        out = _seed_dir(cfg, seed)
        train, _ = build_datasets(cfg, seed, base_dir)
        try:
            model, trace, record = train_one(cfg, train, seed)
        except DivergenceError as exc:
            if exc.trace is not None:
                exc.trace.to_csv(out / "trace.csv")
            write_manifest(out, "train", cfg, seed, {"status": "diverged"})
            raise
        trace.to_csv(out / "trace.csv")
        save_checkpoint(out / "checkpoint.npz", model, record, len(trace), cfg.method)
        write_manifest(out, "train", cfg, seed, {"status": "ok", "hyper": record})
        plot_trace(trace, out / "trace.png", title=f"{cfg.method}, seed {seed}")
        print(f"seed {seed}: final objective {trace.column('obj')[-1]:.6g} -> {out}")
    return EXIT_OK


def aggregate_accuracy(per_seed_rows):
    """Pool the per-repeat values of every seed at each level."""
    out = []
    for level_rows in zip(*per_seed_rows):
        values = [v for r in level_rows for v in r["values"]]
        out.append({"level": level_rows[0]["level"], "mean_acc": float(np.mean(values)),
                    "min_acc": float(np.min(values)), "max_acc": float(np.max(values)),
                    "values": values})
    return out


def cmd_eval(cfg, checkpoint=None, base_dir="."):
    from rots.plotting import plot_accuracy
    if checkpoint is not None and len(cfg.seeds) != 1:
        raise cfgmod.ConfigError("an explicit checkpoint needs exactly one seed", "seeds")
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    tables = {ea.kind: [] for ea in cfg.eval.attacks}
    for seed in cfg.seeds:
        train, test = build_datasets(cfg, seed, base_dir)
        if test is None:
            print("warning: no test split configured; evaluating on the training split",
                  file=sys.stderr)
            test = train
        path = Path(checkpoint) if checkpoint else root / f"seed_{seed}" / "checkpoint.npz"
        model, _ = load_checkpoint(path, expect_arch=build_arch(cfg, train))
        out = _seed_dir(cfg, seed)
        for ea in cfg.eval.attacks:
            spec = AttackSpec(ea.kind, steps=ea.steps, alpha=ea.alpha, seed=seed)
            rows = eval_robust_accuracy(model, test, spec, ea.levels, cfg.eval.repeats, seed)
            write_csv(out / f"accuracy_{ea.kind}.csv", ACCURACY_COLUMNS, rows)
            tables[ea.kind].append(rows)
    for kind, per_seed in tables.items():
        rows = aggregate_accuracy(per_seed)
        write_csv(root / f"accuracy_{kind}.csv", ACCURACY_COLUMNS, rows)
        plot_accuracy({cfg.method: rows}, root / f"accuracy_{kind}.png",
                      xlabel="sigma" if kind == "gaussian" else "epsilon", title=kind)
        summary = ", ".join(f"{r['level']:g}: {r['mean_acc']:.3f}" for r in rows)
        print(f"{kind}: {summary}")
    write_manifest(root, "eval", cfg, None, {"checkpoint": str(checkpoint) if checkpoint else None})
    return EXIT_OK


def cmd_distance(file_a, file_b, nu=1.0, p=2, band_width=None, prop1=False):
    x, x2 = load_series(file_a), load_series(file_b)
    params = gak.GakParams(nu, p, band_width)
    dtw, _ = gak.dtw_distance(x, x2, p, band_width)
    logk = gak.log_gak_exact(x, x2, params)
    try:
        k = gak.gak_exact(x, x2, params)
    except NumericError:
        k = math.exp(logk)  # underflows to 0; d_gak stays finite
    row = {"dtw": dtw, "k_gak": k, "d_gak": -nu * logk, "prop1_gap": None, "prop1_bound": None}
    if prop1:
        row["prop1_gap"], row["prop1_bound"] = gak.prop1_gap(x, x2, params)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(DISTANCE_COLUMNS)
    w.writerow([_fmt(row[c]) for c in DISTANCE_COLUMNS])
    return EXIT_OK


def bench_spec(cfg):
    b = dataclasses.asdict(cfg.bench)
    for key in ("problem_seed", "grid_resolution", "diag_every"):
        b.pop(key)
    return PlProblemSpec(**b)


def cmd_bench_pl(cfg):
    from rots.plotting import plot_bench
    spec = bench_spec(cfg)
    b, s = cfg.bench, cfg.scagda
    problem = build_pl_problem(spec, b.problem_seed)
    reference = primal_minimum(problem, b.grid_resolution)
    for seed in cfg.seeds:
        out = _seed_dir(cfg, seed)
        params = ScagdaParams(s.eta, s.gamma, s.beta, s.K, seed, s.first_touch, s.log_every)
        try:
            rep = run_bench(spec, params, seed, b.problem_seed, b.diag_every, b.grid_resolution,
                            reference)
        except DivergenceError as exc:
            if exc.trace is not None:
                exc.trace.to_csv(out / "bench_trace.csv")
            write_manifest(out, "bench-pl", cfg, seed, {"status": "diverged"})
            raise
        rep.trace.to_csv(out / "bench_trace.csv")
        write_csv(out / "metrics.csv", METRIC_COLUMNS, [rep.summary()])
        write_manifest(out, "bench-pl", cfg, seed,
                       {"status": "ok", "w_star": rep.w_star, "w_final": rep.w})
        plot_bench(rep.trace, out / "bench.png")
        print(f"seed {seed}: P*={rep.P_star:.6g} gap={rep.final_gap:.3g} "
              f"ma_error={rep.final_ma_error:.3g}")
    return EXIT_OK


def cmd_grad_check(scopes, seed=0):
    worst = 0.0
    print("scope,max_rel_error")
    for scope in scopes:
        err = run_scope(scope, seed)
        worst = max(worst, err)
        print(f"{scope},{err!r}")
    return EXIT_OK if worst <= TOLERANCE else EXIT_NUMERIC


# entry point

def build_parser():
    parser = _Parser(prog="rots", description="Robust training for time-series classifiers.")
    parser.add_argument("--version", action="version", version=f"rots {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="run this single seed instead of the list")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, help="worker threads (default from config)")

    common(sub.add_parser("train", help="train a classifier"), True)
    p = sub.add_parser("eval", help="robust accuracy of trained checkpoints")
    common(p, True)
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/seed_<s>/checkpoint.npz)")
    p = sub.add_parser("distance", help="DTW and GAK between two series files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--p", default="2", choices=("1", "2", "inf"))
    p.add_argument("--band", type=float, default=None, help="Sakoe-Chiba band width")
    p.add_argument("--prop1", action="store_true",
                   help="also report the DTW/GAK gap and its bound (T <= 12)")
    common(sub.add_parser("bench-pl", help="SCAGDA on the synthetic benchmark"), False)
    p = sub.add_parser("grad-check", help="finite-difference gradient checks")
    p.add_argument("scopes", nargs="*", metavar="scope",
                   help=f"any of {', '.join(SCOPES)} (default: all)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_cfg(args):
    need_dataset = args.command != "bench-pl"
    if args.config:
        cfg = cfgmod.load_config(args.config, need_dataset=need_dataset)
        base = Path(args.config).parent
    else:
        cfg = cfgmod.ExperimentConfig(dataset=cfgmod.DatasetConfig(synth=cfgmod.SynthConfig()))
        base = Path(".")
    updates = {}
    if args.seed is not None:
        updates["seeds"] = [args.seed]
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.threads is not None:
        updates["threads"] = args.threads
    cfg = cfgmod.validate(dataclasses.replace(cfg, **updates), base, need_dataset=need_dataset)
    return cfg, base


def _dispatch(args):
    if args.command == "distance":
        p = np.inf if args.p == "inf" else int(args.p)
        return cmd_distance(args.file_a, args.file_b, args.nu, p, args.band, args.prop1)
    if args.command == "grad-check":
        bad = [s for s in args.scopes if s not in SCOPES]
        if bad:
            raise UsageError(f"rots grad-check: error: unknown scope {bad[0]!r} "
                             f"(choose from {', '.join(SCOPES)})")
        return cmd_grad_check(args.scopes or list(SCOPES), args.seed)
    # every kernel is sequential, so ``threads`` is recorded in the manifest only
    cfg, base = _load_cfg(args)
    if args.command == "train":
        return cmd_train(cfg, base)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint, base)
    return cmd_bench_pl(cfg)


def main(argv=None):
    try:
        return _dispatch(build_parser().parse_args(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except CheckpointError as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, NumericError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RotsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
