"""``unfold-sc`` command line: data generation, training, evaluation and experiments.

Exit codes: 0 success, 1 validation error (bad config, unknown override key,
missing checkpoint, failed oracle property), 2 runtime failure.
"""

import argparse
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .core import save_dictionary
from .datagen import save_batch
from .theory import run_suites

log = logging.getLogger("unfold_sc")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
# Split "a=1,b.c=[1,2]" on commas that start a new key, so list values survive.
_OVERRIDE_SPLIT = re.compile(r",(?=\s*[A-Za-z_][\w.]*\s*=)")


class ValidationError(Exception):
    pass


def split_overrides(values):
    out = []
    for chunk in values or []:
        out.extend(p.strip() for p in _OVERRIDE_SPLIT.split(chunk) if p.strip())
    return out


def build_parser():
    parser = argparse.ArgumentParser(
        prog="unfold-sc", description="Sparse coding with unfolded ISTA networks and error-based thresholds."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON); defaults if omitted")
    common.add_argument("--seed", type=int, help="run seed (overrides config 'seed')")
    common.add_argument("--out", type=Path, help="output directory (overrides config 'output_dir')")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default: available CPUs)")
    common.add_argument(
        "--overrides", action="append", metavar="K=V[,K=V...]", help="dotted-key config overrides; repeatable"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "gen": "write the dictionary and frozen validation/test sets",
        "train": "train every configured variant; write checkpoints, train logs and test curves",
        "eval": "layer-wise test curves of saved checkpoints",
        "sweep": "train and evaluate along one axis (sparsity, snr, condition_number)",
        "adaptivity": "evaluate models trained on one sparsity law under the configured eval laws",
        "diagnostics": "per-layer threshold parameters and realized thresholds",
        "stereo": "photometric-stereo pipeline against l_s / l_1 baselines",
        "oracle-check": "no-false-positive, decay and two-phase property suites under oracle thresholds",
    }
    cmds = {}
    for name, text in helps.items():
        cmds[name] = sub.add_parser(name, parents=[common], help=text, description=text)
    cmds["sweep"].add_argument("--axis", required=True, choices=ex.AXES)
    for name in ("eval", "adaptivity", "diagnostics"):
        cmds[name].add_argument("--checkpoints", type=Path, help="checkpoint directory (default: <out>/checkpoints)")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    overrides = split_overrides(args.overrides)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"output_dir {out} is not writable: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ValidationError(f"output_dir {out} is not writable")
    return cfg, out


def _checkpoints(args, out, cfg):
    directory = args.checkpoints if args.checkpoints is not None else out / "checkpoints"
    return ex.load_trained(cfg, directory)


def cmd_gen(cfg, out, args):
    a = ex.build_dictionary(cfg)
    save_dictionary(out / "dictionary.bin", a, {"m": cfg.problem.m, "n": cfg.problem.n, "seed": cfg.problem.seed})
    val, test = ex.eval_sets(cfg, a)
    save_batch(out / "val.bin", val)
    save_batch(out / "test.bin", test)
    print(f"wrote dictionary {a.shape} and val/test sets of {cfg.eval_size} to {out}")
    return 0, {}


def cmd_train(cfg, out, args):
    trained = ex.train_all(cfg, out_dir=out, workers=args.workers)
    table = ex.evaluate(cfg, trained)
    table.write_csv(out / "results.csv")
    for name in trained:
        print(f"{name}: final-layer test NMSE {table.final(name, cfg.law.tag):.2f} dB")
    diverged = [name for name, (_, _, tl) in trained.items() if tl.diverged]
    return 0, {"batch_size": cfg.train.batch_size, "diverged": diverged}


def cmd_eval(cfg, out, args):
    table = ex.evaluate(cfg, _checkpoints(args, out, cfg))
    table.write_csv(out / "results.csv")
    for name in [v.name for v in cfg.variants]:
        print(f"{name}: final-layer test NMSE {table.final(name, cfg.law.tag):.2f} dB")
    return 0, {}


def cmd_sweep(cfg, out, args):
    table = ex.run_sweep(cfg, args.axis, workers=args.workers, out_dir=out)
    table.write_csv(out / f"sweep_{args.axis}.csv")
    for tag in table.tags():
        finals = ", ".join(f"{v.name} {table.final(v.name, tag):.2f}" for v in cfg.variants if table.curve(v.name, tag).size)
        print(f"{tag}: {finals}")
    return 0, {"axis": args.axis}


def cmd_adaptivity(cfg, out, args):
    trained = None
    if args.checkpoints is not None or (out / "checkpoints").exists():
        trained = _checkpoints(args, out, cfg)
    table = ex.run_adaptivity(cfg, trained=trained, workers=args.workers)
    table.write_csv(out / "adaptivity.csv")
    for tag in table.tags():
        finals = ", ".join(f"{v.name} {table.final(v.name, tag):.2f}" for v in cfg.variants)
        print(f"{tag}: {finals}")
    return 0, {}


def cmd_diagnostics(cfg, out, args):
    if args.checkpoints is not None or (out / "checkpoints").exists():
        trained = _checkpoints(args, out, cfg)
    else:
        trained = ex.train_all(cfg, out_dir=out, workers=args.workers)
    a = ex.build_dictionary(cfg)
    _, test = ex.eval_sets(cfg, a)
    table = ex.run_threshold_diagnostics([(v, p) for v, p, _ in trained.values()], a, test)
    table.write_csv(out / "diagnostics.csv")
    for v, p, _ in trained.values():
        print(f"{v.name}: std over layers of log threshold parameter {ex.log_param_std(p, v):.4f}")
    return 0, {}


def cmd_stereo(cfg, out, args):
    report = ex.run_stereo(cfg, out_dir=out, workers=args.workers)
    for method, p_e, err, degenerate in report.rows:
        print(f"p_e={p_e:g} {method}: mean angular error {err:.4g} deg ({degenerate} degenerate)")
    return 0, {}


def cmd_oracle_check(cfg, out, args):
    t = cfg.theory
    _, results = run_suites(t.m, t.n, t.s, t.bound, t.count, t.depth, t.ss_schedule, t.seed)
    with open(out / "oracle_check.txt", "w") as fh:
        for r in results:
            print(r.line())
            fh.write(r.line() + "\n")
    failed = [r.name for r in results if not r.passed]
    return (1 if failed else 0), {"failed": failed}


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "adaptivity": cmd_adaptivity,
    "diagnostics": cmd_diagnostics,
    "stereo": cmd_stereo,
    "oracle-check": cmd_oracle_check,
}


def setup_logging():
    level_name = os.environ.get("UNFOLD_SC_LOG", "info").lower()
    if level_name not in LOG_LEVELS:
        raise ValidationError(f"UNFOLD_SC_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=LOG_LEVELS[level_name], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging()
        cfg, out = resolve_config(args)
        if args.workers is None:
            args.workers = ex.default_workers()
        elif args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        with ex.Stopwatch() as sw:
            code, extra = COMMANDS[args.command](cfg, out, args)
        ex.write_manifest(out, cfg, args.command, round(sw.elapsed, 3), extra)
        return code
    except (ConfigError, ValidationError, ex.MissingCheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit code 2
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
