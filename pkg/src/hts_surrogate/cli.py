"""Command-line entry point: generate, train, sweep, eval, bench."""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys

from . import config as config_mod
from . import pipeline
from .config import ConfigError
from .emsolver import SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_SOLVER = 5

log = logging.getLogger("hts_surrogate")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk",
                        help="YAML config file, or a preset name (paper, desk); default: desk")
    common.add_argument("--out", default=None,
                        help=f"run directory (default: ${config_mod.OUT_ENV}, else output_dir from the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--seed", type=int, default=None, help="override training.seed")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS and a single worker; bit-reproducible outputs")
    common.add_argument("--dry-run", action="store_true", help="print the plan and write nothing")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hts-surrogate",
                                description="Solver-backed surrogate for HTS solenoid current density.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="solve the plan and write datasets")
    t = sub.add_parser("train", parents=[common], help="train the configured network")
    t.add_argument("--resume", default=None, help="checkpoint to start from (arch must match)")
    t.add_argument("--epochs", type=int, default=None, help="override training.max_epochs")
    s = sub.add_parser("sweep", parents=[common], help="train every sweep arch x seed")
    s.add_argument("--epochs", type=int, default=None, help="override training.max_epochs")
    e = sub.add_parser("eval", parents=[common], help="split losses, error maps, loss errors")
    e.add_argument("--checkpoint", default=None, help="default: last checkpoint of 'train'")
    b = sub.add_parser("bench", parents=[common], help="solver vs surrogate wall time")
    b.add_argument("--checkpoint", default=None, help="default: last checkpoint of 'train'")
    b.add_argument("--repetitions", type=int, default=None)
    return p


def resolve_out(args, cfg):
    return args.out or os.environ.get(config_mod.OUT_ENV) or cfg.output_dir


def _apply_overrides(cfg, args):
    hyper = cfg.training
    if args.seed is not None:
        hyper = dataclasses.replace(hyper, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 1:
            raise ConfigError("--epochs must be >= 1")
        hyper = dataclasses.replace(hyper, max_epochs=args.epochs)
    cfg.training = hyper
    return cfg


def _thread_limit(deterministic):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def _progress(every=25):
    def report(e, tl, vl):
        if e % every == 0:
            log.info("epoch %4d  train %.4e  val %.4e", e, tl, vl)
    return report


def run(args) -> int:
    cfg = _apply_overrides(config_mod.load(args.config), args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    jobs = 1 if args.deterministic else args.jobs
    out = resolve_out(args, cfg)
    if args.dry_run:
        if args.command == "generate":
            pipeline.generate(cfg, out, dry_run=True)
        else:
            print(f"{args.command}: config {cfg.source} is valid; output -> {out}; nothing run")
        return EXIT_OK
    os.makedirs(out, exist_ok=True)
    with _thread_limit(args.deterministic):
        if args.command == "generate":
            pipeline.generate(cfg, out, jobs=jobs)
        elif args.command == "train":
            best, run_ = pipeline.run_train(cfg, out, resume=args.resume, progress=_progress())
            print(f"{cfg.network.label} seed {cfg.training.seed}: saved epoch {best.epoch} "
                  f"train {best.train_loss:.4e} val {best.val_loss:.4e}")
        elif args.command == "sweep":
            report = pipeline.run_sweep_cmd(cfg, out, jobs=jobs)
            for r in report.rows:
                print(f"{r.label:18s} train {r.mean_train:.4e} (var {r.var_train:.2e})  "
                      f"val {r.mean_val:.4e}  nonconverged={r.nonconverged}")
        elif args.command == "eval":
            report = pipeline.run_eval(cfg, out, checkpoint=args.checkpoint, jobs=jobs)
            for k, v in report.split_losses.items():
                print(f"{k:12s} mse {v:.4e}")
            for r in report.loss_errors:
                print(f"N={r.N:3d} Np={r.Np:2d} loss rel. error {r.rel_error:.4g} {r.note}")
        elif args.command == "bench":
            report = pipeline.run_bench(cfg, out, checkpoint=args.checkpoint, repetitions=args.repetitions)
            for r in report.timing:
                extra = "" if r.precision == "float64" else \
                    f" (float64 {r.surrogate_seconds_f64:.4f}s, max dev {r.precision_deviation:.1e} Jc)"
                print(f"N={r.N:3d} Np={r.Np:2d} solver {r.solver_seconds:.3f}s "
                      f"surrogate[{r.precision}] {r.surrogate_seconds:.4f}s speedup {r.speedup:.0f}x{extra}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except pipeline.DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except pipeline.DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
