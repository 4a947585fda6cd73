#!/usr/bin/env python3
"""
flocksim - fractional Euler-alignment simulator and verification harness on the torus

Subcommands:
  run        simulate one config into a run directory
  kernel     print c(n,α) and φ_min, optionally dump the multiplier table
  flock      extract the flocking state of a finished run
  stability  perturb a flock by ε and measure how far the new flock lands
  sweep      one run per value of one config key
  verify     self-check suite (fast or full)
"""
import argparse
import os
import sys
import time
from typing import List, Optional

import numpy as np
import pandas as pd
from rich.console import Console

from modules import __version__
from modules.config_manager import ConfigManager, SimConfig, load_sim_config
from modules.errors import (ConfigError, FieldFormatError, NotFlockedError, NumericalAbort,
                            VerificationFailure)
from modules.field_io import write_table
from modules.fractional_kernel import DEFAULT_LATTICE_IMAGES, build_kernel_spec
from modules.progress_tracker import ProgressTracker
from modules.run_manager import (EXIT_ABORT, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, RunManager,
                                 extract_flock, read_flock)
from modules.flocking import stability_experiment
from modules.sweep import parse_values, sweep
from modules.torus_fields import TorusGrid
from modules.utils import (format_duration, format_float, log_message, output_path, print_banner,
                           setup_logging, validate_environment)
from modules.verify import LEVELS, render_report, verify
from modules.worker_planner import WorkerPlanner

STABILITY_NAME = "stability.csv"


class FlocksimParser(argparse.ArgumentParser):
    """argparse with the usage exit code of this tool"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class FlockSimulator:
    """Main orchestrator for simulations, flock extraction and self-checks"""

    def __init__(self, app_config: str = "config.yaml", out: Optional[str] = None,
                 seed: Optional[int] = None, threads: int = 0):
        self.config_manager = ConfigManager(app_config)
        self.config = self.config_manager.load_config(allow_missing=True)
        self.out = out
        self.seed = seed
        self.threads = threads or int(self.config['parallel']['max_workers'])
        self.progress = ProgressTracker()
        self.console = Console(stderr=True)
        self.log_file = None

    def start_logging(self, prefix: str, level: Optional[str] = None) -> None:
        logging_cfg = self.config['logging']
        kwargs = {'fmt': logging_cfg['format']} if 'format' in logging_cfg else {}
        self.log_file = setup_logging(
            self.config['directories']['log_directory'], prefix,
            level or logging_cfg.get('level', 'INFO'), **kwargs)
        log_message(f"flocksim {__version__}, log file {self.log_file}")

    def _sim_config(self, path: str) -> SimConfig:
        cfg = load_sim_config(path)
        if self.seed is not None:
            cfg = cfg.override('seed', self.seed)
        return cfg

    def _default_out(self, name: str) -> str:
        return self.out or os.path.join(self.config['directories']['output_directory'], name)

    def _workers(self, job_count: int, dim: int, n: int) -> int:
        planner = WorkerPlanner()
        memory = max(float(self.config['parallel'].get('memory_per_run_mb', 0)),
                     planner.estimate_run_memory_mb(dim, n))
        workers = planner.plan_workers(job_count, self.threads, memory)
        for tip in planner.get_recommendations(workers):
            log_message(tip)
        return workers

    def run(self, config_path: str) -> int:
        cfg = self._sim_config(config_path)
        out_dir = self._default_out(cfg.name)
        self.console.print(f"🚀 Running [bold]{cfg.name}[/bold] (dim={cfg.dim}, n={cfg.n}, "
                           f"alpha={cfg.alpha!r}, t_end={cfg.t_end!r}) into {out_dir}")
        result = RunManager(cfg, out_dir, self.progress).execute()
        if result.exit_code == EXIT_OK:
            fit = result.alignment_fit
            rate = f"{fit.rate:.4f}" if fit else "n/a"
            self.console.print(f"✅ {result.status}: fitted alignment rate {rate}")
        else:
            self.console.print(f"❌ {result.status}: {result.message}")
        return result.exit_code

    def kernel(self, alpha: float, dim: int, n: int, images: int,
               table_path: Optional[str]) -> int:
        spec = build_kernel_spec(alpha, TorusGrid(dim, n), images)
        print("alpha,dim,norm_const,phi_min")
        print(f"{format_float(alpha)},{dim},{format_float(spec.norm_const)},"
              f"{format_float(spec.phi_min)}")
        if table_path:
            kmag = spec.grid.kmag.ravel()
            lam = np.asarray(spec.multiplier).ravel()
            _, first = np.unique(kmag, return_index=True)
            frame = pd.DataFrame({'kmag': kmag[first], 'lambda': lam[first]})
            directory = os.path.dirname(os.path.abspath(table_path))
            write_table(output_path(directory, os.path.basename(table_path)), frame)
            log_message(f"Multiplier table ({len(frame)} shells) written to {table_path}")
        return EXIT_OK

    def flock(self, run_dir: str) -> int:
        flock = extract_flock(run_dir)
        self.console.print(f"✅ Flock at t={flock.extracted_at!r}: ubar={flock.u_bar}, "
                           f"Cauchy tail {flock.cauchy_tail:.3e}")
        return EXIT_OK

    def stability(self, base_path: str, eps_text: str, config_path: str) -> int:
        cfg = self._sim_config(config_path)
        try:
            eps = [float(e) for e in parse_values(eps_text)]
        except ValueError as e:
            raise ConfigError(f"--eps: {e}")
        base = read_flock(base_path, fallback_ubar=cfg.ubar)
        grid = base.rho_inf.grid
        workers = self._workers(len(eps), grid.dim, grid.points_per_dim)
        table = stability_experiment(base, eps, cfg, workers=workers, progress=self.progress)
        out_dir = self.out or os.path.dirname(os.path.abspath(base_path))
        path = write_table(output_path(out_dir, STABILITY_NAME), table.to_frame())
        if not table.is_monotone():
            log_message("dist_inf is not monotone in eps", "warning")
        over = table.bound_violations()
        if over:
            log_message(f"dist_inf exceeds C_eps*eps for eps={over}", "warning")
        self.console.print(f"✅ Stability table written to {path} (theta={table.theta:.3f})")
        return EXIT_OK

    def sweep(self, config_path: str, key: str, values_text: str) -> int:
        template = self._sim_config(config_path)
        values = parse_values(values_text)
        out_dir = self._default_out(f"sweep_{template.name}_{key}")
        summary = sweep(template, key, values, out_dir, workers=self.threads, progress=self.progress)
        failed = summary[summary["status"] != "ok"]
        for _, row in failed.iterrows():
            self.console.print(f"⚠️  {row['directory']}: {row['status']} {row['message']}")
        self.console.print(f"✅ Sweep summary: {len(summary) - len(failed)}/{len(summary)} runs ok")
        return EXIT_OK

    def verify(self, level: Optional[str], alpha: Optional[float]) -> int:
        defaults = self.config.get('verify') or {}
        level = level or defaults.get('level', 'fast')
        alpha = alpha if alpha is not None else float(defaults.get('alpha', 1.0))
        seed = self.seed if self.seed is not None else int(defaults.get('seed', 2024))
        report = verify(level, alpha=alpha, seed=seed)
        render_report(report, self.console)
        if not report.passed:
            names = ", ".join(c.name for c in report.failures)
            raise VerificationFailure(f"failed checks: {names}")
        self.console.print(f"✅ All {len(report.checks)} checks passed in "
                           f"{format_duration(report.elapsed)}")
        return EXIT_OK

    def print_stats(self) -> None:
        stats = self.progress.get_stats()
        if not stats['total_steps']:
            return
        self.console.print(f"📊 {stats['total_steps']:,} steps, {stats['total_frames']:,} frames, "
                           f"{stats['runs_completed']} run(s) ok, {stats['runs_failed']} failed, "
                           f"{stats['steps_per_second']:.0f} steps/s in "
                           f"{format_duration(stats['elapsed_time'])}")


def build_parser() -> argparse.ArgumentParser:
    parser = FlocksimParser(
        prog="flocksim",
        description="Fractional Euler-alignment simulator on the torus",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  flocksim run --config configs/perturbed_1d.txt
  flocksim kernel --alpha 1.0 --dim 1 --table lambda.csv
  flocksim flock --run-dir runs/perturbed_1d
  flocksim stability --base runs/perturbed_1d/flock.dat --eps 1e-2,1e-3,1e-4 --config configs/perturbed_1d.txt
  flocksim sweep --config configs/perturbed_1d.txt --key alpha --values 0.5,1.0,1.5
  flocksim verify --level fast
        """
    )
    parser.add_argument('--out', help='Output directory (default from config.yaml)')
    parser.add_argument('--seed', type=int, help='Override the RNG seed')
    parser.add_argument('--threads', type=int, default=0,
                        help='Worker threads for sweeps and stability runs (0 = auto)')
    parser.add_argument('--app-config', default='config.yaml', help='Application settings file')
    parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Override the logging level')
    parser.add_argument('--version', action='version', version=f"flocksim {__version__}")

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help='Simulate one config')
    p.add_argument('--config', required=True, help='Simulation config (key = value)')

    p = sub.add_parser('kernel', help='Normalization constant, phi_min and multiplier table')
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--dim', type=int, choices=[1, 2], required=True)
    p.add_argument('--n', type=int, default=128, help='Points per dimension for the table')
    p.add_argument('--lattice-images', type=int, default=DEFAULT_LATTICE_IMAGES)
    p.add_argument('--table', help='Write (|k|, lambda) pairs to this CSV')

    p = sub.add_parser('flock', help='Extract the flock of a finished run')
    p.add_argument('--run-dir', required=True)

    p = sub.add_parser('stability', help='Flock stability experiment')
    p.add_argument('--base', required=True, help='flock.dat of the base flock')
    p.add_argument('--eps', required=True, help='Comma-separated perturbation sizes')
    p.add_argument('--config', required=True, help='Simulation config for the perturbed runs')

    p = sub.add_parser('sweep', help='Parameter sweep over one config key')
    p.add_argument('--config', required=True, help='Template simulation config')
    p.add_argument('--key', required=True, help='Config key to vary (e.g. alpha, init.eps)')
    p.add_argument('--values', required=True, help='Comma-separated values')

    p = sub.add_parser('verify', help='Self-check suite')
    p.add_argument('--level', choices=LEVELS, help='Default from config.yaml (fast)')
    p.add_argument('--alpha', type=float, help='Default from config.yaml (1.0)')
    return parser


def dispatch(sim: FlockSimulator, args: argparse.Namespace) -> int:
    if args.command == 'run':
        return sim.run(args.config)
    if args.command == 'kernel':
        return sim.kernel(args.alpha, args.dim, args.n, args.lattice_images, args.table)
    if args.command == 'flock':
        return sim.flock(args.run_dir)
    if args.command == 'stability':
        return sim.stability(args.base, args.eps, args.config)
    if args.command == 'sweep':
        return sim.sweep(args.config, args.key, args.values)
    return sim.verify(args.level, args.alpha)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)

    if not validate_environment():
        return EXIT_USAGE

    if args.command != 'kernel':
        print_banner()

    started = time.time()
    try:
        sim = FlockSimulator(args.app_config, out=args.out, seed=args.seed, threads=args.threads)
        sim.start_logging(args.command, args.log_level)
        code = dispatch(sim, args)
        sim.print_stats()
        log_message(f"{args.command} finished with exit code {code} in "
                    f"{format_duration(time.time() - started)}")
        return code

    except KeyboardInterrupt:
        print("\n⚠️  Interrupted by user", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, FieldFormatError, FileNotFoundError, FileExistsError, ValueError) as e:
        log_message(f"{args.command}: {e}", "error")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalAbort, NotFlockedError) as e:
        log_message(f"{args.command}: {e}", "error")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_ABORT
    except VerificationFailure as e:
        log_message(f"verify: {e}", "error")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
