"""Batch front-end: parse an experiment config, dispatch sweeps, write CSV
results and convergence traces.

Outputs in the chosen directory:
  results.csv            one row per (algorithm, sweep point) with columns
                         algorithm, snr1_db, snr2_db, mean_mse_analytic,
                         mean_mse_empirical, mean_ser, mean_iters, trials_ok,
                         trials_flagged
  trace_<algo>_<seed>.csv  per-iteration MSE of trial 0 at the first sweep
                         point, columns iteration, mse

Numeric fields are written with 17 significant digits; reruns with the same
config and seed are byte-identical regardless of --jobs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys

from .channel import DOWNLINK, UPLINK
from .config import (apply_overrides, build_config, raw_values)
from .errors import EmptyAggregateError, InvalidInputError
from .simulate import aggregate, designer_table, run_trial

RESULT_COLUMNS = ["algorithm", "snr1_db", "snr2_db", "mean_mse_analytic",
                  "mean_mse_empirical", "mean_ser", "mean_iters", "trials_ok",
                  "trials_flagged"]

_BASELINE_SETS = {
    DOWNLINK: ["joint", "separate-lmmse", "direct-af", "per-hop"],
    UPLINK: ["covariance", "separate-lmmse", "direct-af", "per-hop",
             "no-precoder"],
}


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _trial_task(args):
    algorithm, config, trial, sweep_index = args
    return run_trial(algorithm, config, trial, sweep_index)


def run_experiment(config, jobs=1):
    """Run every (algorithm, sweep point, trial); returns (rows, traces).

    rows follow RESULT_COLUMNS; traces maps algorithm -> trial-0 MSE trace at
    the first sweep point.  The reduction is order-insensitive, so any worker
    count yields identical output.
    """
    table = designer_table(config.dims.direction)
    for algo in config.algorithms:
        if algo not in table:
            raise InvalidInputError(
                f"unknown algorithm {algo!r} for {config.dims.direction}; "
                f"choose from {sorted(table)}")
    tasks = [(algo, config, trial, s)
             for algo in config.algorithms
             for s in range(len(config.sweep))
             for trial in range(config.trials)]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=4))
    else:
        results = [_trial_task(t) for t in tasks]

    by_point = {}
    for task, res in zip(tasks, results):
        algo, _, _, s = task
        by_point.setdefault((algo, s), []).append(res)

    rows = []
    traces = {}
    for algo in config.algorithms:
        for s, (snr1, snr2) in enumerate(config.sweep):
            agg = aggregate(by_point[(algo, s)])
            rows.append([algo, snr1, snr2, agg.mean_mse_analytic,
                         agg.mean_mse_empirical, agg.mean_ser,
                         agg.mean_iterations, agg.trials_ok,
                         agg.trials_flagged])
            if s == 0:
                first = min((r for r in by_point[(algo, 0)] if not r.flagged),
                            key=lambda r: r.trial, default=None)
                if first is not None:
                    traces[algo] = first.trace
    return rows, traces


def write_results(out_dir, config, rows, traces):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    for algo, trace in traces.items():
        tpath = os.path.join(out_dir, f"trace_{algo}_{config.seed}.csv")
        with open(tpath, "w", encoding="ascii", newline="\n") as fh:
            fh.write("iteration,mse\n")
            for i, mse in enumerate(trace):
                fh.write(f"{i},{mse:.17g}\n")
    return path


def _load_config(args, direction=None):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            values = raw_values(fh.read())
    else:
        values = {}
    values = apply_overrides(values, args.set or [])
    config = build_config(values, base_direction=direction)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _run_subcommand(args, direction, convergence_only=False,
                    with_baselines=False):
    config = _load_config(args, direction)
    if config.dims.direction != direction:
        raise InvalidInputError(
            f"config direction {config.dims.direction!r} does not match the "
            f"{direction} subcommand")
    if with_baselines:
        config.algorithms = list(_BASELINE_SETS[direction])
    if convergence_only:
        config.sweep = config.sweep[:1]
    rows, traces = run_experiment(config, jobs=args.jobs)
    path = write_results(args.out, config, rows, traces)
    print(f"wrote {path}")
    return 0


def selftest():
    """Quick built-in checks of the core closed forms; exits nonzero on any
    failure."""
    import numpy as np

    from . import downlink, linalg, sdp, simulate
    from .channel import sample_rayleigh, uniform_dims

    failures = []

    def check(name, ok):
        print(f"selftest {name}: {'ok' if ok else 'FAIL'}")
        if not ok:
            failures.append(name)

    e = linalg.hermitian_eig(np.eye(3))
    check("identity eigenvalues", np.allclose(e.values, 1.0))
    s = linalg.hermitian_sqrt(np.diag([4.0, 9.0]))
    check("diagonal square root", np.allclose(s, np.diag([2.0, 3.0])))
    check("column stacking", np.allclose(
        linalg.vec(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4]))

    toy = sdp.SdpProblem(np.array([1.0]),
                         [sdp.LmiBlock(np.array([[0., 1.], [1., 0.]]),
                                       [(0, np.eye(2))])])
    sol = sdp.solve_sdp(toy)
    check("toy SDP optimum", sol.status == "optimal"
          and abs(sol.x[0] - 1.0) < 1e-5)

    bits = np.array([0, 0, 0, 1, 1, 0, 1, 1])
    check("QPSK round trip", np.array_equal(
        simulate.qpsk_detect(simulate.qpsk_modulate(bits)), bits))

    dims = uniform_dims()
    a = sample_rayleigh(dims, 7)
    b = sample_rayleigh(dims, 7)
    check("channel determinism", np.array_equal(a.first_hop, b.first_hop))

    # scalar chain with unit channels and unit noise: equalizer gain 1/3
    from .channel import ChannelSet, NoiseModel, PowerBudget, SystemDims
    sdims = SystemDims(1, 1, ((1, 1),))
    ch = ChannelSet(sdims, np.array([[1.0 + 0j]]), [np.array([[1.0 + 0j]])])
    nz = NoiseModel(np.eye(1), [np.eye(1)])
    g = downlink.update_equalizers(np.eye(1, dtype=complex),
                                   np.eye(1, dtype=complex), ch, nz)
    check("scalar equalizer", abs(g[0][0, 0] - 1.0 / 3.0) < 1e-12)

    return 1 if failures else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="relaybeam",
        description="MMSE transceiver design sweeps for two-hop "
                    "amplify-and-forward MIMO relay networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    for name, help_text in [
            ("downlink-sweep", "sweep SNR points with downlink designers"),
            ("uplink-sweep", "sweep SNR points with uplink designers"),
            ("convergence", "record per-iteration MSE traces at one point"),
            ("compare-baselines", "run the designer against every baseline")]:
        p = sub.add_parser(name, help=help_text)
        add_common(p)
    sub.add_parser("selftest", help="run quick built-in checks")

    args = parser.parse_args(argv)
    try:
        if args.command == "selftest":
            return selftest()
        if args.command == "downlink-sweep":
            return _run_subcommand(args, DOWNLINK)
        if args.command == "uplink-sweep":
            return _run_subcommand(args, UPLINK)
        if args.command == "convergence":
            config = _load_config(args)
            return _run_subcommand(args, config.dims.direction,
                                   convergence_only=True)
        if args.command == "compare-baselines":
            config = _load_config(args)
            return _run_subcommand(args, config.dims.direction,
                                   with_baselines=True)
        raise InvalidInputError(f"unknown command {args.command!r}")
    except (InvalidInputError, EmptyAggregateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
