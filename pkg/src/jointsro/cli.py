"""Command line front end: simulate, estimate, compensate, bench, trace.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .bench import METHODS, compensate_channels, run_trial
from .errors import ConfigurationError, InvalidInputError, NumericalError, SyncError
from .likelihood import PPM, PairObjective, SroVector, profile_log_likelihood
from .optimizer import estimate_joint
from .pairwise import estimate_pairwise, grid_init
from .sim import load_scenario, render_scenario, rmse_ppm
from .spectral import SpectrogramSet, StftConfig, TimeSignal
from .wavio import read_wav, write_wav

log = logging.getLogger("jointsro")

REPORT_SCHEMA = "jointsro.report"
REPORT_VERSION = 1
BENCH_COLUMNS = ["speakers", "duration_s", "trial", "method", "rmse_ppm", "seconds"]
TRACE_COLUMNS = ["epsilon_ppm", "objective"]

DEFAULT_CONFIG = {
    "stft": {"window_length": 2048, "shift": 1024, "dft_size": 4096, "window": "hann"},
    "grid": {"range_ppm": 100.0, "num_grids": 100},
    "outer_iters": 100,
    "inner_iters": 1,
    "tol_ppm": 0.001,
    "gss_tol_ppm": 0.001,
}


class UsageError(SyncError):
    pass


@dataclass
class SyncReport:
    """Machine-readable outcome of one estimation run."""

    method: str
    sro_ppm: list
    log_likelihood: list
    iterations: int
    seconds: float
    config: dict
    files: list = field(default_factory=list)
    sample_rate: float | None = None
    init_ppm: list | None = None
    converged: bool | None = None
    truth_ppm: list | None = None
    rmse_ppm: float | None = None

    def __post_init__(self):
        if len(self.log_likelihood) != self.iterations + 1:
            raise ValueError("trace length must be iterations + 1")
        if not np.all(np.isfinite(self.sro_ppm)):
            raise NumericalError("non-finite SRO in report", sro_ppm=self.sro_ppm)

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != REPORT_SCHEMA:
            raise InvalidInputError("not a jointsro report (missing 'schema')")
        if data.get("version") != REPORT_VERSION:
            raise InvalidInputError(f"unsupported report version {data.get('version')!r}")
        fields = {k: v for k, v in data.items() if k not in ("schema", "version")}
        try:
            return cls(**fields)
        except TypeError as exc:
            raise InvalidInputError(f"malformed report: {exc}") from None


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, args=None):
    """Defaults, then the JSON file, then command-line flags."""
    config = DEFAULT_CONFIG
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                config = _merge(config, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot load config {path}: {exc}") from None
    flags = {}
    if args is not None:
        for name in ("outer_iters", "inner_iters", "tol_ppm"):
            if getattr(args, name, None) is not None:
                flags[name] = getattr(args, name)
        grid = {}
        if getattr(args, "range_ppm", None) is not None:
            grid["range_ppm"] = args.range_ppm
        if getattr(args, "grids", None) is not None:
            grid["num_grids"] = args.grids
        if grid:
            flags["grid"] = grid
    return _merge(config, flags)


def _stft_config(config):
    try:
        return StftConfig(**config["stft"])
    except TypeError as exc:
        raise ConfigurationError(f"bad stft section: {exc}") from None


def _load_channels(paths):
    signals, rate = [], None
    for path in paths:
        for sig in read_wav(path):
            if rate is None:
                rate = sig.nominal_rate
            elif sig.nominal_rate != rate:
                raise UsageError(
                    f"{path}: sample rate {sig.nominal_rate:g} Hz differs from "
                    f"{rate:g} Hz")
            signals.append(sig)
    n = min(len(s) for s in signals)
    return [TimeSignal(s.samples[:n], rate) for s in signals], rate


def estimate(signals, method="joint", config=None):
    """Run one estimator on in-memory channels and build a ``SyncReport``."""
    config = config or DEFAULT_CONFIG
    stft_cfg = _stft_config(config)
    grid = config["grid"]
    t0 = time.perf_counter()
    spec = SpectrogramSet.from_signals(signals, stft_cfg)
    if spec.num_channels < 2:
        raise UsageError("need at least two channels")
    init, _ = grid_init(spec, grid["range_ppm"], grid["num_grids"])
    if method == "joint":
        res = estimate_joint(spec, init, config["outer_iters"], config["inner_iters"],
                             config["tol_ppm"])
        sro, trace, iterations, converged = res.sro, res.trace, res.iterations, res.converged
    elif method in ("pair-gss", "pair-mm"):
        kind = method.split("-")[1]
        res = estimate_pairwise(spec, kind, grid["range_ppm"], grid["num_grids"],
                                config["gss_tol_ppm"], config["outer_iters"],
                                config["inner_iters"], config["tol_ppm"])
        sro = res.sro
        trace = [profile_log_likelihood(spec, init), profile_log_likelihood(spec, sro)]
        iterations, converged = 1, None
    else:
        raise UsageError(f"unknown method {method!r}")
    rate = signals[0].nominal_rate if isinstance(signals[0], TimeSignal) else None
    return SyncReport(method=method, sro_ppm=sro.ppm.tolist(), log_likelihood=trace,
                      iterations=iterations, seconds=time.perf_counter() - t0,
                      config=config, sample_rate=rate, init_ppm=init.ppm.tolist(),
                      converged=converged)


def _write_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    sources = None
    if scenario.sources:
        sources = [read_wav(p)[0] for p in scenario.sources]
    channels = render_scenario(scenario, sources)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = []
    for m, sig in enumerate(channels):
        path = os.path.join(args.out_dir, f"ch{m:02d}.wav")
        write_wav(path, sig)
        paths.append(path)
    truth = {"sro_ppm": list(scenario.true_sros), "sample_rate": scenario.sample_rate,
             "seed": scenario.seed, "files": [os.path.basename(p) for p in paths]}
    _write_json(truth, os.path.join(args.out_dir, "truth.json"))
    log.info("wrote %d channels to %s", len(paths), args.out_dir)
    return 0


def cmd_estimate(args):
    if len(args.wavs) < 1:
        raise UsageError("need WAV inputs")
    signals, rate = _load_channels(args.wavs)
    if len(signals) < 2:
        raise UsageError("need at least two channels")
    config = load_config(args.config, args)
    report = estimate(signals, args.method, config)
    report.files = list(args.wavs)
    report.sample_rate = rate
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            truth = json.load(fh)["sro_ppm"]
        if len(truth) != len(report.sro_ppm):
            raise UsageError(f"truth has {len(truth)} channels, estimate {len(report.sro_ppm)}")
        report.truth_ppm = truth
        report.rmse_ppm = rmse_ppm(SroVector.from_ppm(report.sro_ppm),
                                   SroVector.from_ppm(truth))
    _write_json(report.to_dict(), args.output)
    return 0


def cmd_compensate(args):
    signals, rate = _load_channels(args.wavs)
    try:
        with open(args.report, encoding="utf-8") as fh:
            report = SyncReport.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read report {args.report}: {exc}") from None
    if len(report.sro_ppm) != len(signals):
        raise UsageError(f"report has {len(report.sro_ppm)} channels, "
                         f"inputs have {len(signals)}")
    stft_cfg = _stft_config(_merge(DEFAULT_CONFIG, report.config or {}))
    fixed = compensate_channels(signals, SroVector.from_ppm(report.sro_ppm),
                                stft_cfg, args.path)
    os.makedirs(args.out_dir, exist_ok=True)
    stems = [os.path.splitext(os.path.basename(p))[0] for p in args.wavs]
    if len(stems) != len(fixed) or len(set(stems)) != len(stems):
        stems = [f"ch{m:02d}" for m in range(len(fixed))]
    for stem, y in zip(stems, fixed):
        write_wav(os.path.join(args.out_dir, f"{stem}.wav"), y, rate)
    return 0


def _bench_job(job):
    speakers, duration, trial, seed, channels = job
    return run_trial(speakers, duration, trial, seed, channels)


def cmd_bench(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    jobs = [(s, d, t, args.seed, args.channels)
            for s in args.speakers for d in args.durations for t in range(args.trials)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(j) for j in jobs]
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "bench.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for res in results:
            for row in res.rows():
                writer.writerow({**row, "rmse_ppm": f"{row['rmse_ppm']:.6f}",
                                 "seconds": f"{row['seconds']:.3f}"})
    summary = []
    for s in args.speakers:
        for d in args.durations:
            for method in METHODS:
                vals = [r.rmse[method] for r in results
                        if r.speakers == s and r.duration == d]
                summary.append({"speakers": s, "duration_s": d, "method": method,
                                "trials": len(vals), "mean_rmse_ppm": float(np.mean(vals))})
    _write_json({"summary": summary,
                 "trials": [{"speakers": r.speakers, "duration_s": r.duration,
                             "trial": r.trial, "truth_ppm": r.truth_ppm,
                             "estimates_ppm": r.estimates_ppm} for r in results]},
                os.path.join(args.out_dir, "summary.json"))
    return 0


def sweep(signals, lo_ppm, hi_ppm, points, config=None):
    """Dense two-channel objective sweep: ``(epsilons_ppm, values)``."""
    stft_cfg = _stft_config(config or DEFAULT_CONFIG)
    spec = SpectrogramSet.from_signals(signals, stft_cfg)
    obj = PairObjective(spec.coeffs[0], spec.coeffs[1], stft_cfg)
    grid = np.array([0.5 * (lo_ppm + hi_ppm)]) if points == 1 else np.linspace(lo_ppm, hi_ppm, points)
    return grid, obj(grid * PPM)


def cmd_trace(args):
    signals, _ = _load_channels(args.wavs)
    if len(signals) != 2:
        raise UsageError(f"trace needs exactly 2 channels, got {len(signals)}")
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    lo, hi = args.range_ppm
    grid, values = sweep(signals, lo, hi, args.points, load_config(args.config))
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", newline="",
                                                              encoding="utf-8")
    try:
        writer = csv.writer(out)
        writer.writerow(TRACE_COLUMNS)
        for e, v in zip(grid, values):
            writer.writerow([f"{e:.6f}", repr(float(v))])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="jointsro", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a scenario to WAV files")
    s.add_argument("scenario")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_simulate)

    def estimator_flags(q):
        q.add_argument("--config", help="JSON config file")
        q.add_argument("--range-ppm", type=float, help="grid half-width (ppm)")
        q.add_argument("--grids", type=int, help="number of grid points")
        q.add_argument("--outer-iters", type=int)
        q.add_argument("--inner-iters", type=int)
        q.add_argument("--tol-ppm", type=float)

    e = sub.add_parser("estimate", help="estimate SROs of WAV recordings")
    e.add_argument("wavs", nargs="+")
    e.add_argument("--method", choices=["joint", "pair-gss", "pair-mm"], default="joint")
    e.add_argument("--truth", help="truth.json from simulate, adds RMSE")
    e.add_argument("-o", "--output", help="report path (default stdout)")
    estimator_flags(e)
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("compensate", help="resynchronize WAVs using a report")
    c.add_argument("wavs", nargs="+")
    c.add_argument("--report", required=True)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--path", choices=["stft", "resample"], default="stft")
    c.set_defaults(func=cmd_compensate)

    b = sub.add_parser("bench", help="joint vs pairwise RMSE on simulated data")
    b.add_argument("--speakers", type=int, nargs="+", choices=[1, 2, 3], default=[1, 2, 3])
    b.add_argument("--durations", type=float, nargs="+", default=[5.0, 10.0, 30.0])
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--channels", type=int, default=4)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out-dir", default="bench_out")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("trace", help="sweep the two-channel objective")
    t.add_argument("wavs", nargs="+")
    t.add_argument("--range-ppm", type=float, nargs=2, default=[-100.0, 100.0],
                   metavar=("LO", "HI"))
    t.add_argument("--points", type=int, default=201)
    t.add_argument("--config")
    t.add_argument("-o", "--output")
    t.set_defaults(func=cmd_trace)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # --help, --version, usage errors
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"jointsro: numerical failure: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, default=str), file=sys.stderr)
        return 2
    except (SyncError, ValueError, OSError) as exc:
        print(f"jointsro: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
