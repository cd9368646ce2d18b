"""Command-line entry point: ``ddp {gen,ingest,run,sweep,verify}``.

Exit codes: 0 ok, 1 usage, 2 parse error, 3 bounds violation, 4 budget
exceeded, 5 schedule verification failed.

Every subcommand accepts ``--config FILE``, a flat JSON object whose keys are
option names (``"epsilon"``, ``"delta_f"``, ...). Command-line flags override
it. ``--seed`` falls back to ``$DDP_SEED``, then 0. Set ``SOURCE_DATE_EPOCH``
to pin the manifest timestamp for byte-identical reruns.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .experiment import ExperimentConfig, ZeroMean, build_schedule, run_experiment, sweep_discount
from .ingestion import (
    DEFAULT_BOUNDS,
    ParseError,
    SyntheticConfig,
    daily_csv_text,
    dataset_to_table,
    fmt,
    gen_synthetic,
    parse_ausgrid_csv,
    parse_long_csv,
    parse_wide_csv,
    read_daily_csv,
    resample_daily,
    to_evolving_dataset,
)
from .mechanism import (
    BudgetExceeded,
    Custom,
    Exponential,
    Hyperbolic,
    UNDISCOUNTED,
    verify_schedule,
)
from .query import BoundsViolation, DatasetError, MeanQuery, MissingPolicy
from .rng import resolve_seed

log = logging.getLogger("discounted_dp")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_BOUNDS, EXIT_BUDGET, EXIT_VERIFY = range(6)

ERROR_HEADER = [
    "t",
    "date",
    "true_mean",
    "noise_scale",
    "report",
    "analytic_rel_err",
    "empirical_rel_err",
]
SWEEP_HEADER = ["param", "avg_rel_err", "excluded_days"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for parse errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _bounds(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bounds must be LO,HI, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"bounds need LO < HI, got {text!r}")
    return lo, hi


def _grid(text: str) -> list[float]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise UsageError("grid is empty")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"grid values must be numbers, got {text!r}") from None


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc)
        if epoch
        else dt.datetime.now(dt.timezone.utc)
    )
    return when.replace(microsecond=0).isoformat()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _config_echo(args) -> dict:
    skip = {"func", "config"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def write_manifest(path, args, seed, inputs=(), outputs=(), extra=None) -> None:
    manifest = {
        "tool": "discounted_dp",
        "version": __version__,
        "command": args.command,
        "config": _config_echo(args),
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "created_at": _timestamp(),
    }
    if extra:
        manifest.update(extra)
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _query(args) -> MeanQuery:
    return MeanQuery(
        tuple(args.bounds),
        MissingPolicy(args.missing_policy),
        allow_unsound_missing=args.allow_unsound_missing,
    )


def _load(args):
    return to_evolving_dataset(read_daily_csv(args.data), tuple(args.bounds))


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    seed = args.seed = resolve_seed(args.seed)
    try:
        start = dt.date.fromisoformat(args.start_date)
    except ValueError:
        raise UsageError(f"start date must be YYYY-MM-DD, got {args.start_date!r}") from None
    cfg = SyntheticConfig(
        n=args.n,
        days=args.days,
        seed=seed,
        base_load=args.base_load,
        seasonal_amplitude=args.seasonal_amplitude,
        noise_sd=args.noise_sd,
        household_sd=args.household_sd,
        bounds=tuple(args.bounds),
        start_date=start,
    )
    ds = gen_synthetic(cfg)
    atomic_write(args.out, daily_csv_text(dataset_to_table(ds)))
    write_manifest(f"{args.out}.manifest.json", args, seed, outputs=[args.out])
    log.info("wrote %d x %d daily values to %s", ds.n, ds.t, args.out)
    return EXIT_OK


def cmd_ingest(args) -> int:
    if args.format == "long":
        readings = parse_long_csv(args.input)
    elif args.format == "wide":
        readings = parse_wide_csv(args.input)
    else:
        readings = parse_ausgrid_csv(args.input, args.categories.split(","))
    table = resample_daily(readings, args.agg)
    date_range = None
    if args.start or args.end:
        date_range = (args.start or min(table.columns), args.end or max(table.columns))
    ds = to_evolving_dataset(table, tuple(args.bounds), date_range)
    atomic_write(args.out, daily_csv_text(dataset_to_table(ds)))
    write_manifest(
        f"{args.out}.manifest.json",
        args,
        None,
        inputs=[args.input],
        outputs=[args.out],
        extra={"readings": len(readings), "customers": ds.n, "days": ds.t},
    )
    return EXIT_OK


def cmd_run(args) -> int:
    seed = args.seed = resolve_seed(args.seed)
    cfg = ExperimentConfig(
        epsilon=args.epsilon,
        alpha=args.alpha,
        beta=args.beta,
        seed=seed,
        monte_carlo_samples=args.mc,
    )
    ds = _load(args)
    results = run_experiment(ds, _query(args), cfg)
    out = Path(args.out)
    written = []
    summary = {}
    for kind, series in results.items():
        rows = [
            [
                r.t,
                r.date,
                fmt(r.true_mean),
                fmt(r.noise_scale),
                fmt(r.report),
                fmt(r.analytic_err),
                "" if r.empirical_err is None else fmt(r.empirical_err),
            ]
            for r in series.records
        ]
        path = out / f"errors_{kind}.csv"
        atomic_write(path, _csv_text(ERROR_HEADER, rows))
        written.append(path)
        v = series.verification
        summary[kind] = {
            "schedule": type(series.schedule).__name__,
            "delta_f": series.delta_f,
            "final_discounted_loss": series.final_discounted_loss,
            "verify_max_discounted_loss": v.max_sum,
            "verify_margin": v.margin,
            "average_rel_err": series.average_error,
            "excluded_days": series.excluded_days,
        }
    write_manifest(out / "manifest.json", args, seed, inputs=[args.data], outputs=written,
                   extra={"regimes": summary})
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = _grid(args.grid)
    ds = _load(args)
    rows = sweep_discount(ds, _query(args), args.epsilon, args.family, grid)
    atomic_write(
        args.out,
        _csv_text(SWEEP_HEADER, [[fmt(r.param), fmt(r.avg_rel_err), r.excluded_days] for r in rows]),
    )
    write_manifest(f"{args.out}.manifest.json", args, None, inputs=[args.data], outputs=[args.out])
    return EXIT_OK


def _read_scales(path) -> list[float]:
    values = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ParseError(line_no, f"scale {text!r} is not a number") from None
    return values


def cmd_verify(args) -> int:
    if args.schedule == "dp":
        regime = UNDISCOUNTED
    elif args.schedule == "exp":
        if args.alpha is None:
            raise UsageError("--alpha is required for the exp schedule")
        regime = Exponential(args.alpha)
    else:
        if args.beta is None:
            raise UsageError("--beta is required for the hyp schedule")
        regime = Hyperbolic(args.beta)
    if args.scales:
        schedule = Custom(_read_scales(args.scales))
    else:
        schedule = build_schedule(args.schedule, args.delta_f, args.epsilon, args.alpha, args.beta)
    report = verify_schedule(schedule, regime, args.delta_f, args.epsilon, args.horizon)
    print(f"schedule: {args.schedule}{' (custom scales)' if args.scales else ''}")
    print(f"horizon: {args.horizon}")
    print(f"max discounted loss: {report.max_sum:.12g} at t={report.argmax_t}")
    print(f"epsilon: {args.epsilon:.12g}")
    print(f"margin: {report.margin:.12g}")
    print("condition holds" if report.ok else "condition VIOLATED")
    return EXIT_OK if report.ok else EXIT_VERIFY


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddp", description="Discounted differential privacy for evolving datasets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat JSON file of option defaults")
        return p

    def data_opts(p):
        p.add_argument("--data", required=True, help="daily table CSV")
        p.add_argument("--bounds", type=_bounds, default=DEFAULT_BOUNDS, help="LO,HI (default 0,200)")
        p.add_argument("--missing-policy", choices=[m.value for m in MissingPolicy], default="exclude")
        p.add_argument("--allow-unsound-missing", action="store_true",
                       help="accept excluded missing entries despite the understated sensitivity")

    p = common(sub.add_parser("gen", help="write a synthetic daily table"))
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--base-load", type=float, default=SyntheticConfig.base_load)
    p.add_argument("--seasonal-amplitude", type=float, default=SyntheticConfig.seasonal_amplitude)
    p.add_argument("--noise-sd", type=float, default=SyntheticConfig.noise_sd)
    p.add_argument("--household-sd", type=float, default=SyntheticConfig.household_sd)
    p.add_argument("--bounds", type=_bounds, default=DEFAULT_BOUNDS)
    p.add_argument("--start-date", default=str(SyntheticConfig.start_date))
    p.set_defaults(func=cmd_gen)

    p = common(sub.add_parser("ingest", help="resample meter readings to a daily table"))
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["long", "wide", "ausgrid"], default="long")
    p.add_argument("--out", required=True)
    p.add_argument("--bounds", type=_bounds, default=DEFAULT_BOUNDS)
    p.add_argument("--agg", choices=["sum", "mean"], default="sum")
    p.add_argument("--start", help="first day YYYY-MM-DD (fills missing days)")
    p.add_argument("--end", help="last day YYYY-MM-DD")
    p.add_argument("--categories", default="GC", help="ausgrid consumption categories, comma separated")
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("run", help="release the daily mean under all three regimes"))
    data_opts(p)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--mc", type=int, default=0, help="Monte Carlo samples per day (0 = analytic only)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("sweep", help="average error across a grid of discount parameters"))
    data_opts(p)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--family", choices=["exp", "hyp"], required=True)
    p.add_argument("--grid", required=True, help='comma separated values, e.g. "0.5,0.9,0.99"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("verify", help="check a schedule's budget condition over a horizon"))
    p.add_argument("--schedule", choices=["dp", "exp", "hyp"], required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta-f", type=float, default=1.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--scales", help="file of explicit scales, one per line (replaces the formula)")
    p.set_defaults(func=cmd_verify)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict) or any(isinstance(v, (dict, list)) for v in cfg.values()):
        raise UsageError("config must be a flat JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    if "bounds" in cfg:
        cfg["bounds"] = _bounds(cfg["bounds"])
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subparsers.choices.values():
        own = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in cfg.items() if k in own})
        # a config value satisfies a required option
        for action in sp._actions:
            if action.dest in cfg:
                action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"ddp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"ddp: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BoundsViolation as exc:
        print(f"ddp: bounds violation: {exc}", file=sys.stderr)
        return EXIT_BOUNDS
    except BudgetExceeded as exc:
        print(f"ddp: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UsageError, ZeroMean, DatasetError, ValueError) as exc:
        print(f"ddp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ddp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
