"""Command-line front end: ``specshard {plan,sample,simulate,verify,anme}``.

Exit status is 0 on success, 1 on invalid input and 2 on numerical failure.
"""

import argparse
import csv
import math
import sys

import numpy as np

from . import __version__
from .config import ExperimentConfig, parse_config
from .designs import DesignKind, make_design, make_numpy_style_design, make_rng
from .errors import NumericalError, ValidationError
from .fedsim.server import simulate
from .metrics import anme, mc_discrepancy_collective
from .plans import Strategy, collective_discrepancy, plan_for_keep_ratio
from .spectra import decompose, keep_count, load_matrix

PLAN_COLUMNS = ("index", "lambda", "pi", "omega")
_PLAN_STREAM = 11  # rng stream for PriSM marginal estimation
_SAMPLE_STREAM = 12
_VERIFY_STREAM = 13


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _comment(seed, **fields):
    extra = "".join(f" {k}={v}" for k, v in fields.items())
    return f"# specshard {__version__} seed={seed}{extra}\n"


def _parse_lambda(text):
    try:
        lam = np.array([float(x) for x in text.split(",") if x.strip()], dtype=np.float64)
    except ValueError:
        raise ValidationError(f"--lambda: cannot parse {text!r}") from None
    if lam.size == 0:
        raise ValidationError("--lambda: empty list")
    return lam


def read_plan_csv(path):
    """Read a plan CSV; returns (meta dict, lambda, pi, omega)."""
    meta, rows = {}, []
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read plan {path}: {exc.strerror}") from None
    body = []
    for line in lines:
        if line.startswith("#"):
            for token in line[1:].split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    meta[key] = value
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames is None or tuple(reader.fieldnames) != PLAN_COLUMNS:
        raise ValidationError(f"{path}: header must be {','.join(PLAN_COLUMNS)}")
    try:
        for row in reader:
            rows.append((int(row["index"]), float(row["lambda"]), float(row["pi"]),
                         float(row["omega"])))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: bad row ({exc})") from None
    if not rows:
        raise ValidationError(f"{path}: no rows")
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValidationError(f"{path}: indices must be 0..N-1")
    lam, pi, omega = (np.array(col) for col in list(zip(*rows))[1:])
    return meta, lam, pi, omega


def _sample_size(meta, pi):
    if "n" in meta:
        return int(meta["n"])
    return int(round(pi.sum()))


def _load_config(args):
    cfg = parse_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return cfg


def _seed(args, cfg):
    return args.seed if args.seed is not None else cfg.seed


def cmd_plan(args, out):
    cfg = _load_config(args)
    opts = cfg.plan
    if (args.matrix is None) == (args.lam is None):
        raise ValidationError("plan: give exactly one of --matrix or --lambda")
    lam = decompose(load_matrix(args.matrix)).singular_values if args.matrix else _parse_lambda(args.lam)
    strategy = Strategy.parse(args.strategy or opts["strategy"])
    group_size = args.group_size or opts["group_size"]
    n = args.n if args.n is not None else opts["n"]
    ratio = args.keep_ratio if args.keep_ratio is not None else opts["keep_ratio"]
    if n:
        if not 1 <= n <= lam.size:
            raise ValidationError(f"plan: n must lie in [1, {lam.size}]")
        ratio = n / lam.size
    elif not ratio:
        raise ValidationError("plan: give --n or --keep-ratio")
    seed = _seed(args, cfg)
    plan = plan_for_keep_ratio(lam, ratio, strategy, group_size=group_size,
                               rng=make_rng(seed, _PLAN_STREAM))
    if n and plan.sample_size != n:
        raise NumericalError(f"plan: keep ratio {ratio!r} does not reproduce n={n}")
    out.write(_comment(seed, strategy=strategy.value, n=plan.sample_size, C=group_size))
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PLAN_COLUMNS)
    for i in range(lam.size):
        writer.writerow([i, _fmt(lam[i]), _fmt(plan.probabilities[i]), _fmt(plan.multipliers[i])])
    return 0


def _design_for(kind, pi, n):
    kind = DesignKind.parse(kind)
    if kind is DesignKind.NUMPY_STYLE:
        return make_numpy_style_design(pi, n)
    return make_design(kind, pi, n)


def cmd_sample(args, out):
    cfg = _load_config(args)
    meta, _, pi, _ = read_plan_csv(args.plan)
    n = _sample_size(meta, pi)
    design = _design_for(args.design or cfg.sample["design"], pi, n)
    trials = args.trials or cfg.sample["trials"]
    seed = _seed(args, cfg)
    draws = design.sample(make_rng(seed, _SAMPLE_STREAM), trials)
    for row in draws:
        out.write(" ".join(str(int(i)) for i in row) + "\n")
    return 0


def cmd_verify(args, out):
    cfg = _load_config(args)
    meta, lam, pi, omega = read_plan_csv(args.plan)
    n = _sample_size(meta, pi)
    C = args.group_size or int(meta.get("C", 1))
    if C < 1:
        raise ValidationError("verify: group size must be >= 1")
    design = _design_for(args.design or cfg.verify["design"], pi, n)
    trials = args.trials or cfg.verify["trials"]
    seed = _seed(args, cfg)
    closed = collective_discrepancy(lam, pi, omega, C)

    class _Plan:
        multipliers = omega

    mean, se = mc_discrepancy_collective(lam, _Plan, design, C, trials, make_rng(seed, _VERIFY_STREAM))
    gap = abs(mean - closed)
    ok = gap <= 3 * se + 1e-12 * max(1.0, abs(closed))
    out.write(f"closed_form={_fmt(closed)} mc_mean={_fmt(mean)} se={_fmt(se)} "
              f"trials={trials} C={C} {'PASS' if ok else 'FAIL'}\n")
    return 0 if ok else 2


def cmd_anme(args, out):
    pis, ns = [], []
    for path in args.plans:
        meta, _, pi, _ = read_plan_csv(path)
        pis.append(pi)
        ns.append(_sample_size(meta, pi))
    report = anme(pis, ns)
    for path, value in zip(args.plans, report.per_layer):
        shown = "undefined" if value is None else _fmt(value)
        out.write(f"{path}: {shown}\n")
    network = "undefined" if math.isnan(report.network) else _fmt(report.network)
    out.write(f"network: {network}\n")
    return 0


def cmd_simulate(args, out):
    cfg = _load_config(args)
    sim = cfg.simulation
    if args.seed is not None:
        sim = type(sim)(**{**sim.__dict__, "seed": args.seed})
    if args.rounds is not None:
        sim = type(sim)(**{**sim.__dict__, "rounds": args.rounds})
    out.write(_comment(sim.seed, strategy=sim.strategy.value, design=sim.design.value,
                       rounds=sim.rounds))
    writer = None
    last = None
    first_loss = None
    for _, record in simulate(sim):
        row = record.row(cfg.emit)
        if writer is None:
            writer = csv.DictWriter(out, fieldnames=list(row), lineterminator="\n")
            writer.writeheader()
        writer.writerow({k: _fmt(v) for k, v in row.items()})
        out.flush()
        if first_loss is None:
            first_loss = record.train_loss
        last = record
    drop = 1.0 - last.train_loss / first_loss if first_loss else math.nan
    out.write(f"# summary rounds={sim.rounds} first_loss={_fmt(first_loss)} "
              f"final_loss={_fmt(last.train_loss)} loss_drop={_fmt(drop)} "
              f"final_metric={_fmt(last.train_metric)} final_anme={_fmt(last.anme)}\n")
    return 0


def build_parser():
    parser = _Parser(prog="specshard", description="Spectral model sharding tools.")
    parser.add_argument("--version", action="version", version=f"specshard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        if config:
            p.add_argument("--config", default=None, help="experiment config file")
        p.add_argument("--output", "-o", default=None, help="write here instead of stdout")

    p = sub.add_parser("plan", help="inclusion probabilities and multipliers as CSV")
    p.add_argument("--matrix", help="matrix text file")
    p.add_argument("--lambda", dest="lam", help="comma-separated singular values")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--keep-ratio", type=float, default=None)
    p.add_argument("--strategy", default=None, help=", ".join(s.value for s in Strategy))
    p.add_argument("--group-size", type=int, default=None, help="C for the collective plan")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sample", help="draw shards from a plan CSV")
    p.add_argument("--plan", required=True)
    p.add_argument("--design", default=None, help=", ".join(k.value for k in DesignKind))
    p.add_argument("--trials", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="run the federated simulation, CSV per round")
    p.add_argument("--rounds", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="closed-form vs Monte-Carlo discrepancy")
    p.add_argument("--plan", required=True)
    p.add_argument("--design", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--group-size", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("anme", help="average normalized marginal entropy of plan CSVs")
    p.add_argument("plans", nargs="+")
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_anme, seed=None)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.output:
            with open(args.output, "w", newline="") as out:
                return args.func(args, out)
        return args.func(args, sys.stdout)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
