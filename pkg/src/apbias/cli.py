"""``apbias`` command-line driver."""

from __future__ import annotations

import argparse
import contextlib
import json
import math
import os
import sys
from typing import Sequence

from . import apkernel, biasstats, famsearch, families
from .apstore import ENV_DB, ApdbError, ApDatabase, db_create

VERBS = ("build", "lookup", "moments", "bias", "hist", "fit", "search", "rank", "verify")


def _family(text: str) -> families.Family:
    try:
        return families.parse_family(text)
    except families.FamilySpecError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _orders(text: str) -> tuple[int, ...]:
    try:
        orders = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad order list {text!r}") from exc
    if any(n < 1 or n > families.MAX_ORDER for n in orders):
        raise argparse.ArgumentTypeError(f"orders must lie in 1..{families.MAX_ORDER}")
    return orders


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _coeffs(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad coefficient set {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apbias", description="Frobenius trace database and second-moment bias tools.")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    def with_db(p):
        p.add_argument("--db", default=None, help=f"database path (default: ${ENV_DB})")
        return p

    def with_out(p):
        p.add_argument("--out", default=None, help="output file (default: stdout)")
        return p

    def with_range(p):
        p.add_argument("--pmin", type=int, default=None)
        p.add_argument("--pmax", type=int, default=None)
        p.add_argument("--skip", type=int, default=0, help="drop the first K primes of the range")
        p.add_argument("--mod", type=int, default=None, help="keep only primes p = CLASS mod M")
        p.add_argument("--class", dest="residue", type=int, default=None)
        return p

    b = sub.add_parser("build", help="create a database")
    b.add_argument("--pmax", type=int, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--kernel", choices=apkernel.KERNELS, default="naive")
    b.add_argument("--threads", type=_positive, default=os.cpu_count() or 1)
    b.add_argument("--quiet", action="store_true")

    lk = with_db(sub.add_parser("lookup", help="print -a_p for y^2 = x^3 + a x + b mod p"))
    lk.add_argument("--prime", type=int, required=True)
    lk.add_argument("--a", type=int, required=True)
    lk.add_argument("--b", type=int, required=True)

    m = with_range(with_out(with_db(sub.add_parser("moments", help="raw and normalised moments per prime"))))
    m.add_argument("--family", type=_family, required=True)
    m.add_argument("--orders", type=_orders, default=(2,))

    bi = with_range(with_out(with_db(sub.add_parser("bias", help="running averages of B_2"))))
    bi.add_argument("--family", type=_family, required=True)

    for verb, text in (("hist", "histogram of normalised moments"), ("fit", "truncated-normal fit and KS test")):
        h = with_range(with_out(with_db(sub.add_parser(verb, help=text))))
        h.add_argument("--family", type=_family, required=True)
        h.add_argument("--order", type=int, default=2)
        h.add_argument("--prime-norm", action="store_true", help="use B' instead of B")
        if verb == "hist":
            h.add_argument("--buckets", type=_positive, default=100)
            h.add_argument("--bounds", type=float, nargs=2, metavar=("LO", "HI"), default=None)
        else:
            h.add_argument("--match", choices=("parent", "truncated"), default="parent")
            h.add_argument("--trace-out", default=None, help="write the running variance trace CSV here")

    s = with_out(with_db(sub.add_parser("search", help="exhaustive positive-bias family search")))
    s.add_argument("--max-degree", type=int, default=5)
    s.add_argument("--coeffs", type=_coeffs, default=(0, 1))
    s.add_argument("--filter-pmax", type=int, default=1000)
    s.add_argument("--threshold", type=float, default=0.95)
    s.add_argument("--skip", type=int, default=0)
    s.add_argument("--stage2-pmax", type=int, default=None)
    s.add_argument("--threads", type=_positive, default=1)
    s.add_argument("--checkpoint", default=None)

    r = with_db(sub.add_parser("rank", help="first-moment rank statistic"))
    r.add_argument("--family", type=_family, required=True)
    r.add_argument("--x", dest="X", type=int, required=True)

    v = with_db(sub.add_parser("verify", help="structural checks and sampled re-derivation"))
    v.add_argument("--sample", type=int, default=1000, help="entries re-derived across the whole database")
    return parser


def _reject_unknown_flags(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    # argparse reports missing required options before unknown ones; name the bad flag first.
    if not argv or argv[0] not in VERBS:
        return
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    known = sub.choices[argv[0]]._option_string_actions
    for tok in argv[1:]:
        if tok.startswith("--") and tok.split("=", 1)[0] not in known:
            sub.choices[argv[0]].error(f"unrecognized arguments: {tok}")


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    _reject_unknown_flags(parser, argv)
    cmd = parser.parse_args(argv)
    if cmd.verb != "build":
        cmd.db = cmd.db or os.environ.get(ENV_DB)
        if not cmd.db:
            parser.error(f"--db is required (or set {ENV_DB})")
    if getattr(cmd, "mod", None) is not None:
        if cmd.mod < 2:
            parser.error("--mod must be at least 2")
        if cmd.residue is None:
            parser.error("--mod needs --class")
    if getattr(cmd, "skip", 0) < 0:
        parser.error("--skip must be nonnegative")
    if cmd.verb in ("hist", "fit") and (cmd.order < 2 or cmd.order % 2):
        parser.error("--order must be an even moment order")
    if cmd.verb == "build" and cmd.pmax < 3:
        parser.error("--pmax must be at least 3")
    return cmd


@contextlib.contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _series(db: ApDatabase, cmd, orders) -> families.MomentSeries:
    primes = families.select_primes(db, cmd.pmin, cmd.pmax, cmd.skip, cmd.mod, cmd.residue)
    return families.moment_series(db, cmd.family, orders, primes=primes)


def _filters(cmd) -> str:
    return f"pmin={cmd.pmin} pmax={cmd.pmax} skip={cmd.skip} mod={cmd.mod} class={cmd.residue}"


def _progress(done: int, total: int) -> None:
    if done == total or done % max(1, total // 100) == 0:
        print(f"\rbuilt {done}/{total} primes", end="\n" if done == total else "", file=sys.stderr, flush=True)


def _verify(db: ApDatabase, sample: int) -> tuple[bool, str]:
    primes = db.primes()
    per_prime = math.ceil(max(sample, 0) / len(primes))
    for p in primes:
        t = db.table(p)
        rep = apkernel.verify_table(t, per_prime, seed=p)
        if not rep:
            return False, f"p={p}: {rep.failure}"
    return True, f"ok: {len(primes)} primes, {per_prime} sampled entries per prime"


def execute(cmd: argparse.Namespace) -> int:
    if cmd.verb == "build":
        db_create(cmd.out, cmd.pmax, cmd.kernel, cmd.threads, None if cmd.quiet else _progress)
        return 0

    with ApDatabase(cmd.db) as db:
        if cmd.verb == "lookup":
            print(db.lookup_neg_ap(cmd.prime, cmd.a, cmd.b))
        elif cmd.verb == "moments":
            series = _series(db, cmd, cmd.orders)
            with _output(cmd.out) as fh:
                series.write_csv(fh)
        elif cmd.verb == "bias":
            series = _series(db, cmd, (2,))
            report = biasstats.running_averages(*series.b2(), filters=vars(cmd))
            print(f"# {cmd.family}: {_filters(cmd)}", file=sys.stderr)
            print(f"# final run_avg={report.final_run_avg!r} log_avg={report.final_log_avg!r}", file=sys.stderr)
            with _output(cmd.out) as fh:
                report.write_csv(fh)
        elif cmd.verb in ("hist", "fit"):
            series = _series(db, cmd, (cmd.order,))
            sample = (series.Bprime if cmd.prime_norm else series.B)[cmd.order]
            if cmd.verb == "hist":
                h = biasstats.histogram(sample, cmd.buckets, tuple(cmd.bounds) if cmd.bounds else None)
                if h.underflow or h.overflow:
                    print(f"# underflow={h.underflow} overflow={h.overflow}", file=sys.stderr)
                with _output(cmd.out) as fh:
                    h.write_csv(fh)
            else:
                summary = biasstats.summarize(sample, match=cmd.match)
                with _output(cmd.out) as fh:
                    fh.write(summary.fit_json() + "\n")
                if cmd.trace_out:
                    import csv

                    with open(cmd.trace_out, "w", newline="") as fh:
                        w = csv.writer(fh, lineterminator="\n")
                        w.writerow(["p", "variance"])
                        for p, v in zip(series.primes, summary.variance_trace):
                            w.writerow([p, repr(float(v))])
        elif cmd.verb == "search":
            cfg = famsearch.SearchConfig(
                max_degree=cmd.max_degree,
                coefficients=cmd.coeffs,
                filter_p_max=cmd.filter_pmax,
                threshold=cmd.threshold,
                skip=cmd.skip,
                stage2_p_max=cmd.stage2_pmax,
            )
            results = famsearch.search(db, cfg, threads=cmd.threads, checkpoint=cmd.checkpoint)
            print(f"# {famsearch.count_raw_pairs(cfg)} raw pairs, {len(results)} passed", file=sys.stderr)
            with _output(cmd.out) as fh:
                famsearch.write_report(results, fh)
        elif cmd.verb == "rank":
            print(repr(biasstats.rank_statistic(db, cmd.family, cmd.X)))
        elif cmd.verb == "verify":
            ok, message = _verify(db, cmd.sample)
            print(message)
            return 0 if ok else 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    cmd = parse_args(argv)
    try:
        return execute(cmd)
    except (ApdbError, ValueError, OSError) as exc:
        print(f"apbias {cmd.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
