"""Command line: infer, exact, check, compare-compile, bench."""
from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
from pathlib import Path

from .errors import ConfigError, InstanceTimeout, SlctfError, UnsatisfiableApproximationError

log = logging.getLogger("slctf")

ENV_PREFIX = "IBIA_"
_ENV_KEYS = {"task": str, "mcs_p": float, "mcs_im": float, "seed": int, "timeout": float, "jobs": int,
             "out_dir": str, "mcs_im_floor": float}


def _env_defaults() -> dict:
    out = {}
    for k, typ in _ENV_KEYS.items():
        raw = os.environ.get(ENV_PREFIX + k.upper())
        if raw is None:
            continue
        try:
            out[k] = typ(raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for {ENV_PREFIX + k.upper()}") from None
    if os.environ.get(ENV_PREFIX + "ALL_LINKS", "").lower() in ("1", "true", "yes"):
        out["all_links"] = True
    return out


def _common(p: argparse.ArgumentParser, with_task=True):
    p.add_argument("--input", "-i", required=True, help="network in UAI BAYES format")
    p.add_argument("--evidence", "-e", help="UAI evidence file")
    if with_task:
        p.add_argument("--task", choices=["PR", "MAR", "MAR_P"], default="MAR")
    p.add_argument("--out-dir", help="write <name>.<TASK> and <name>.<TASK>.json here")
    p.add_argument("--timeout", type=float, default=0, help="seconds, 0 = none")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slctf", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("infer", help="approximate inference")
    _common(p)
    p.add_argument("--mcs-p", type=float, default=20.0)
    p.add_argument("--mcs-im", type=float, default=None, help="default: mcs_p - 5")
    p.add_argument("--mcs-im-floor", type=float, default=None,
                   help="on an unsatisfiable approximation retry with smaller mcs_im down to this value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--all-links", action="store_true", help="backward update through every link")

    p = sub.add_parser("exact", help="exact answer by enumeration or a full junction tree")
    _common(p)

    p = sub.add_parser("check", help="compile fully and report clique tree validity")
    p.add_argument("--input", "-i", required=True)

    p = sub.add_parser("compare-compile", help="incremental vs full compilation clique sizes")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--mcs-p", type=float, default=20.0)

    p = sub.add_parser("bench", help="run a corpus of .uai/.evid files")
    p.add_argument("corpus")
    p.add_argument("--task", choices=["PR", "MAR", "MAR_P"], default="MAR")
    p.add_argument("--mcs-p", type=float, default=20.0)
    p.add_argument("--mcs-im", type=float, default=None)
    p.add_argument("--timeout", type=float, default=3600.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--all-links", action="store_true")
    p.add_argument("--out-dir", help="write suite.csv and suite.json here")
    return ap


def _alarm(seconds: float):
    if seconds and seconds > 0 and hasattr(signal, "SIGALRM"):
        def handler(signum, frame):
            raise InstanceTimeout(f"time limit of {seconds:g} s reached")
        signal.signal(signal.SIGALRM, handler)
        signal.setitimer(signal.ITIMER_REAL, seconds)


def _emit(args, result, task):
    from .uai import result_json, write_results
    text = write_results(task, result)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(args.input).name
        (out / f"{stem}.{task}").write_text(text)
        (out / f"{stem}.{task}.json").write_text(result_json(result) + "\n")
    sys.stdout.write(text)


def cmd_infer(args) -> int:
    from .engine import run
    from .uai import load_problem
    prob = load_problem(args.input, args.evidence)
    mcs_im = args.mcs_im if args.mcs_im is not None else args.mcs_p - 5
    if mcs_im >= args.mcs_p:
        raise ConfigError(f"mcs_im ({mcs_im}) must be below mcs_p ({args.mcs_p})")
    big = prob.network.max_cpd_size()
    if big > args.mcs_p + 1e-9:
        raise ConfigError(f"largest CPD has size {big:.3g} > mcs_p={args.mcs_p}")
    while True:
        try:
            res = run(prob.network, prob.evidence, args.task, args.mcs_p, mcs_im, args.all_links)
            break
        except UnsatisfiableApproximationError as e:
            if args.mcs_im_floor is None or mcs_im - 1 < args.mcs_im_floor:
                raise
            log.warning("%s; retrying with mcs_im=%g", e, mcs_im - 1)
            mcs_im -= 1
    for k in ("n_ctf", "i_e"):
        log.info("%s = %s", k, res.metadata[k])
    _emit(args, res, args.task)
    return 0


def cmd_exact(args) -> int:
    from .oracle import exact_query
    from .uai import load_problem
    prob = load_problem(args.input, args.evidence)
    _emit(args, exact_query(prob.network, prob.evidence, args.task), args.task)
    return 0


def cmd_check(args) -> int:
    from .forest import check_valid
    from .oracle import full_compile
    from .uai import parse_uai
    net = parse_uai(Path(args.input).read_bytes())
    ctf = full_compile(net)
    rep = check_valid(ctf, [net.cpds[v] for v in net.variables])
    print(f"cliques {len(ctf.cliques)} trees {len(ctf.trees())} max_size {ctf.max_size():.4g}")
    print(rep)
    return 0 if rep.ok else 1


def cmd_compare_compile(args) -> int:
    from .build import compare_full_compile
    from .engine import construct_slctf
    from .network import split_components
    from .uai import parse_uai
    net = parse_uai(Path(args.input).read_bytes())
    for k, dag in enumerate(split_components(net)):
        s = construct_slctf(dag, {}, False, args.mcs_p, args.mcs_p - 5)
        rep = compare_full_compile(s.ctfs[0], dag)
        print(f"dag {k}: n_vars {rep.n_vars} mcs_ibia {rep.mcs_ibia:.4g} mcs_f {rep.mcs_f:.4g} "
              f"delta {rep.delta:.4g}")
    return 0


def cmd_bench(args) -> int:
    from .metrics import SuiteConfig, run_suite
    cfg = SuiteConfig(args.task, args.mcs_p, args.mcs_im, args.timeout, args.jobs, args.all_links)
    rep = run_suite(args.corpus, cfg)
    csv_text = rep.to_csv()
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "suite.csv").write_text(csv_text)
        (out / "suite.json").write_text(rep.to_json() + "\n")
    sys.stdout.write(csv_text)
    print(f"# sum_score {rep.sum_score:.6g}")
    return 0


COMMANDS = {"infer": cmd_infer, "exact": cmd_exact, "check": cmd_check,
            "compare-compile": cmd_compare_compile, "bench": cmd_bench}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        env = _env_defaults()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    ap.set_defaults(**env)
    for sp in ap._subparsers._group_actions[0].choices.values():
        sp.set_defaults(**{k: v for k, v in env.items() if k in {a.dest for a in sp._actions}})
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd in ("infer", "exact"):
            _alarm(args.timeout)
        return COMMANDS[args.cmd](args)
    except SlctfError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        if hasattr(signal, "SIGALRM"):
            signal.setitimer(signal.ITIMER_REAL, 0)


if __name__ == "__main__":
    sys.exit(main())
