"""Marginal / PR error metrics and a small corpus harness."""
from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ContractError, SlctfError

KL_FLOOR = 1e-16
DEFAULT_TIMEOUT = 3600.0


@dataclass
class ErrorReport:
    max_error: float = 0.0
    rmse: float = 0.0
    kl_mean: float = 0.0
    kl_max: float = 0.0
    delta_log_pr: float | None = None
    pr_flag: bool = False
    worst: list = field(default_factory=list)    # (variable, max abs error), largest first

    @property
    def score(self) -> float:
        return 10.0 ** (-self.kl_mean)


def compare_marginals(exact: Mapping[int, np.ndarray], approx: Mapping[int, np.ndarray],
                      skip=(), top: int = 5) -> ErrorReport:
    """Errors over all variables not in ``skip`` (evidence).

    RMSE and KL_mean are averaged over every state of every variable; KL_max is
    the largest single-state term. Natural log, Q floored at 1e-16.
    """
    if set(exact) != set(approx):
        raise ContractError("exact and approximate marginals cover different variables")
    vs = [v for v in sorted(exact) if v not in set(skip)]
    if not vs:
        return ErrorReport()
    sq, n_states, kl_sum, kl_top, per = 0.0, 0, 0.0, 0.0, []
    for v in vs:
        p = np.asarray(exact[v], dtype=float)
        q = np.asarray(approx[v], dtype=float)
        if p.shape != q.shape:
            raise ContractError(f"variable {v}: shapes {p.shape} and {q.shape} differ")
        d = np.abs(p - q)
        per.append((v, float(d.max())))
        sq += float((d ** 2).sum())
        n_states += d.size
        nz = p > 0
        terms = p[nz] * np.log(p[nz] / np.maximum(q[nz], KL_FLOOR))
        kl_sum += float(terms.sum())
        if terms.size:
            kl_top = max(kl_top, float(terms.max()))
    per.sort(key=lambda t: (-t[1], t[0]))
    return ErrorReport(max_error=per[0][1], rmse=math.sqrt(sq / n_states),
                       kl_mean=max(0.0, kl_sum / n_states), kl_max=kl_top,
                       worst=per[:top])


def compare_pr(exact_log_pr: float, approx_log_pr: float) -> tuple[float, bool]:
    """(|difference|, flag). Flag is set when exactly one side is -inf."""
    a, b = math.isinf(exact_log_pr), math.isinf(approx_log_pr)
    if a and b:
        return 0.0, False
    if a or b:
        return math.inf, True
    return abs(exact_log_pr - approx_log_pr), False


# suite harness

@dataclass
class SuiteConfig:
    task: str = "MAR"
    mcs_p: float = 20
    mcs_im: float | None = None
    timeout: float = DEFAULT_TIMEOUT
    jobs: int = 1
    all_links: bool = False


def _instances(corpus: Path) -> list[tuple[str, Path, Path | None, Path | None]]:
    out = []
    for net in sorted(corpus.glob("*.uai")):
        ev = net.with_name(net.name + ".evid")
        if not ev.exists():
            ev = net.with_suffix(".evid")
        task_ref = None
        for suf in (".MAR", ".PR", ".MAR_P"):
            cand = net.with_name(net.name + suf)
            if cand.exists():
                task_ref = cand
                break
        out.append((net.stem, net, ev if ev.exists() else None, task_ref))
    return out


def _solve(args):
    name, net_path, ev_path, ref_path, cfg = args
    from .engine import run
    from .oracle import exact_query
    from .uai import load_problem, parse_results
    t0 = time.perf_counter()
    prob = load_problem(net_path, ev_path)
    res = run(prob.network, prob.evidence, cfg.task, cfg.mcs_p, cfg.mcs_im, cfg.all_links)
    elapsed = time.perf_counter() - t0
    if ref_path is not None:
        kind, val = parse_results(Path(ref_path).read_bytes())
        ref_pr = val * math.log(10) if kind == "PR" else None
        ref_marg = val if kind == "MAR" else None
    else:
        ex = exact_query(prob.network, prob.evidence, cfg.task)
        ref_pr, ref_marg = ex.log_pr, ex.marginals
    row = {"instance": name, "status": "ok", "time_s": elapsed, "log_pr": res.log_pr,
           "n_ctf": max(res.metadata["n_ctf"], default=0)}
    if cfg.task == "PR" and ref_pr is not None:
        d, flag = compare_pr(ref_pr, res.log_pr)
        row.update(delta_log_pr=d, pr_flag=flag)
    if cfg.task != "PR" and ref_marg is not None:
        rep = compare_marginals(ref_marg, res.marginals, skip=prob.evidence)
        row.update(max_error=rep.max_error, rmse=rep.rmse, kl_mean=rep.kl_mean, kl_max=rep.kl_max,
                   score=rep.score)
    return row


def _worker(q, args):
    try:
        q.put(_solve(args))
    except SlctfError as e:
        q.put({"instance": args[0], "status": f"error: {e}", "score": 0.0})
    except Exception as e:   # keep the suite going
        q.put({"instance": args[0], "status": f"crash: {type(e).__name__}: {e}", "score": 0.0})


def _run_one(args):
    """Run one instance in a child process so the wall-clock limit can be enforced."""
    name, cfg = args[0], args[-1]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    q = ctx.Queue()
    p = ctx.Process(target=_worker, args=(q, args))
    t0 = time.perf_counter()
    p.start()
    try:
        row = q.get(timeout=cfg.timeout)
    except Exception:
        row = None
    p.join(timeout=1.0)
    if p.is_alive():
        p.terminate()
        p.join()
    if row is None:
        row = {"instance": name, "status": "timeout", "time_s": time.perf_counter() - t0, "score": 0.0}
    return row


COLUMNS = ["instance", "status", "time_s", "n_ctf", "log_pr", "delta_log_pr", "pr_flag",
           "max_error", "rmse", "kl_mean", "kl_max", "score"]


@dataclass
class SuiteReport:
    rows: list = field(default_factory=list)

    @property
    def sum_score(self) -> float:
        return float(sum(r.get("score", 0.0) or 0.0 for r in self.rows))

    def score_curve(self) -> list[tuple[float, float]]:
        """(time limit, SumScore of instances finished within it), one point per row."""
        done = sorted((r.get("time_s", math.inf), r.get("score", 0.0) or 0.0) for r in self.rows
                      if r.get("status") == "ok")
        out, acc = [], 0.0
        for t, s in done:
            acc += s
            out.append((t, acc))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: r.get(k, "") for k in COLUMNS})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "sum_score": self.sum_score, "curve": self.score_curve()},
                          indent=1, sort_keys=True, default=str)


def run_suite(corpus, config: SuiteConfig | None = None) -> SuiteReport:
    """Run every ``*.uai`` in ``corpus``; reference results (``name.uai.MAR`` etc.)
    are used when present, otherwise the exact oracle."""
    cfg = config or SuiteConfig()
    corpus = Path(corpus)
    jobs = [(name, net, ev, ref, cfg) for name, net, ev, ref in _instances(corpus)]
    if cfg.jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(cfg.jobs) as ex:
            rows = list(ex.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    rows.sort(key=lambda r: r["instance"])
    return SuiteReport(rows)


def report_dict(rep: ErrorReport) -> dict:
    d = asdict(rep)
    d["score"] = rep.score
    return d
