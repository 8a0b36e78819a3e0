import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oracles import marginals_by_loops
from slctf import cli
from slctf.errors import UnsatisfiableApproximationError
from slctf.uai import parse_results, parse_uai

DATA = Path(__file__).parent / "data"
NET = str(DATA / "seventeen.uai")
EVID = str(DATA / "seventeen.uai.evid")


def _net():
    return parse_uai((DATA / "seventeen.uai").read_bytes())


def test_infer_pr_and_outputs(tmp_path, capsys):
    rc = cli.main(["infer", "-i", NET, "-e", EVID, "--task", "PR", "--mcs-p", "20", "--out-dir", str(tmp_path)])
    assert rc == 0
    kind, log10 = parse_results(capsys.readouterr().out)
    z, _ = marginals_by_loops(_net(), {4: 0, 15: 1})
    assert kind == "PR" and log10 == pytest.approx(math.log10(z), rel=1e-6)
    rec = json.loads((tmp_path / "seventeen.uai.PR.json").read_text())
    assert rec["task"] == "PR" and not rec["pr_is_zero"]
    assert (tmp_path / "seventeen.uai.PR").read_text().startswith("PR\n")


def test_infer_mar_small_bound(capsys):
    assert cli.main(["infer", "-i", NET, "-e", EVID, "--mcs-p", "4", "--mcs-im", "3"]) == 0
    kind, marg = parse_results(capsys.readouterr().out)
    _, ref = marginals_by_loops(_net(), {4: 0, 15: 1})
    assert kind == "MAR" and len(marg) == 17
    assert max(np.abs(marg[v] - ref[v]).max() for v in marg) <= 0.1


def test_exact_matches_oracle(capsys):
    assert cli.main(["exact", "-i", NET, "-e", EVID]) == 0
    _, marg = parse_results(capsys.readouterr().out)
    _, ref = marginals_by_loops(_net(), {4: 0, 15: 1})
    for v in marg:
        np.testing.assert_allclose(marg[v], ref[v], atol=1e-9)


def test_check_and_compare_compile(capsys):
    assert cli.main(["check", "-i", str(DATA / "seven.uai")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("cliques 5 trees 1 max_size 3")
    assert cli.main(["compare-compile", "-i", str(DATA / "seven.uai"), "--mcs-p", "10"]) == 0
    assert "delta 0" in capsys.readouterr().out


def test_bench(tmp_path, capsys):
    corpus = tmp_path / "c"
    corpus.mkdir()
    for f in ("seventeen.uai", "seventeen.uai.evid"):
        (corpus / f).write_bytes((DATA / f).read_bytes())
    rc = cli.main(["bench", str(corpus), "--mcs-p", "4", "--mcs-im", "3", "--out-dir", str(tmp_path / "o")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "seventeen,ok" in out and "# sum_score" in out
    assert (tmp_path / "o" / "suite.json").exists()


def test_exit_codes(tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.uai"
    bad.write_text("BAYES\n1\n2\n1\n1 0\n\n2\n0.6")
    assert cli.main(["infer", "-i", str(bad)]) == 2
    assert cli.main(["infer", "-i", str(tmp_path / "missing.uai")]) == 2
    assert cli.main(["infer", "-i", NET, "--mcs-p", "4", "--mcs-im", "5"]) == 3
    assert cli.main(["infer", "-i", NET, "--mcs-p", "1"]) == 3
    monkeypatch.setenv("IBIA_MCS_P", "lots")
    assert cli.main(["infer", "-i", NET]) == 3
    monkeypatch.delenv("IBIA_MCS_P")
    assert cli.main(["exact", "-i", NET, "--timeout", "1e-6"]) == 5
    assert "error:" in capsys.readouterr().err


def test_unsatisfiable_exit_and_retry(monkeypatch, capsys):
    import slctf.engine as engine
    real = engine.run
    seen = []

    def fake(net, ev, task, mcs_p, mcs_im=None, *a, **k):
        seen.append(mcs_im)
        if mcs_im > 2:
            raise UnsatisfiableApproximationError("clique of interface variables too large")
        return real(net, ev, task, mcs_p, mcs_im, *a, **k)
    monkeypatch.setattr(engine, "run", fake)
    assert cli.main(["infer", "-i", NET, "-e", EVID, "--mcs-p", "4", "--mcs-im", "3"]) == 4
    seen.clear()
    assert cli.main(["infer", "-i", NET, "-e", EVID, "--mcs-p", "4", "--mcs-im", "3", "--mcs-im-floor", "2"]) == 0
    assert seen == [3, 2]


def test_env_defaults(monkeypatch, capsys):
    monkeypatch.setenv("IBIA_TASK", "PR")
    assert cli.main(["infer", "-i", NET]) == 0
    assert capsys.readouterr().out == "PR\n0\n"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "slctf", "check", "-i", str(DATA / "seven.uai")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.splitlines()[-1] == "valid"
