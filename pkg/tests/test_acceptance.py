"""Acceptance suite: every exit criterion at its full budget.

Each experiment runs once, writes its report, and is read back from disk;
thresholds come from the stored verdicts, never from this file. One
PASS/FAIL line per criterion is printed at the end of the session (or when
run as a script: ``python3 tests/test_acceptance.py``).
"""

import os
import sys
from pathlib import Path

import pytest

from spinchain.config import default_config
from spinchain.experiments import CRITERIA, run_experiment
from spinchain.reporting import load_report

TITLES = {
    1: "oracle triangle (Gaussian)",
    2: "Fourier identity vs quadrature",
    3: "observable equivalence slope",
    4: "correlation equivalence slope",
    5: "ce spin-spin structure",
    6: "gce exponential decay",
    7: "g(0) boundedness",
    8: "variance band",
    9: "moment scalings",
    10: "sampler correctness",
    11: "mean conservation",
}

LINES = {}
_reports = {}


def _out_dir():
    return Path(os.environ.get("SPINCHAIN_ACCEPTANCE_OUT", "acceptance-out"))


def report_for(eid):
    if eid not in _reports:
        rep = run_experiment(eid, default_config(), seed=0)
        _reports[eid] = load_report(rep.write(_out_dir()))
    return _reports[eid]


def evaluate(k):
    rep = report_for(CRITERIA[k])
    verdicts = rep.for_criterion(k)
    ok = bool(verdicts) and all(v.passed for v in verdicts)
    detail = "; ".join(v.describe() for v in verdicts) or "no verdicts recorded"
    LINES[k] = f"criterion {k:2d} [{'PASS' if ok else 'FAIL'}] {TITLES[k]}: {detail}"
    return ok, verdicts


@pytest.mark.acceptance
@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA), ids=[f"criterion-{k:02d}" for k in sorted(CRITERIA)])
def test_criterion(k):
    ok, verdicts = evaluate(k)
    failed = [v.describe() for v in verdicts if not v.passed]
    assert verdicts, f"experiment {CRITERIA[k]} recorded no verdicts for criterion {k}"
    assert ok, "; ".join(failed)


def summary_lines():
    return [LINES[k] for k in sorted(LINES)]


if __name__ == "__main__":
    for k in sorted(CRITERIA):
        evaluate(k)
        print(LINES[k], flush=True)
    sys.exit(0 if all("[PASS]" in line for line in LINES.values()) else 1)
