"""Acceptance gate: the nine shipping criteria, one test each.

Every test prints its criterion's one-line verdict (shown with -s, or in
the failure report) and asserts it. The identical checks back the
`lesionseg verify` subcommand, which must finish in under five minutes
on a single CPU core.
"""

import time

import pytest

from lesionseg import verify


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    return verify.Workspace(tmp_path_factory.mktemp("acceptance"))


def _run(number, ws):
    _, name, fn = next(c for c in verify.CRITERIA if c[0] == number)
    t0 = time.time()
    passed, detail = fn(ws)
    line = verify.CriterionResult(number, name, bool(passed), detail,
                                  time.time() - t0).line()
    print(line)
    assert passed, line


def test_criterion_1_gradient_suite(ws):
    _run(1, ws)


def test_criterion_2_metric_oracle(ws):
    _run(2, ws)


def test_criterion_3_attention_invariants(ws):
    _run(3, ws)


def test_criterion_4_prior_gating_identities(ws):
    _run(4, ws)


def test_criterion_5_overfit_experiment(ws):
    _run(5, ws)


def test_criterion_6_generalization(ws):
    _run(6, ws)


def test_criterion_7_ablation_direction(ws):
    _run(7, ws)


def test_criterion_8_determinism_and_persistence(ws):
    _run(8, ws)


def test_criterion_9_format_fidelity(ws):
    _run(9, ws)
