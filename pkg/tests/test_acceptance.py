"""Acceptance criteria, each at its stated tolerance and size.

Every test prints one ``[PASS]``/``[FAIL]`` line (visible even without
``-s``) and then asserts the outcome.
"""
import pytest

from posmatch import acceptance


def check(capsys, result):
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()


def test_1_encoding_relative_identity(capsys):
    check(capsys, acceptance.criterion_encoding(trials=1000, budget=5.0))


def test_2_procrustes_optimality(capsys):
    check(capsys, acceptance.criterion_procrustes(pairs=500, candidates=100_000, budget=60.0))


def test_3_jacobian_against_finite_differences(capsys):
    check(capsys, acceptance.criterion_jacobian(graphs=20, budget=30.0))


def test_4_nicp_recovery(capsys):
    check(capsys, acceptance.criterion_nicp(budget=120.0))


def test_5_metrics_against_brute_force(capsys):
    check(capsys, acceptance.criterion_metrics(instances=200))


def test_6_dual_softmax_properties(capsys):
    check(capsys, acceptance.criterion_dual_softmax(matrices=1000))


@pytest.mark.slow
def test_7_two_pass_pipeline(capsys):
    check(capsys, acceptance.criterion_pipeline(trials=50, budget=300.0))


def test_8_hyperparameter_defaults(capsys):
    check(capsys, acceptance.criterion_config())
