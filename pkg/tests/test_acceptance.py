"""The acceptance gate: every criterion at its pinned tolerance, one per test.

Each test prints the criterion's metric lines (visible with -s or on failure)
and asserts pass/fail exactly as the runners computed it — no slack is added
or removed here.  Budgeted criteria also assert their wall-clock limit.
"""
from defaultlab import acceptance as acc


def _check(result):
    for line in result.lines():
        print(line)
    failed = [m.name for m in result.metrics if not m.passed]
    assert not failed, f"{result.name} ({result.label}) failed metrics: {failed}"
    if result.budget is not None:
        assert result.seconds <= result.budget, (
            f"{result.name} took {result.seconds:.1f}s, budget {result.budget:.0f}s"
        )
    assert result.passed


def test_a1_enlargement_identities():
    _check(acc.a1())


def test_a2_joint_compensator_residuals():
    _check(acc.a2())


def test_a3_tree_representation():
    _check(acc.a3())


def test_a4_merton_benchmark():
    _check(acc.a4())


def test_a5_bond_indifference_price():
    _check(acc.a5())


def test_a6_martingale_optimality():
    _check(acc.a6())


def test_a7_dp_bsde_consistency():
    _check(acc.a7())


def test_a8_random_horizon():
    _check(acc.a8())


def test_a9_factorization_identity():
    _check(acc.a9())


def test_a10_worker_reproducibility():
    _check(acc.a10())
