"""The finite-difference checker itself: it must pass correct gradients,
fail corrupted ones, and refuse setups that would make its oracle lie."""

import numpy as np
import pytest

from trivit import autodiff as ad
from trivit.gradcheck import OracleInvalidError, grad_check
from trivit.params import ParameterStore


def make_store():
    store = ParameterStore()
    store.add("w", np.array([0.5, -1.2, 2.0]))
    store.add("b", np.array([0.3]))
    return store


def quadratic(store):
    # sum((w*2 + b)^2): known closed-form gradient, nonlinear in w
    return ad.reduce_sum(ad.square(store["w"] * 2.0 + store["b"]))


def test_correct_gradient_passes():
    report = grad_check(quadratic, make_store())
    assert report.passed
    assert report.max_rel_err < 1e-6
    assert set(report.per_param) == {"w", "b"}


def test_corrupt_hook_fails_and_names_param():
    report = grad_check(quadratic, make_store(), corrupt={"w": 0.05})
    assert not report.passed
    assert report.worst_param == "w"
    assert report.per_param["b"] < 1e-6  # untouched param still clean
    assert "FAIL" in report.summary_lines()[-1]


def test_tolerance_boundary():
    # the same small corruption passes a loose tolerance and fails a tight one
    loose = grad_check(quadratic, make_store(), corrupt={"b": 1e-5}, tol=1e-2)
    tight = grad_check(quadratic, make_store(), corrupt={"b": 1e-5}, tol=1e-8)
    assert loose.passed and not tight.passed


def test_float32_store_rejected():
    store = ParameterStore()
    store.add("w", np.zeros(2, dtype=np.float32))
    with pytest.raises(OracleInvalidError, match="float64"):
        grad_check(quadratic, store)


def test_nondeterministic_f_rejected():
    store = make_store()
    rng = np.random.default_rng(0)

    def noisy(s):
        return ad.reduce_sum(s["w"] * rng.standard_normal(3))

    with pytest.raises(OracleInvalidError, match="not deterministic"):
        grad_check(noisy, store)


def test_state_restored_after_check():
    store = make_store()
    before = store.copy_values()
    grad_check(quadratic, store)
    after = store.copy_values()
    for path in before:
        np.testing.assert_array_equal(after[path], before[path])
        assert store[path].grad is None


def test_report_summary_format():
    report = grad_check(quadratic, make_store())
    lines = report.summary_lines()
    assert len(lines) == 3  # one per param + overall
    assert lines[-1].endswith("PASS")
    assert any(line.startswith("w:") for line in lines)


def test_zero_grad_param_checks_clean():
    # a parameter the loss never touches has analytic grad 0 == numeric 0
    store = make_store()
    store.add("unused", np.array([4.0]))

    report = grad_check(quadratic, store)
    assert report.passed
    assert report.per_param["unused"] == 0.0
