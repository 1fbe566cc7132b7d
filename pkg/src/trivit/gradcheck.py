"""Finite-difference verification of analytic gradients.

The oracle is a central difference evaluated parameter-scalar by
parameter-scalar in float64; it never touches the reverse-mode code it
is checking.
"""

from dataclasses import dataclass, field

import numpy as np


class OracleInvalidError(Exception):
    """The function under test is not deterministic (or not float64)."""


@dataclass
class GradCheckReport:
    h: float
    tol: float
    per_param: dict = field(default_factory=dict)  # path -> max relative error
    max_rel_err: float = 0.0
    worst_param: str = ""
    passed: bool = False

    def summary_lines(self):
        lines = [f"{path}: max rel err {err:.3e}" for path, err in sorted(self.per_param.items())]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"overall max rel err {self.max_rel_err:.3e} (worst: {self.worst_param}) -> {status}")
        return lines


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(f, store, h=1e-5, tol=1e-4, corrupt=None):
    """Compare analytic gradients of ``f(store)`` against central differences.

    ``f`` must return a scalar Tensor built from the store's parameters and
    be deterministic; two evaluations at the same point are required to be
    bitwise identical, otherwise the finite-difference oracle is invalid.
    ``corrupt`` (path -> offset) is a test hook that perturbs the analytic
    gradient before comparison, to prove the check can fail.
    """
    for path, t in store.items():
        if t.data.dtype != np.float64:
            raise OracleInvalidError(f"parameter {path!r} is {t.data.dtype}, need float64")

    v1 = float(f(store).data)
    v2 = float(f(store).data)
    if v1 != v2:
        raise OracleInvalidError(f"f is not deterministic: {v1!r} != {v2!r}")

    store.zero_grad()
    out = f(store)
    out.backward()
    analytic = {}
    for path, t in store.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        g = g.copy()
        if corrupt and path in corrupt:
            g += corrupt[path]
        analytic[path] = g

    report = GradCheckReport(h=h, tol=tol)
    for path, t in store.items():
        flat = t.data.reshape(-1)
        aflat = analytic[path].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(store).data)
            flat[i] = orig - h
            fm = float(f(store).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, _rel_err(float(aflat[i]), numeric))
        report.per_param[path] = worst
    if report.per_param:
        report.worst_param = max(report.per_param, key=report.per_param.get)
        report.max_rel_err = report.per_param[report.worst_param]
    report.passed = report.max_rel_err < tol
    store.zero_grad()
    return report
