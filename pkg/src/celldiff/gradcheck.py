"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericalError(RuntimeError):
    pass


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    worst_param: str = ""
    per_param: dict = field(default_factory=dict)


def gradcheck(loss_fn, params, h=1e-5, tolerance=1e-6):
    """Compare backward() gradients of `loss_fn()` against central finite
    differences over every entry of every parameter.

    `loss_fn` must be a pure function of the current parameter values and
    return a scalar Tensor.  Relative error uses the conventional
    denominator max(1, |analytic|, |numeric|) so near-zero gradients are
    judged on absolute error.
    """
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ValueError("parameter names must be unique for gradcheck")
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericalError("non-finite loss in gradcheck forward pass")
    loss.backward()
    analytic = {p.name: (np.zeros_like(p.data) if p.grad is None
                         else p.grad.copy()) for p in params}

    max_rel = 0.0
    worst = ""
    per_param = {}
    for p in params:
        a = analytic[p.name]
        flat = p.data.reshape(-1)
        rel_p = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn().data)
            flat[i] = orig - h
            lm = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError(
                    f"non-finite value perturbing {p.name}[{i}]")
            numeric = (lp - lm) / (2.0 * h)
            an = a.reshape(-1)[i]
            rel = abs(an - numeric) / max(1.0, abs(an), abs(numeric))
            rel_p = max(rel_p, rel)
        per_param[p.name] = rel_p
        if rel_p > max_rel:
            max_rel, worst = rel_p, p.name
    return GradcheckReport(max_rel_error=max_rel, tolerance=tolerance,
                           passed=max_rel < tolerance, worst_param=worst,
                           per_param=per_param)
