"""Central finite-difference verification of analytic gradients.

Runs at float64 only: at single precision the difference quotient loses too
many digits for a meaningful comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    tolerance: float
    per_input: list = field(default_factory=list)

    @property
    def ok(self):
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        return f"gradcheck {status}: max rel error {self.max_rel_error:.3e} (tol {self.tolerance:.1e})"


def gradcheck(fn, inputs, eps=1e-5, tol=1e-4, max_elements=None, rng=None):
    """Compare fn's analytic input gradients against central differences.

    ``fn`` maps the given float64 tensors to a scalar tensor and must be
    re-evaluatable (stateful layers need fresh buffers per call). With
    ``max_elements`` set, only a random coordinate subset per input is
    probed, which keeps whole-network checks tractable.
    """
    for i, t in enumerate(inputs):
        if t.dtype != np.float64:
            raise TypeError(f"gradcheck input {i} must be float64, got {t.dtype}")
        if not t.requires_grad:
            raise ValueError(f"gradcheck input {i} must require gradients")
        t.zero_grad()

    out = fn(*inputs)
    if out.size != 1:
        raise ValueError("gradcheck target function must return a scalar")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    result = GradCheckResult(max_rel_error=0.0, tolerance=tol)
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            coords = rng.choice(flat.size, size=max_elements, replace=False)
        worst = 0.0
        for k in coords:
            orig = flat[k]
            with no_grad():
                flat[k] = orig + eps
                f_plus = fn(*inputs).item()
                flat[k] = orig - eps
                f_minus = fn(*inputs).item()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = ana.reshape(-1)[k]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
        result.per_input.append(worst)
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
