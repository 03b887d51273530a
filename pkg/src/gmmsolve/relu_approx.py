"""Piecewise-linear scalar approximators realized as sums of ReLU units.

Each approximator is a chord interpolant of log(x) on [1/A, A] (knots
uniform in log space) or of x^2 on [-A, A] (uniform knots), written as
sum_j a_j * relu(w_j * x + b_j): one unit supplies the constant offset at
the left edge (w = 0) and one unit per knot supplies a slope change. The
unit count and the coefficient magnitudes obey hard budgets:

* log:    M = ceil(2 log A / tol) + 1 units
* square: M = ceil(2 A^2 / tol) + 1 units
* always: |a_j| <= 2A, |w_j| <= 1, |b_j| <= A

and the sup error on the stated domain is <= tol. The log interpolant is
non-decreasing everywhere and equals -log A for x <= 1/A, so feeding it a
(near-)zero probability yields a harmless floor instead of -inf.

Because unit counts reach 10^7 at tight tolerances, the defining triples
are generated on demand from the knot grid; evaluation goes through the
mathematically identical interpolant form (binary search + linear blend)
instead of summing the units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TARGETS = ("log", "square")


@dataclass(frozen=True)
class ReluScalarApprox:
    """A fixed sum-of-ReLUs scalar function; see the module docstring.

    ``knots``/``values`` define the chord interpolant; the equivalent
    (a_j, w_j, b_j) unit triples are produced by :meth:`pieces`.
    """

    target: str
    domain_bound: float
    tol: float
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.knots.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def piece_count(self) -> int:
        return self.knots.shape[0]  # (n_int knots-with-units) + 1 constant unit

    @property
    def domain(self) -> tuple[float, float]:
        lo = 1.0 / self.domain_bound if self.target == "log" else -self.domain_bound
        return (lo, self.domain_bound)

    def _slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def pieces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The (a, w, b) arrays of the defining ReLU units.

        Unit 0 is the constant: for log, a = values[0] acting on relu(1);
        for square, a = A acting on relu(A) (keeps |a| <= 2A even though
        the offset itself is A^2). Units 1.. place slope changes at every
        knot except the last; beyond the last knot the final chord slope
        continues.
        """
        slopes = self._slopes()
        coeffs = np.concatenate(([slopes[0]], np.diff(slopes)))
        if self.target == "log":
            const_a, const_b = float(self.values[0]), 1.0
        else:
            const_a, const_b = self.domain_bound, self.domain_bound
        a = np.concatenate(([const_a], coeffs))
        w = np.concatenate(([0.0], np.ones(coeffs.shape[0])))
        b = np.concatenate(([const_b], -self.knots[:-1]))
        return a, w, b

    def weight_budget(self) -> dict[str, float]:
        """Max |a_j|, |w_j|, |b_j| over all units (computed, not assumed)."""
        slopes = self._slopes()
        max_a = max(
            abs(float(self.values[0])) if self.target == "log" else self.domain_bound,
            float(np.max(np.abs(slopes[:1]))),
            float(np.max(np.abs(np.diff(slopes)))) if slopes.shape[0] > 1 else 0.0,
        )
        max_b = max(
            1.0 if self.target == "log" else self.domain_bound,
            float(np.max(np.abs(self.knots[:-1]))),
        )
        return {"a": max_a, "w": 1.0, "b": max_b}

    def evaluate(self, x):
        """Apply the function to a scalar or array.

        Identical to summing the ReLU units: constant at values[0] left of
        the first knot, chord interpolation inside, and linear continuation
        with the final chord slope to the right.
        """
        x = np.asarray(x, dtype=np.float64)
        out = np.interp(x, self.knots, self.values)
        hi = self.knots[-1]
        above = x > hi
        if np.any(above):
            last_slope = (self.values[-1] - self.values[-2]) / (self.knots[-1] - self.knots[-2])
            out = np.where(above, self.values[-1] + last_slope * (x - hi), out)
        return float(out) if out.ndim == 0 else out

    def evaluate_from_pieces(self, x):
        """Literal sum_j a_j relu(w_j x + b_j); O(M) per point, tests only."""
        a, w, b = self.pieces()
        x = np.asarray(x, dtype=np.float64)
        pre = np.multiply.outer(x, w) + b
        return np.maximum(pre, 0.0) @ a

    def sup_error(self, grid_size: int = 10_000) -> float:
        """Max |approx - target| over a uniform grid on the stated domain."""
        lo, hi = self.domain
        grid = np.linspace(lo, hi, grid_size)
        ref = np.log(grid) if self.target == "log" else grid**2
        return float(np.max(np.abs(self.evaluate(grid) - ref)))

    def payload(self) -> dict:
        """Defining parameters; build_relu_approx reconstructs bit-identically."""
        return {"target": self.target, "domain_bound": self.domain_bound, "tol": self.tol}


def build_relu_approx(target: str, domain_bound: float, tol: float) -> ReluScalarApprox:
    """Construct the log or square approximator for the given range and
    tolerance. Requires domain_bound > 1 and tol > 0."""
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")
    a = float(domain_bound)
    if not a > 1.0:
        raise ValueError("domain_bound must exceed 1")
    tol = float(tol)
    if not tol > 0.0:
        raise ValueError("tol must be positive")

    if target == "log":
        span = 2.0 * math.log(a)
        n_int = max(1, math.ceil(span / tol))
        exponents = -math.log(a) + (span / n_int) * np.arange(n_int + 1)
        knots = np.exp(exponents)
        values = exponents.copy()  # log at the knots, exact by construction
    else:
        n_int = max(1, math.ceil(2.0 * a * a / tol))
        knots = np.linspace(-a, a, n_int + 1)
        values = knots**2
    return ReluScalarApprox(target=target, domain_bound=a, tol=tol, knots=knots, values=values)
