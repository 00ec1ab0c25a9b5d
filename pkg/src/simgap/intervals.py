"""Interval arithmetic for multivariate monomials over boxes.

Each monomial is a product of powers of distinct variables, so its range
over a box is the product of the per-variable power ranges and is exact.
Summing monomial ranges gives a (possibly conservative) enclosure of a
polynomial's range; differentiating termwise and bounding each partial
derivative the same way yields certified gradient bounds, hence Lipschitz
constants of fitted polynomials.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

Interval = Tuple[float, float]


def power_interval(lo: float, hi: float, k: int) -> Interval:
    """Range of x^k over [lo, hi]."""
    if k == 0:
        return (1.0, 1.0)
    if k == 1:
        return (lo, hi)
    a, b = lo ** k, hi ** k
    if k % 2 == 0 and lo < 0 < hi:
        return (0.0, max(a, b))
    return (min(a, b), max(a, b))


def mul_interval(x: Interval, y: Interval) -> Interval:
    vals = (x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
    return (min(vals), max(vals))


def scale_interval(x: Interval, c: float) -> Interval:
    a, b = x[0] * c, x[1] * c
    return (a, b) if a <= b else (b, a)


def add_interval(x: Interval, y: Interval) -> Interval:
    return (x[0] + y[0], x[1] + y[1])


def monomial_interval(exponents: Sequence[int], bounds: Sequence[Interval]) -> Interval:
    """Exact range of prod_i v_i^e_i when every v_i ranges over its own interval."""
    out: Interval = (1.0, 1.0)
    for e, (lo, hi) in zip(exponents, bounds):
        if e == 0:
            continue
        out = mul_interval(out, power_interval(lo, hi, e))
    return out


def polynomial_interval(exponents, coefficients, bounds) -> Interval:
    """Enclosure of sum_l c_l * monomial_l over the box; exact per term."""
    out: Interval = (0.0, 0.0)
    for exps, c in zip(exponents, coefficients):
        if c == 0.0:
            continue
        out = add_interval(out, scale_interval(monomial_interval(exps, bounds), c))
    return out


def _differentiate(exponents, coefficients, axis):
    """Termwise partial derivative; drops terms the axis does not appear in."""
    d_exps, d_coefs = [], []
    for exps, c in zip(exponents, coefficients):
        e = exps[axis]
        if e == 0 or c == 0.0:
            continue
        new = list(exps)
        new[axis] = e - 1
        d_exps.append(tuple(new))
        d_coefs.append(c * e)
    return d_exps, d_coefs


def gradient_sup_norms(exponents, coefficients, bounds, axes) -> np.ndarray:
    """sup |d poly / d v_a| over the box, for each axis in ``axes``."""
    sups = []
    for a in axes:
        d_exps, d_coefs = _differentiate(exponents, coefficients, a)
        if not d_exps:
            sups.append(0.0)
            continue
        lo, hi = polynomial_interval(d_exps, d_coefs, bounds)
        sups.append(max(abs(lo), abs(hi)))
    return np.array(sups)


def lipschitz_bound_in_state(exponents, coefficients, state_box, input_hull, n_state: int) -> float:
    """Euclidean Lipschitz constant of the polynomial in x, uniform over inputs.

    Bounds the gradient with x ranging over the state box and u over the hull
    of the input grid, then takes the norm of the per-axis suprema.
    """
    bounds = [tuple(row) for row in np.asarray(state_box, dtype=float)]
    bounds += [tuple(row) for row in np.asarray(input_hull, dtype=float)]
    sups = gradient_sup_norms(exponents, coefficients, bounds, range(n_state))
    return float(np.linalg.norm(sups))
