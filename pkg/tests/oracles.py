"""Independent oracles used across the test suite.

Everything here is quadrature- or enumeration-based and never touches the
Monte-Carlo estimation paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np

from mim.quadrature import gauss_hermite_grid


def quad_expectation_1d(f, nodes: int = 64) -> float:
    """E[f(Z)] for scalar standard Gaussian Z."""
    pts, wts = gauss_hermite_grid(1, nodes)
    return float(wts @ f(pts[:, 0]))


def monic_hermite(k: int, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    prev, cur = np.ones_like(u), u.copy()
    if k == 0:
        return prev
    for m in range(1, k):
        prev, cur = cur, u * cur - m * prev
    return cur


def halfline_moment(k: int) -> float:
    """E[He_k(Z) 1(Z > 0)] by quadrature."""
    return quad_expectation_1d(lambda u: monic_hermite(k, u) * (u > 0))


def parity2_lambda_sq(k: int) -> float:
    """Total conditional signal of order k for noiseless 2-parity.

    Conditioning on the sign of z1 z2 splits the plane into matched
    quadrant pairs; the conditional mean of He_a(z1) He_b(z2) is
    2 [E(He_a 1+) E(He_b 1+) + E(He_a 1-) E(He_b 1-)], which vanishes
    unless both a and b are odd. Entries are normalized by sqrt(k!) and
    counted with tuple multiplicity k! / (a! b!).
    """
    total = 0.0
    for a in range(k + 1):
        b = k - a
        if a % 2 == 0 or b % 2 == 0:
            continue
        ha = halfline_moment(a)
        hb = halfline_moment(b)
        cond = 4.0 * ha * hb  # both-positive and both-negative quadrants
        total += cond**2 / (math.factorial(a) * math.factorial(b))
    return total


def abs_z_mean() -> float:
    """E|Z| by quadrature (equals sqrt(2/pi))."""
    return quad_expectation_1d(np.abs)


def sign_link_info_moment(j: int, link_poly) -> float:
    """E[link(Z) He_j(Z)/sqrt(j!)] by quadrature."""
    val = quad_expectation_1d(lambda u: link_poly(u) * monic_hermite(j, u))
    return val / math.sqrt(math.factorial(j))


def noisy_sign_chi_sq(eta: float) -> float:
    """Divergence for the eta-noisy sign link, by quadrature.

    The conditional law takes values {eta, 1 - eta} and both label values
    have probability 1/2, so the ratio-squared expectation reduces to
    2 (eta^2 + (1-eta)^2) - 1.
    """
    plus = quad_expectation_1d(lambda u: np.where(u > 0, 1.0 - eta, eta) ** 2)
    minus = quad_expectation_1d(lambda u: np.where(u > 0, eta, 1.0 - eta) ** 2)
    return float((plus + minus) / 0.5 - 1.0)


def mc_standard_error(samples: np.ndarray) -> np.ndarray:
    """Entrywise standard error of the mean along axis 0."""
    return np.std(samples, axis=0, ddof=1) / math.sqrt(samples.shape[0])
