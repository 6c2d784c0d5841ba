"""Numerical Laplace-transform inversion by Euler summation.

The inverse transform at time ``t`` is approximated by a damped alternating
series evaluated along the vertical contour ``Re(s) = a / (2 t)``, with Euler
(binomial) averaging of the last partial sums to accelerate convergence.
With the default configuration the transform is evaluated at 31 points, and
the result is accurate to well below 1e-6 absolute for smooth transforms of
probabilities and moderately sized expected costs.

The whole procedure is linear in the transform values, so it is exposed in
two layers: :func:`euler_nodes` / :func:`euler_weights` give the evaluation
points and real weights, and :func:`euler_sum` combines precomputed transform
values.  This lets callers that invert many components of one linear system
batch all solves for the 31 nodes up front.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np

__all__ = [
    "EulerConfig",
    "InversionError",
    "euler_nodes",
    "euler_weights",
    "euler_sum",
    "euler_invert",
]

# Aliasing error of the damped series is ~exp(-a); 12*ln(10) keeps it below
# 1e-12 relative while exp(a/2) stays small enough that double-precision
# round-off remains under ~1e-9 for values up to ~1e3.
_DEFAULT_A = 12.0 * math.log(10.0)


class InversionError(RuntimeError):
    """Raised when a transform evaluates to a non-finite value."""

    def __init__(self, message: str, s: complex | None = None):
        super().__init__(message)
        self.s = s


@dataclass(frozen=True)
class EulerConfig:
    """Parameters of the Euler summation.

    Attributes
    ----------
    n_terms:
        Length of the plain partial sum before averaging begins.
    m_avg:
        Number of Euler-averaging (binomial) terms.
    a:
        Discretisation/damping parameter; the contour sits at ``a / (2 t)``
        and the aliasing error is of order ``exp(-a)``.

    The transform is evaluated ``n_terms + m_avg + 1`` times per time point
    (31 with the defaults).
    """

    n_terms: int = 15
    m_avg: int = 15
    a: float = _DEFAULT_A

    def __post_init__(self) -> None:
        if self.n_terms < 1:
            raise ValueError("n_terms must be >= 1")
        if self.m_avg < 0:
            raise ValueError("m_avg must be >= 0")
        if self.a <= 0:
            raise ValueError("a must be positive")

    @property
    def num_evaluations(self) -> int:
        return self.n_terms + self.m_avg + 1


def euler_nodes(t: float, cfg: EulerConfig = EulerConfig()) -> np.ndarray:
    """Contour points ``s_k = (a + 2 pi i k) / (2 t)`` for ``k = 0..n+m``."""
    if t <= 0:
        raise ValueError("inversion time t must be positive")
    k = np.arange(cfg.num_evaluations)
    return (cfg.a + 2j * np.pi * k) / (2.0 * t)


def euler_weights(t: float, cfg: EulerConfig = EulerConfig()) -> np.ndarray:
    """Real weights ``w_k`` such that ``f(t) = sum_k w_k Re(fhat(s_k))``.

    The binomial averaging of partial sums ``S_n .. S_{n+m}`` collapses into
    a single weighted sum: term ``k <= n`` enters every averaged partial sum,
    and term ``n + j`` enters those with index ``>= j``, i.e. with weight
    ``P(Binomial(m, 1/2) >= j)``.
    """
    if t <= 0:
        raise ValueError("inversion time t must be positive")
    n, m = cfg.n_terms, cfg.m_avg
    tail = np.ones(cfg.num_evaluations)
    # tail[n + j] = sum_{i >= j} C(m, i) / 2^m
    binom = np.array([math.comb(m, i) for i in range(m + 1)], dtype=float)
    binom /= 2.0**m
    tail[n + 1 :] = binom[::-1].cumsum()[::-1][1:]
    signs = np.where(np.arange(cfg.num_evaluations) % 2 == 0, 1.0, -1.0)
    w = math.exp(cfg.a / 2.0) / t * signs * tail
    w[0] *= 0.5
    return w


def euler_sum(values: np.ndarray, t: float, cfg: EulerConfig = EulerConfig()) -> np.ndarray:
    """Combine transform values at :func:`euler_nodes` into the inverse at ``t``.

    ``values`` has the node index along axis 0; any trailing axes are
    preserved, so whole vectors of transforms are inverted in one call.
    The summation order is fixed, making the result bit-for-bit reproducible.
    """
    values = np.asarray(values)
    if values.shape[0] != cfg.num_evaluations:
        raise ValueError(
            f"expected {cfg.num_evaluations} transform values along axis 0, got {values.shape[0]}"
        )
    w = euler_weights(t, cfg)
    re = np.real(values)
    out = np.zeros(values.shape[1:], dtype=float)
    for k in range(cfg.num_evaluations):
        out = out + w[k] * re[k]
    return out


def euler_invert(
    f: Callable[[complex], complex],
    t: float,
    cfg: EulerConfig = EulerConfig(),
) -> float:
    """Invert the Laplace transform ``f`` at time ``t > 0``.

    ``f`` must be analytic for ``Re(s) > 0`` and is called once per node.
    Non-finite transform values raise :class:`InversionError` carrying the
    offending ``s``.
    """
    nodes = euler_nodes(t, cfg)
    vals = np.empty(len(nodes), dtype=complex)
    for i, s in enumerate(nodes):
        v = complex(f(s))
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise InversionError(f"transform returned non-finite value at s={s!r}", s=s)
        vals[i] = v
    return float(euler_sum(vals, t, cfg))
