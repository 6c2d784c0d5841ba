"""Transient cost and occupancy analysis of the reservation chain.

Conditioning on the first jump out of each state turns the expected cost of
abandonments and losses over ``(0, T)``, and the expected time spent in each
state, into linear systems for their Laplace transforms: with ``kappa`` the
total exit rate and ``R`` the rated successor structure,

    (s + kappa(x)) C~(x) - sum_y R[x, y] C~(y) = q(x) / s,

where ``q`` collects the abandonment cost rates (``gamma_i`` per waiting
caller's hazard) plus ``beta * sum(lambda)`` on the at-capacity states, and
successors outside the state space contribute zero.  The system is strictly
diagonally dominant for ``Re(s) > 0``; it is solved by certified fixed-point
sweeps batched over all inversion nodes (direct factorisation fills in
catastrophically on this lattice).  One structure serves both the cost
system and, transposed, the time-in-state row of a fixed initial state.
Time-domain values come from Euler inversion of 31 such solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._solve import solve_nodes
from .invert import EulerConfig, euler_nodes, euler_sum
from .model import ModelParams, ReservationVector, StateSpace, reservation_grid
from .rates import FORM_SERVED, RateMatrix, build_rate_matrix

__all__ = [
    "TransformSystem",
    "ObservedStateDistribution",
    "NormalizationError",
    "cost_transform",
    "expected_cost",
    "time_in_state_transform",
    "observed_distribution",
    "optimize_reservation",
    "ScanResult",
]


class NormalizationError(RuntimeError):
    """Inverted probabilities deviate from a distribution beyond tolerance."""


class TransformSystem:
    """First-step transform systems of one reservation chain.

    Built once per (model, reservation vector); solves are batched over
    transform arguments, so a full Euler inversion costs one fixed-point
    solve with 31 right-hand-side columns.
    """

    def __init__(self, p: ModelParams, res: ReservationVector, form: str = FORM_SERVED, rm: RateMatrix | None = None):
        if rm is None:
            rm = build_rate_matrix(p, res, form=form)
        self.params = p
        self.res = res
        self.rm = rm
        self.space: StateSpace = rm.space
        self._R = rm.rates.tocsr()
        self._Rt = rm.rates.T.tocsr()
        self.cost_rhs = rm.abandon_cost_rate + rm.blocking_cost_rate

    def cost_vectors(self, nodes: np.ndarray) -> np.ndarray:
        """``C~(s)`` for every initial state, one column per node."""
        nodes = np.asarray(nodes, dtype=np.complex128)
        rhs = self.cost_rhs[:, None] / nodes[None, :]
        return solve_nodes(self.rm.kappa, self._R, rhs, nodes)

    def cost_vector(self, s: complex) -> np.ndarray:
        return self.cost_vectors(np.array([s]))[:, 0]

    def time_in_state_rows(self, nodes: np.ndarray, nu0_index: int) -> np.ndarray:
        """Rows of ``v~(s)`` from one initial state, one column set per node.

        Returns an ``(num_states, len(nodes))`` array whose column ``k`` is
        the expected-time transform of every target state at ``nodes[k]``;
        obtained from the transposed system, so the full matrix is never
        materialised.
        """
        nodes = np.asarray(nodes, dtype=np.complex128)
        rhs = np.zeros((self.rm.num_states, len(nodes)), dtype=np.complex128)
        rhs[nu0_index, :] = 1.0 / nodes
        return solve_nodes(self.rm.kappa, self._Rt, rhs, nodes)

    def time_in_state_row(self, s: complex, nu0_index: int) -> np.ndarray:
        return self.time_in_state_rows(np.array([s]), nu0_index)[:, 0]


def cost_transform(
    p: ModelParams,
    res: ReservationVector,
    s: complex,
    form: str = FORM_SERVED,
    system: TransformSystem | None = None,
) -> np.ndarray:
    """Laplace transform of the expected abandonment-and-loss cost, per state."""
    system = system or TransformSystem(p, res, form)
    return system.cost_vector(s)


def time_in_state_transform(
    p: ModelParams,
    res: ReservationVector,
    s: complex,
    nu0: Sequence[int] | None = None,
    form: str = FORM_SERVED,
    system: TransformSystem | None = None,
) -> np.ndarray:
    """Transforms of expected time in each state.

    With ``nu0`` given, returns that initial state's row (the only part any
    downstream computation needs); otherwise the full (initial x target)
    matrix, which is only sensible for small spaces.
    """
    system = system or TransformSystem(p, res, form)
    if nu0 is not None:
        return system.time_in_state_row(s, system.space.index_of(nu0))
    n = system.rm.num_states
    out = np.empty((n, n), dtype=np.complex128)
    for i in range(n):
        out[i] = system.time_in_state_row(s, i)
    return out


def expected_cost(
    p: ModelParams,
    res: ReservationVector,
    nu0: Sequence[int],
    T: float,
    cfg: EulerConfig = EulerConfig(),
    form: str = FORM_SERVED,
    system: TransformSystem | None = None,
) -> float:
    """Expected cost of abandonments and losses over ``(0, T)`` from ``nu0``."""
    if T <= 0:
        raise ValueError("horizon T must be positive")
    system = system or TransformSystem(p, res, form)
    i0 = system.space.index_of(nu0)
    nodes = euler_nodes(T, cfg)
    vals = system.cost_vectors(nodes)[i0, :]
    return float(euler_sum(vals, T, cfg))


@dataclass(frozen=True)
class ObservedStateDistribution:
    """State distribution seen by an arrival uniform on ``(0, T)``."""

    space: StateSpace
    probabilities: np.ndarray
    nu0: tuple[int, ...]
    horizon: float


def observed_distribution(
    p: ModelParams,
    res: ReservationVector,
    nu0: Sequence[int],
    T: float,
    cfg: EulerConfig = EulerConfig(),
    form: str = FORM_SERVED,
    system: TransformSystem | None = None,
    tol: float = 1e-6,
) -> ObservedStateDistribution:
    """Distribution of the state found by a uniformly timed arrival.

    Euler-inverts the initial state's expected-time row at ``T`` and divides
    by ``T``.  Tiny negative inversion residue is clamped to zero; a total
    probability off by more than ``tol`` raises :class:`NormalizationError`.
    """
    if T <= 0:
        raise ValueError("horizon T must be positive")
    system = system or TransformSystem(p, res, form)
    i0 = system.space.index_of(nu0)
    nodes = euler_nodes(T, cfg)
    rows = system.time_in_state_rows(nodes, i0)
    r = euler_sum(rows.T, T, cfg) / T
    r[np.abs(r) < 1e-9] = 0.0
    total = r.sum()
    if abs(total - 1.0) > tol or r.min() < -tol:
        raise NormalizationError(
            f"observed-state distribution sums to {total:.9f} (min entry {r.min():.3e}); inversion accuracy insufficient"
        )
    r = np.clip(r, 0.0, 1.0)
    r /= r.sum()
    return ObservedStateDistribution(space=system.space, probabilities=r, nu0=tuple(int(x) for x in nu0), horizon=float(T))


@dataclass(frozen=True)
class ScanResult:
    """Outcome of a full reservation-grid evaluation."""

    objective: str
    best: ReservationVector
    best_value: float
    rows: tuple[tuple[tuple[int, ...], float], ...]

    def value_for(self, thetas: Sequence[int]) -> float:
        key = tuple(int(x) for x in thetas)
        for t, v in self.rows:
            if t == key:
                return v
        raise KeyError(key)


def optimize_reservation(
    p: ModelParams,
    nu0: Sequence[int],
    T: float,
    objective: str = "expected-cost",
    y: float | None = None,
    cfg: EulerConfig = EulerConfig(),
    form: str = FORM_SERVED,
    threads: int = 1,
) -> ScanResult:
    """Evaluate every reservation vector and return the optimum and full table.

    ``objective`` is ``"expected-cost"`` (minimised) or ``"service-level"``
    (maximised; requires the answer-time target ``y``).  Ties go to the
    lexicographically smallest threshold vector.  The per-vector evaluations
    are independent; ``threads > 1`` runs them in worker processes with a
    deterministic reduction order.
    """
    thetas = [res.thetas for res in reservation_grid(p)]
    args = [(p, t, tuple(int(x) for x in nu0), T, objective, y, cfg, form) for t in thetas]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(_scan_one, args))
    else:
        values = [_scan_one(a) for a in args]
    rows = tuple((t, v) for t, v in zip(thetas, values))
    if objective == "expected-cost":
        best_idx = min(range(len(rows)), key=lambda i: (rows[i][1], rows[i][0]))
    else:
        best_idx = min(range(len(rows)), key=lambda i: (-rows[i][1], rows[i][0]))
    return ScanResult(
        objective=objective,
        best=ReservationVector(rows[best_idx][0]),
        best_value=rows[best_idx][1],
        rows=rows,
    )


def _scan_one(arg) -> float:
    p, thetas, nu0, T, objective, y, cfg, form = arg
    res = ReservationVector(thetas)
    if objective == "expected-cost":
        return expected_cost(p, res, nu0, T, cfg=cfg, form=form)
    if objective == "service-level":
        if y is None:
            raise ValueError("service-level objective requires the answer-time target y")
        from .waiting import service_level

        return service_level(p, res, nu0, y, T, cfg=cfg, form=form).overall
    raise ValueError(f"unknown objective {objective!r}")
