"""Waiting-time distributions of tagged callers and service levels.

For a caller of level ``j`` arriving to a known system state, the probability
of being answered within ``y`` is a first-passage functional of a reduced
chain that tracks only what can delay that caller: same-level callers ahead
(service order within a level is first-come-first-served), everything
occupying or entitled to the agents the caller may use, and the caller's own
abandonment clock, which appears in the denominator of every recursion step
but never in the numerator.

Each reduced chain yields a linear system for the transforms ``Xi~(s)``:
states where an admissible agent is free are absorbing successes with value
``1/s``, states at capacity are blocked with value ``0``, and the remaining
states satisfy a balance equation with the reduced catalogue.  Combining the
inverted conditional probabilities with the state distribution seen by a
uniformly timed arrival (Poisson arrivals see time averages) produces the
per-level and overall service levels over ``(0, T)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ._solve import solve_nodes
from .invert import EulerConfig, euler_nodes, euler_sum
from .model import ModelParams, ReservationVector, StateSpace, enumerate_wait_states
from .rates import FORM_SERVED, FORM_TOTAL
from .transient import TransformSystem, observed_distribution

__all__ = [
    "WaitTransformSystem",
    "ServiceLevelResult",
    "wait_transform_level1",
    "wait_transform_level2",
    "wait_transform_level3",
    "wait_transform_level4",
    "wait_cdf",
    "service_level",
]


@dataclass(frozen=True)
class ServiceLevelResult:
    """Per-level and overall probabilities of answer within ``y``."""

    per_level: tuple[float, ...]
    overall: float
    y: float
    horizon: float
    thetas: tuple[int, ...]


def _resolve(level: int, ref: tuple[int, ...], p: ModelParams, res: ReservationVector, form: str):
    """Classify a referenced state: 'immediate', 'blocked' or 'interior'.

    The classification follows the recursion rules on the raw components, so
    bookkeeping states produced by the hand-off indicators (which may fall
    outside the enumerated space precisely when the freed agent takes the
    tagged caller) are still recognised as successes.
    """
    k1, k2, k3, k4 = p.k
    t2, t3, t4 = res.thetas
    served = form == FORM_SERVED
    if level == 4:
        c1, d = ref
        if c1 + d >= p.ell:
            return "blocked"
        return "immediate" if d < k4 - c1 else "interior"
    if level == 3:
        b1, c, c1, d = ref
        if b1 + c + d >= p.ell:
            return "blocked"
        if k3 - b1 > c - c1 or k4 > d + c1 + t4:
            return "immediate"
        return "interior"
    if level == 2:
        a1, b, b1, c, c1, d = ref
        if a1 + b + c + d >= p.ell:
            return "blocked"
        free3_load = (c - c1 if served else c) + b1
        if k2 - a1 > b - b1 or k3 - t3 > free3_load:
            return "immediate"
        return "interior"
    if level == 1:
        a, a1, b, b1, c, c1, d = ref
        if a + b + c + d >= p.ell:
            return "blocked"
        free2_load = (b - b1 if served else b) + a1
        if k1 > a - a1 or k2 - t2 > free2_load:
            return "immediate"
        return "interior"
    raise ValueError(level)


def _wait_catalogue(level: int, state: tuple[int, ...], p: ModelParams, res: ReservationVector, form: str):
    """Reduced-chain coefficients of one interior state.

    Returns ``(refs, psi_minus_s)`` where ``refs`` is a list of
    ``(coefficient, referenced state)`` and ``psi_minus_s`` the denominator
    without its ``+ s`` term (it exceeds the coefficient total by the tagged
    caller's own abandonment hazard).
    """
    k1, k2, k3, k4 = p.k
    t2, t3, t4 = res.thetas
    lam, mu, mup, th = p.lam, p.mu, p.mu_up, p.theta
    served = form == FORM_SERVED
    refs: list[tuple[float, tuple[int, ...]]] = []

    def add(coef, ref):
        if coef > 0:
            refs.append((float(coef), ref))

    if level == 4:
        raise AssertionError("level-4 transforms use direct back-substitution")

    if level == 3:
        b1, c, c1, d = state
        pop = b1 + c + d
        gate = 1.0 if pop < p.ell - 1 else 0.0
        hand = 1 if (c + 1 - c1 > k3 - b1 and d == k4 - c1 - t4) else 0
        add(lam[3] * gate, (b1, c, c1, d + 1))
        add((k3 - b1) * mu[2], (b1, c - 1, c1, d))
        add(b1 * mup[1], (b1 - 1, c, c1, d))
        add(c1 * mup[2], (b1, c - 1, c1 - 1 + hand, d))
        add(min(k4 - c1, d) * mu[3], (b1, c, c1 + hand, d - 1))
        add((c - (k3 - b1 + c1)) * th[2], (b1, c - 1, c1, d))
        add(max(0, d - (k4 - c1)) * th[3], (b1, c, c1, d - 1))
        psi = (
            lam[3] * gate
            + (k3 - b1) * mu[2]
            + b1 * mup[1]
            + c1 * mup[2]
            + min(d, k4 - c1) * mu[3]
            + (c + 1 - (k3 - b1 + c1)) * th[2]
            + max(0, d - (k4 - c1)) * th[3]
        )
        return refs, psi

    if level == 2:
        a1, b, b1, c, c1, d = state
        pop = a1 + b + c + d
        gate = 1.0 if pop < p.ell - 1 else 0.0
        # hand-off of the freed level-3 agent to a waiting level-2 caller;
        # the two published variants disagree only in how the release path
        # counts level-3 occupancy
        hand23_mu2p = 1 if (b + 1 - b1 > k2 - a1 and ((c - c1) if served else c) == k3 - b1 - t3) else 0
        hand23_mu3 = 1 if ((b + 1 - b1 > (k2 - a1 if served else k4 - c1)) and c - c1 == k3 - b1 - t3) else 0
        # hand-off of the freed level-4 agent to a waiting level-3 caller
        hand34 = 1 if (c - c1 > k3 - b1 and d == k4 - c1 - t4) else 0
        add(lam[2] * gate, (a1, b, b1, c + 1, c1, d))
        add(lam[3] * gate, (a1, b, b1, c, c1, d + 1))
        add(a1 * mup[0], (a1 - 1, b, b1, c, c1, d))
        add((k2 - a1) * mu[1], (a1, b - 1, b1, c, c1, d))
        add(b1 * mup[1], (a1, b - 1, b1 - 1 + hand23_mu2p, c, c1, d))
        add(min(k3 - b1, c - c1) * mu[2], (a1, b, b1 + hand23_mu3, c - 1, c1, d))
        add(c1 * mup[2], (a1, b, b1, c - 1, c1 - 1 + hand34, d))
        add(min(k4 - c1, d) * mu[3], (a1, b, b1, c, c1 + hand34, d - 1))
        add((b - (k2 - a1 + b1)) * th[1], (a1, b - 1, b1, c, c1, d))
        add(max(0, c - (k3 - b1 + c1)) * th[2], (a1, b, b1, c - 1, c1, d))
        add(max(0, d - (k4 - c1)) * th[3], (a1, b, b1, c, c1, d - 1))
        psi = (
            (lam[2] + lam[3]) * gate
            + a1 * mup[0]
            + (k2 - a1) * mu[1]
            + b1 * mup[1]
            + c1 * mup[2]
            + min(c - c1, k3 - b1) * mu[2]
            + min(d, k4 - c1) * mu[3]
            + (b + 1 - (k2 - a1 + b1)) * th[1]
            + max(0, c - (k3 - b1 + c1)) * th[2]
            + max(0, d - (k4 - c1)) * th[3]
        )
        return refs, psi

    if level == 1:
        a, a1, b, b1, c, c1, d = state
        pop = a + b + c + d
        gate = 1.0 if pop < p.ell - 1 else 0.0
        load3 = (c - c1) if served else c
        arr2_busy = b - b1 >= ((k2 - a1) if served else k2)
        arr2_hand = 1 if (arr2_busy and load3 < k3 - t3 - b1) else 0
        arr3_busy = c - c1 >= ((k3 - b1) if served else k3)
        arr3_hand = 1 if (arr3_busy and d < k4 - t4 - c1) else 0
        hand12 = 1 if (a - a1 > k1 and b - b1 == k2 - t2 - a1) else 0
        load3_eq = (c - c1) if served else c
        hand23 = 1 if (b - b1 > k2 - a1 and load3_eq == k3 - t3 - b1) else 0
        hand23_mu3 = 1 if ((b - b1 > (k2 - a1 if served else k2)) and c - c1 == k3 - t3 - b1) else 0
        hand34 = 1 if (c - c1 > k3 - b1 and d == k4 - t4 - c1) else 0
        add(lam[1] * gate, (a, a1, b + 1, b1 + arr2_hand, c, c1, d))
        add(lam[2] * gate, (a, a1, b, b1, c + 1, c1 + arr3_hand, d))
        add(lam[3] * gate, (a, a1, b, b1, c, c1, d + 1))
        add(k1 * mu[0], (a - 1, a1, b, b1, c, c1, d))
        add(a1 * mup[0], (a - 1, a1 - 1 + hand12, b, b1, c, c1, d))
        add(min(b - b1, k2 - a1) * mu[1], (a, a1 + hand12, b - 1, b1, c, c1, d))
        add(b1 * mup[1], (a, a1, b - 1, b1 - 1 + hand23, c, c1, d))
        add(min(c - c1, k3 - b1) * mu[2], (a, a1, b, b1 + hand23_mu3, c - 1, c1, d))
        add(c1 * mup[2], (a, a1, b, b1, c - 1, c1 - 1 + hand34, d))
        add(min(d, k4 - c1) * mu[3], (a, a1, b, b1, c, c1 + hand34, d - 1))
        add((a - (k1 + a1)) * th[0], (a - 1, a1, b, b1, c, c1, d))
        add(max(0, b - (k2 - a1 + b1)) * th[1], (a, a1, b - 1, b1, c, c1, d))
        add(max(0, c - (k3 - b1 + c1)) * th[2], (a, a1, b, b1, c - 1, c1, d))
        add(max(0, d - (k4 - c1)) * th[3], (a, a1, b, b1, c, c1, d - 1))
        psi = (
            (lam[1] + lam[2] + lam[3]) * gate
            + k1 * mu[0]
            + a1 * mup[0]
            + b1 * mup[1]
            + min(b - b1, k2 - a1) * mu[1]
            + min(c - c1, k3 - b1) * mu[2]
            + c1 * mup[2]
            + min(d, k4 - c1) * mu[3]
            + (a + 1 - (k1 + a1)) * th[0]
            + max(0, b - (k2 - a1 + b1)) * th[1]
            + max(0, c - (k3 - b1 + c1)) * th[2]
            + max(0, d - (k4 - c1)) * th[3]
        )
        return refs, psi

    raise ValueError(level)


class WaitTransformSystem:
    """Assembled tagged-caller system for one level of caller.

    ``solve(s)`` returns the full transform vector over the level's state
    space: ``1/s`` on immediate-service states, ``0`` on blocked states, and
    the sparse solution elsewhere.  Level 4 is lower triangular in the total
    tracked population, so it is evaluated by direct back-substitution.
    """

    def __init__(self, level: int, p: ModelParams, res: ReservationVector, form: str = FORM_SERVED):
        if p.num_levels != 4:
            raise ValueError("tagged-caller transforms are defined for four-level models")
        if form not in (FORM_SERVED, FORM_TOTAL):
            raise ValueError(f"unknown routing form {form!r}")
        res.validate_for(p)
        self.level = level
        self.params = p
        self.res = res
        self.form = form
        self.space: StateSpace = enumerate_wait_states(level, p, res)
        n = len(self.space)
        self.kind = np.empty(n, dtype="U9")
        for i in range(n):
            self.kind[i] = _resolve(level, self.space.state_at(i), p, res, form)
        if level == 4:
            return
        interior = np.nonzero(self.kind == "interior")[0]
        self._interior = interior
        self._pos = {int(g): m for m, g in enumerate(interior)}
        rows, cols, vals = [], [], []
        rhs_weight = np.zeros(len(interior))
        psi0 = np.zeros(len(interior))
        for m, g in enumerate(interior):
            state = self.space.state_at(int(g))
            refs, psi = _wait_catalogue(level, state, p, res, form)
            psi0[m] = psi
            for coef, ref in refs:
                cls = _resolve(level, ref, p, res, form)
                if cls == "immediate":
                    rhs_weight[m] += coef
                elif cls == "blocked":
                    continue
                else:
                    j = self.space.find(ref)
                    if j < 0:
                        # out-of-space interior reference: absorbed with value 0
                        continue
                    rows.append(m)
                    cols.append(self._pos[j])
                    vals.append(coef)
        coupling = sp.coo_matrix((vals, (rows, cols)), shape=(len(interior), len(interior))).tocsr()
        coupling.sum_duplicates()
        self._coupling = coupling
        self._psi0 = psi0
        self._rhs_weight = rhs_weight

    def solve_batch(self, nodes: np.ndarray) -> np.ndarray:
        """Full transform vectors, one column per node."""
        nodes = np.asarray(nodes, dtype=np.complex128)
        if np.any(nodes.real <= 0):
            raise ValueError("transform arguments must have positive real part")
        n = len(self.space)
        out = np.zeros((n, len(nodes)), dtype=np.complex128)
        out[self.kind == "immediate", :] = 1.0 / nodes[None, :]
        if self.level == 4:
            for m, s in enumerate(nodes):
                self._backsubstitute(s, out[:, m])
            return out
        if len(self._interior):
            rhs = self._rhs_weight[:, None] / nodes[None, :]
            out[self._interior, :] = solve_nodes(self._psi0, self._coupling, rhs, nodes)
        return out

    def solve(self, s: complex) -> np.ndarray:
        return self.solve_batch(np.array([s]))[:, 0]

    def _backsubstitute(self, s: complex, out: np.ndarray) -> None:
        p, res = self.params, self.res
        k4 = p.k[3]
        mu4, mu3p, th4 = p.mu[3], p.mu_up[2], p.theta[3]
        order = np.argsort(self.space.states.sum(axis=1), kind="stable")
        for g in order:
            if self.kind[g] != "interior":
                continue
            c1, d = self.space.state_at(int(g))
            num = 0.0 + 0.0j
            if c1 > 0:
                num += c1 * mu3p * out[self.space.index_of((c1 - 1, d))]
            coef = (k4 - c1) * mu4 + (d - (k4 - c1)) * th4
            if coef > 0:
                num += coef * out[self.space.index_of((c1, d - 1))]
            denom = c1 * mu3p + (k4 - c1) * mu4 + (d + 1 - (k4 - c1)) * th4 + s
            out[g] = num / denom


def _wait_transform(level: int, p, res, s, form, system=None):
    system = system or WaitTransformSystem(level, p, res, form)
    return system.solve(s)


def wait_transform_level1(p, res, s, form=FORM_SERVED, system=None) -> np.ndarray:
    """Transforms of the tagged level-1 answer-time distribution over the full space."""
    return _wait_transform(1, p, res, s, form, system)


def wait_transform_level2(p, res, s, form=FORM_SERVED, system=None) -> np.ndarray:
    """Transforms over the ``(a1, b, b1, c, c1, d)`` tagged level-2 space."""
    return _wait_transform(2, p, res, s, form, system)


def wait_transform_level3(p, res, s, form=FORM_SERVED, system=None) -> np.ndarray:
    """Transforms over the ``(b1, c, c1, d)`` tagged level-3 space."""
    return _wait_transform(3, p, res, s, form, system)


def wait_transform_level4(p, res, s, form=FORM_SERVED, system=None) -> np.ndarray:
    """Transforms over the ``(c1, d)`` tagged level-4 space (back-substituted)."""
    return _wait_transform(4, p, res, s, form, system)


def wait_cdf(
    level: int,
    p: ModelParams,
    res: ReservationVector,
    y: float,
    cfg: EulerConfig = EulerConfig(),
    form: str = FORM_SERVED,
    system: WaitTransformSystem | None = None,
) -> np.ndarray:
    """Probability of answer within ``y``, per tagged-caller state."""
    if y <= 0:
        raise ValueError("answer-time target y must be positive")
    system = system or WaitTransformSystem(level, p, res, form)
    nodes = euler_nodes(y, cfg)
    vals = system.solve_batch(nodes)
    out = euler_sum(vals.T, y, cfg)
    return np.clip(out, 0.0, 1.0)


_PROJECTION_COLS = {1: slice(0, 7), 2: slice(1, 7), 3: slice(3, 7), 4: slice(5, 7)}


def projection_indices(level: int, space: StateSpace, wait_space: StateSpace) -> np.ndarray:
    """Map every full state to its tagged-caller state for the given level."""
    cols = _PROJECTION_COLS[level]
    idx = np.empty(len(space), dtype=np.int64)
    for i in range(len(space)):
        proj = tuple(int(x) for x in space.states[i, cols])
        idx[i] = wait_space.index_of(proj)
    return idx


def service_level(
    p: ModelParams,
    res: ReservationVector,
    nu0: Sequence[int],
    y: float,
    T: float,
    cfg: EulerConfig = EulerConfig(),
    form: str = FORM_SERVED,
    system: TransformSystem | None = None,
) -> ServiceLevelResult:
    """Probability that a caller arriving in ``(0, T)`` is answered within ``y``.

    Conditional answer-time distributions are combined with the observed
    state distribution of a uniformly timed arrival; the overall figure is
    the arrival-rate-weighted mixture of the per-level ones.
    """
    system = system or TransformSystem(p, res, form=form)
    r = observed_distribution(p, res, nu0, T, cfg=cfg, form=form, system=system)
    per_level = []
    for level in range(1, 5):
        wsys = WaitTransformSystem(level, p, res, form)
        xi = wait_cdf(level, p, res, y, cfg=cfg, form=form, system=wsys)
        proj = projection_indices(level, system.space, wsys.space)
        per_level.append(float(np.dot(xi[proj], r.probabilities)))
    lam = np.array(p.lam)
    overall = float(np.dot(lam, per_level) / lam.sum())
    return ServiceLevelResult(
        per_level=tuple(per_level),
        overall=overall,
        y=float(y),
        horizon=float(T),
        thetas=res.thetas,
    )
