"""Transition structure of the hierarchical chains.

One catalogue drives everything built on the reservation policy: the sparse
generator used by the transform solvers, the event menus consumed by the
simulator, and the jump chain.  A caller at level ``i`` is routed up to a
free level-``i+1`` agent only while strictly more than ``Theta_{i+1}`` such
agents are idle, and a freed agent reaches down for a waiting lower-level
call exactly when releasing it would leave more than the reserved number
idle.

The routing conditions exist in two published variants that differ in how
busy agents are counted; see :data:`FORM_SERVED` and :data:`FORM_TOTAL`.

The two-level decision chain is different in kind: there the routing choices
are open, so transitions are produced per (state, event) from an action
menu, resolved either by an explicit policy table or by a reservation
vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .model import (
    InvalidStateError,
    ModelParams,
    ReservationVector,
    StateSpace,
    enumerate_reservation_states,
    enumerate_states_2,
    in_mdp2_space,
    in_reservation_space,
)

__all__ = [
    "FORM_SERVED",
    "FORM_TOTAL",
    "Transition",
    "RateMatrix",
    "IncompletePolicyError",
    "transitions_from_4",
    "transitions_from_2",
    "reservation_transitions",
    "build_rate_matrix",
    "build_rate_matrix_2",
    "jump_chain",
    "MDP2_EVENTS",
    "mdp2_event_menu",
]

#: Routing conditions count only callers actually occupying an agent of the
#: level in question (the default; internally consistent bookkeeping).
FORM_SERVED = "served"
#: Variant in which some conditions count all callers of a level, including
#: those parked with a higher level.  Kept selectable because both variants
#: circulate; they differ only on states with up-served callers present.
FORM_TOTAL = "total"


@dataclass(frozen=True)
class Transition:
    """A single rated transition with its instantaneous cost."""

    source: tuple[int, ...]
    target: tuple[int, ...]
    rate: float
    event_tag: str
    cost: float = 0.0


class IncompletePolicyError(ValueError):
    """A decision event has no action supplied by the policy."""


# ---------------------------------------------------------------------------
# Reservation-policy catalogue (generic over the number of levels)
# ---------------------------------------------------------------------------


def reservation_transitions(
    state: Sequence[int],
    p: ModelParams,
    res: ReservationVector,
    form: str = FORM_SERVED,
) -> list[Transition]:
    """All rated transitions out of ``state`` under the reservation policy.

    Events per level: an arrival (suppressed at capacity), service by an
    own-level agent, service by a next-level agent, and abandonment of a
    waiting caller (cost ``gamma``).  The emitted targets include the
    immediate re-assignments a freed agent performs, so the chain never
    leaves a caller waiting beside a visibly spare unreserved agent.
    """
    if form not in (FORM_SERVED, FORM_TOTAL):
        raise ValueError(f"unknown routing form {form!r}")
    nu = p.num_levels
    if not in_reservation_space(state, p, res):
        raise InvalidStateError(f"state {tuple(state)} is not in the {nu}-level reservation space")
    n = [int(state[2 * i]) for i in range(nu)]
    u = [int(state[2 * i + 1]) for i in range(nu - 1)] + [0]
    k = p.k
    served = form == FORM_SERVED

    def u_prev(j: int) -> int:
        return u[j - 1] if j > 0 else 0

    def cap(j: int) -> int:
        return k[j] - u_prev(j)

    def pack(nn: list[int], uu: list[int]) -> tuple[int, ...]:
        out: list[int] = []
        for j in range(nu - 1):
            out.extend((nn[j], uu[j]))
        out.append(nn[nu - 1])
        return tuple(out)

    out: list[Transition] = []
    total = sum(n)

    def emit(nn, uu, rate, tag, cost=0.0):
        if rate > 0:
            out.append(Transition(tuple(state), pack(nn, uu), float(rate), tag, float(cost)))

    def next_load(j: int) -> int:
        # Occupancy of level j+2 compared against k[j+2] - Theta - u[j+1] in
        # the routing conditions.  The total-count variant counts callers
        # parked further up as still occupying this level (for the top level
        # and for j = 0 the two variants coincide).
        if served or j == 0:
            return n[j + 1] - u[j + 1]
        return n[j + 1]

    for j in range(nu):
        theta_j = res.theta_for_level(j + 1) if j >= 1 else 0

        # Arrival of a level-(j+1) caller.
        if total < p.ell:
            nn, uu = n.copy(), u[:-1].copy()
            nn[j] += 1
            if j < nu - 1:
                th = res.theta_for_level(j + 2)
                own_busy = n[j] - u[j] >= (cap(j) if served else k[j])
                if own_busy and next_load(j) < k[j + 1] - th - u[j]:
                    uu[j] += 1
            emit(nn, uu, p.lam[j], f"arrival-{j + 1}")

        # Service by an own-level agent.
        own = min(n[j] - u[j], cap(j))
        if own > 0:
            nn, uu = n.copy(), u[:-1].copy()
            nn[j] -= 1
            if j >= 1:
                # The total-count variant compares against k only at j == 2.
                bound = k[j - 1] if (not served and j == 2) else cap(j - 1)
                if n[j - 1] - u[j - 1] > bound and n[j] - u[j] == k[j] - theta_j - u_prev(j):
                    uu[j - 1] += 1
            emit(nn, uu, own * p.mu[j], f"service-own-{j + 1}")

        # Service of a level-(j+1) caller by a level-(j+2) agent.
        if j < nu - 1 and u[j] > 0:
            th = res.theta_for_level(j + 2)
            nn, uu = n.copy(), u[:-1].copy()
            nn[j] -= 1
            own_waiting = n[j] - u[j] > cap(j)
            if not (own_waiting and next_load(j) == k[j + 1] - th - u[j]):
                uu[j] -= 1
            emit(nn, uu, u[j] * p.mu_up[j], f"service-up-{j + 1}")

        # Abandonment of a waiting level-(j+1) caller.
        waiting = max(0, n[j] - u[j] - cap(j))
        if waiting > 0:
            nn, uu = n.copy(), u[:-1].copy()
            nn[j] -= 1
            emit(nn, uu, waiting * p.theta[j], f"abandon-{j + 1}", cost=p.gamma[j])

    return out


def transitions_from_4(
    state: Sequence[int],
    p: ModelParams,
    res: ReservationVector,
    form: str = FORM_SERVED,
) -> list[Transition]:
    """Catalogue of transitions for the four-level reservation chain."""
    if p.num_levels != 4:
        raise ValueError("transitions_from_4 requires a four-level model")
    return reservation_transitions(state, p, res, form)


# ---------------------------------------------------------------------------
# Assembled rate matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateMatrix:
    """Sparse generator structure with per-transition cost annotations.

    ``rates`` holds the in-space part of the generator's off-diagonal as a
    CSR matrix, ``kappa`` the total exit rates (including any transitions
    whose target falls outside the space, which the transform systems treat
    as absorbing with value zero), ``abandon_cost_rate`` the running
    ``sum_i gamma_i * theta_i * waiting_i`` cost rate, and
    ``blocking_cost_rate`` the continuous ``beta * sum(lambda)`` rate carried
    by the at-capacity states.
    """

    space: StateSpace
    rates: sp.csr_matrix
    kappa: np.ndarray
    abandon_cost_rate: np.ndarray
    blocking_cost_rate: np.ndarray
    full_mask: np.ndarray
    # flat per-event arrays (menu layout for the simulator)
    ev_offsets: np.ndarray
    ev_rate: np.ndarray
    ev_target: np.ndarray
    ev_cost: np.ndarray
    ev_tag: tuple[str, ...]

    @property
    def num_states(self) -> int:
        return len(self.space)

    def transitions_of(self, index: int) -> list[Transition]:
        lo, hi = self.ev_offsets[index], self.ev_offsets[index + 1]
        src = self.space.state_at(index)
        out = []
        for m in range(lo, hi):
            tgt = self.space.state_at(self.ev_target[m]) if self.ev_target[m] >= 0 else None
            out.append(Transition(src, tgt, float(self.ev_rate[m]), self.ev_tag[m], float(self.ev_cost[m])))
        return out

    def to_csv(self, path) -> None:
        """Debug dump of the transition list as (from, to, rate, tag, cost)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("from,to,rate,tag,cost\n")
            for i in range(self.num_states):
                for tr in self.transitions_of(i):
                    tgt = "" if tr.target is None else " ".join(map(str, tr.target))
                    fh.write(f"{' '.join(map(str, tr.source))},{tgt},{tr.rate!r},{tr.event_tag},{tr.cost!r}\n")


def _assemble(space: StateSpace, menus: list[list[Transition]], p: ModelParams) -> RateMatrix:
    num = len(space)
    offsets = np.zeros(num + 1, dtype=np.int64)
    for i, menu in enumerate(menus):
        offsets[i + 1] = offsets[i] + len(menu)
    m_total = int(offsets[-1])
    ev_rate = np.zeros(m_total)
    ev_target = np.full(m_total, -1, dtype=np.int64)
    ev_cost = np.zeros(m_total)
    ev_tag: list[str] = []
    kappa = np.zeros(num)
    abandon_cost = np.zeros(num)
    rows, cols, vals = [], [], []
    for i, menu in enumerate(menus):
        pos = offsets[i]
        for tr in menu:
            ev_rate[pos] = tr.rate
            ev_cost[pos] = tr.cost
            ev_tag.append(tr.event_tag)
            kappa[i] += tr.rate
            if tr.event_tag.startswith("abandon"):
                abandon_cost[i] += tr.rate * tr.cost
            j = space.find(tr.target)
            ev_target[pos] = j
            if j >= 0:
                rows.append(i)
                cols.append(j)
                vals.append(tr.rate)
            pos += 1
    rates = sp.csr_matrix((vals, (rows, cols)), shape=(num, num))
    rates.sum_duplicates()
    totals = space.states[:, 0::2].sum(axis=1) if space.family.startswith("reservation") else space.states.sum(axis=1)
    full_mask = totals == p.ell
    blocking = np.where(full_mask, p.beta * p.total_arrival_rate, 0.0)
    return RateMatrix(
        space=space,
        rates=rates,
        kappa=kappa,
        abandon_cost_rate=abandon_cost,
        blocking_cost_rate=blocking,
        full_mask=full_mask,
        ev_offsets=offsets,
        ev_rate=ev_rate,
        ev_target=ev_target,
        ev_cost=ev_cost,
        ev_tag=tuple(ev_tag),
    )


def build_rate_matrix(
    p: ModelParams,
    res: ReservationVector,
    form: str = FORM_SERVED,
    space: StateSpace | None = None,
) -> RateMatrix:
    """Assemble the reservation-chain generator over its full state space."""
    if space is None:
        space = enumerate_reservation_states(p, res)
    menus = [reservation_transitions(space.state_at(i), p, res, form) for i in range(len(space))]
    return _assemble(space, menus, p)


def jump_chain(rm: RateMatrix) -> sp.csr_matrix:
    """Row-stochastic transition matrix of the embedded jump chain.

    Rows are normalised by the total exit rate, so rows with out-of-space
    targets sum to slightly less than one; over the chain's reachable part
    every row sums to one.
    """
    if np.any(rm.kappa <= 0):
        raise ValueError("jump chain undefined: some state has zero exit rate")
    inv = sp.diags(1.0 / rm.kappa)
    return (inv @ rm.rates).tocsr()


# ---------------------------------------------------------------------------
# Two-level decision chain
# ---------------------------------------------------------------------------

MDP2_EVENTS = (
    "arrival-1",
    "arrival-2",
    "service-own-1",
    "service-up-1",
    "service-own-2",
    "abandon-1",
    "abandon-2",
)

# Action codes shared with the policy solvers.
A_ASSIGN_OWN = "assign-own"
A_ASSIGN_UP = "assign-up"
A_QUEUE = "queue"
A_TAKE_L1 = "take-level-1"
A_TAKE_L2 = "take-level-2"
A_RESERVE = "reserve"


@dataclass(frozen=True)
class EventMenu:
    """One event of the two-level chain with its feasible actions.

    ``actions`` maps action name to ``(target, cost)``; ties in downstream
    optimisation are broken in the listed order, which always places the
    non-assignment action first.
    """

    tag: str
    rate: float
    actions: tuple[tuple[str, tuple[int, ...], float], ...]

    @property
    def is_decision(self) -> bool:
        return len(self.actions) > 1


def mdp2_event_menu(state: Sequence[int], p: ModelParams) -> list[EventMenu]:
    """Feasible events and per-event action sets for a two-level state.

    Level-1 calls always go to a free level-1 agent when one exists; the
    open choices are whether to send level-1 work up to a free level-2
    agent (on arrival or on a level-2 service completion) and whether a
    level-2 agent accepts work at all rather than being reserved.  Actions
    whose target would violate the state constraints (for example queueing
    a call while the other class also waits beside a free agent) are
    infeasible and omitted.
    """
    if p.num_levels != 2:
        raise ValueError("the decision chain is defined for two-level models only")
    if not in_mdp2_space(state, p):
        raise InvalidStateError(f"state {tuple(state)} is not in the two-level decision space")
    a1, a2, aq, b2, bq = (int(x) for x in state)
    k1, k2 = p.k
    free2 = k2 - a2 - b2
    total = a1 + a2 + aq + b2 + bq
    lam1, lam2 = p.lam
    mu1, mu2 = p.mu
    mu1p = p.mu_up[0]
    th1, th2 = p.theta
    g1, g2 = p.gamma

    def feasible(*cands):
        acts = tuple((name, tgt, cost) for name, tgt, cost in cands if in_mdp2_space(tgt, p))
        assert acts, f"no feasible action in state {state}"
        return acts

    menus: list[EventMenu] = []

    if total < p.ell:
        if a1 < k1:
            acts = ((A_ASSIGN_OWN, (a1 + 1, a2, aq, b2, bq), 0.0),)
        elif free2 > 0:
            acts = feasible(
                (A_QUEUE, (a1, a2, aq + 1, b2, bq), 0.0),
                (A_ASSIGN_UP, (a1, a2 + 1, aq, b2, bq), 0.0),
            )
        else:
            acts = ((A_QUEUE, (a1, a2, aq + 1, b2, bq), 0.0),)
        menus.append(EventMenu("arrival-1", lam1, acts))

        if free2 > 0:
            acts = feasible(
                (A_QUEUE, (a1, a2, aq, b2, bq + 1), 0.0),
                (A_ASSIGN_OWN, (a1, a2, aq, b2 + 1, bq), 0.0),
            )
        else:
            acts = ((A_QUEUE, (a1, a2, aq, b2, bq + 1), 0.0),)
        menus.append(EventMenu("arrival-2", lam2, acts))

    if a1 > 0:
        if aq > 0:  # a1 == k1 here; the freed level-1 agent takes the next waiting level-1 call
            acts = ((A_TAKE_L1, (a1, a2, aq - 1, b2, bq), 0.0),)
        else:
            acts = ((A_RESERVE, (a1 - 1, a2, aq, b2, bq), 0.0),)
        menus.append(EventMenu("service-own-1", a1 * mu1, acts))

    if a2 > 0:
        menus.append(EventMenu("service-up-1", a2 * mu1p, _completion_actions(state, p, freed="up")))
    if b2 > 0:
        menus.append(EventMenu("service-own-2", b2 * mu2, _completion_actions(state, p, freed="own")))

    if aq > 0:
        menus.append(EventMenu("abandon-1", aq * th1, ((A_RESERVE, (a1, a2, aq - 1, b2, bq), g1),)))
    if bq > 0:
        menus.append(EventMenu("abandon-2", bq * th2, ((A_RESERVE, (a1, a2, aq, b2, bq - 1), g2),)))

    return menus


def _completion_actions(state, p, freed):
    """Action set when a level-2 agent completes a service.

    ``freed='up'`` means the completed call was a level-1 call served by a
    level-2 agent; ``'own'`` a level-2 call.  When both classes wait the
    agent must take one of them; with a single waiting class it may also be
    reserved.
    """
    a1, a2, aq, b2, bq = (int(x) for x in state)
    if freed == "up":
        base = (a1, a2 - 1, aq, b2, bq)
        take1 = (a1, a2, aq - 1, b2, bq)
        take2 = (a1, a2 - 1, aq, b2 + 1, bq - 1)
    else:
        base = (a1, a2, aq, b2 - 1, bq)
        take1 = (a1, a2 + 1, aq - 1, b2 - 1, bq)
        take2 = (a1, a2, aq, b2, bq - 1)
    if aq > 0 and bq > 0:
        return ((A_TAKE_L2, take2, 0.0), (A_TAKE_L1, take1, 0.0))
    if aq > 0:
        return ((A_RESERVE, base, 0.0), (A_TAKE_L1, take1, 0.0))
    if bq > 0:
        return ((A_RESERVE, base, 0.0), (A_TAKE_L2, take2, 0.0))
    return ((A_RESERVE, base, 0.0),)


def _reservation_action(menu: EventMenu, state, p, theta2: int) -> str:
    a1, a2, aq, b2, bq = (int(x) for x in state)
    free2 = p.k[1] - a2 - b2
    if menu.tag == "arrival-1":
        return A_ASSIGN_UP if free2 > theta2 else A_QUEUE
    if menu.tag == "arrival-2":
        return A_ASSIGN_OWN
    # level-2 completion: own-level queue first, then reach down past the threshold
    if bq > 0:
        return A_TAKE_L2
    if aq > 0 and free2 + 1 > theta2:
        return A_TAKE_L1
    return A_RESERVE


def transitions_from_2(state: Sequence[int], p: ModelParams, policy) -> list[Transition]:
    """Transitions of the two-level chain under a resolved policy.

    ``policy`` is either a :class:`~hierq.model.ReservationVector` (with its
    single threshold ``Theta_2``) or any object exposing
    ``action_for(state, event_tag)`` returning an action name for every
    decision event, e.g. a stationary policy table.
    """
    menus = mdp2_event_menu(state, p)
    out: list[Transition] = []
    for menu in menus:
        if len(menu.actions) == 1:
            name, target, cost = menu.actions[0]
        else:
            if isinstance(policy, ReservationVector):
                chosen = _reservation_action(menu, state, p, policy.thetas[0])
            else:
                chosen = policy.action_for(tuple(state), menu.tag)
                if chosen is None:
                    raise IncompletePolicyError(f"no action for state {tuple(state)}, event {menu.tag}")
            match = [act for act in menu.actions if act[0] == chosen]
            if not match:
                raise IncompletePolicyError(
                    f"action {chosen!r} infeasible for state {tuple(state)}, event {menu.tag}"
                )
            name, target, cost = match[0]
        out.append(Transition(tuple(state), target, menu.rate, menu.tag, cost))
    return out


def build_rate_matrix_2(p: ModelParams, policy, space: StateSpace | None = None) -> RateMatrix:
    """Assemble the two-level decision chain's generator under a policy."""
    if space is None:
        space = enumerate_states_2(p)
    menus = [transitions_from_2(space.state_at(i), p, policy) for i in range(len(space))]
    return _assemble(space, menus, p)
