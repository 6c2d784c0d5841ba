"""Transition-catalogue properties: conservation, closure, jump probabilities."""

from collections import deque

import numpy as np
import pytest

from hierq.model import (
    ModelParams,
    ReservationVector,
    derive_occupancy,
    enumerate_reservation_states,
    enumerate_states_2,
    reservation_grid,
)
from hierq.rates import (
    FORM_SERVED,
    FORM_TOTAL,
    IncompletePolicyError,
    build_rate_matrix,
    build_rate_matrix_2,
    jump_chain,
    mdp2_event_menu,
    reservation_transitions,
    transitions_from_2,
    transitions_from_4,
)

from test_model import four_level, two_level


def kappa_closed_form(state, p, res):
    """Independent total-exit-rate computation from the occupancy summary."""
    occ = derive_occupancy(state, p, res)
    nu = p.num_levels
    n = [state[2 * i] for i in range(nu)]
    total = sum(n)
    kappa = p.total_arrival_rate if total < p.ell else 0.0
    for i in range(nu):
        kappa += occ.served_own[i] * p.mu[i] + occ.waiting[i] * p.theta[i]
        if i < nu - 1:
            kappa += occ.served_up[i] * p.mu_up[i]
    return kappa


@pytest.mark.parametrize("form", [FORM_SERVED, FORM_TOTAL])
def test_conservation_and_no_self_loops(form):
    p = four_level(ell=6)
    res = ReservationVector((1, 0, 1))
    space = enumerate_reservation_states(p, res)
    rm = build_rate_matrix(p, res, form=form, space=space)
    for i in range(len(space)):
        s = space.state_at(i)
        trans = reservation_transitions(s, p, res, form)
        assert all(t.target != t.source for t in trans)
        assert abs(sum(t.rate for t in trans) - kappa_closed_form(s, p, res)) < 1e-12
        assert abs(rm.kappa[i] - kappa_closed_form(s, p, res)) < 1e-12


def reachable_indices(rm):
    space = rm.space
    start = space.index_of((0,) * space.dim)
    seen = {start}
    todo = deque([start])
    while todo:
        i = todo.popleft()
        lo, hi = rm.ev_offsets[i], rm.ev_offsets[i + 1]
        for m in range(lo, hi):
            j = int(rm.ev_target[m])
            assert j >= 0, f"reachable state {space.state_at(i)} has an out-of-space target"
            if j not in seen:
                seen.add(j)
                todo.append(j)
    return seen


def test_closure_on_reachable_set():
    # Exhaustive closure over every state reachable from empty, for all
    # reservation vectors of a small model.  This holds for the served-count
    # routing form only; the total-count variant can strand a waiting caller
    # beside an agent that later frees up, stepping outside the space (such
    # targets are treated as absorbing with value zero downstream).
    p = four_level(ell=5, k=(2, 2, 1, 1))
    for res in reservation_grid(p):
        rm = build_rate_matrix(p, res, form=FORM_SERVED)
        reachable_indices(rm)


def test_total_form_escapes_are_flagged():
    p = four_level(ell=5, k=(2, 2, 1, 1))
    rm = build_rate_matrix(p, ReservationVector((0, 0, 0)), form=FORM_TOTAL)
    i = rm.space.index_of((0, 0, 3, 0, 1, 1, 0))
    targets = rm.ev_target[rm.ev_offsets[i] : rm.ev_offsets[i + 1]]
    assert (targets < 0).any()
    # kappa still counts the escaping rate: the transform systems keep the
    # full denominator and drop the out-of-space successor term.
    assert rm.kappa[i] == pytest.approx(kappa_closed_form((0, 0, 3, 0, 1, 1, 0), p, ReservationVector((0, 0, 0))))


def test_reservation_semantics_never_exceeds_unreserved():
    # No transition may push an up-served count beyond k_{i+1} - Theta_{i+1}.
    p = four_level(ell=6)
    res = ReservationVector((1, 1, 2))
    space = enumerate_reservation_states(p, res)
    for i in range(len(space)):
        for t in reservation_transitions(space.state_at(i), p, res):
            for lvl in range(3):
                assert t.target[2 * lvl + 1] <= p.k[lvl + 1] - res.thetas[lvl]


def test_empty_state_only_arrivals():
    p = four_level()
    res = ReservationVector((0, 0, 0))
    trans = transitions_from_4((0,) * 7, p, res)
    assert sorted(t.event_tag for t in trans) == ["arrival-1", "arrival-2", "arrival-3", "arrival-4"]
    t1 = next(t for t in trans if t.event_tag == "arrival-1")
    assert t1.target == (1, 0, 0, 0, 0, 0, 0)  # a level-1 agent is free, no up-assignment


def test_level1_arrival_queues_when_threshold_bites():
    # With three level-1 callers in service and both level-2 agents busy,
    # a fresh level-1 arrival must queue rather than go up.
    p = four_level()
    res = ReservationVector((0, 0, 0))
    trans = transitions_from_4((3, 0, 2, 0, 0, 0, 0), p, res)
    t1 = next(t for t in trans if t.event_tag == "arrival-1")
    assert t1.target == (4, 0, 2, 0, 0, 0, 0)


def test_full_state_has_no_arrivals_and_blocking_rate():
    p = four_level(ell=4)
    res = ReservationVector((0, 0, 0))
    rm = build_rate_matrix(p, res)
    for i in range(rm.num_states):
        s = rm.space.state_at(i)
        total = sum(s[0::2])
        tags = [t.event_tag for t in rm.transitions_of(i)]
        if total == p.ell:
            assert not any(tag.startswith("arrival") for tag in tags)
            assert rm.blocking_cost_rate[i] == pytest.approx(p.beta * p.total_arrival_rate)
        else:
            assert rm.blocking_cost_rate[i] == 0.0


def test_abandonment_costs_annotated():
    p = four_level()
    res = ReservationVector((0, 0, 0))
    # one waiting level-1 caller: a = 6, a1 at its cap of 2, k1 = 3 in service
    trans = transitions_from_4((6, 2, 0, 0, 0, 0, 0), p, res)
    ab = [t for t in trans if t.event_tag == "abandon-1"]
    assert len(ab) == 1
    assert ab[0].rate == pytest.approx(1 * p.theta[0])
    assert ab[0].cost == pytest.approx(p.gamma[0])


def test_jump_chain_rows_and_hand_computed_probability():
    p = two_level()
    space = enumerate_states_2(p)
    res = ReservationVector((0,))
    rm = build_rate_matrix_2(p, res, space=space)
    P = jump_chain(rm)
    sums = np.asarray(P.sum(axis=1)).ravel()
    assert np.all(np.abs(sums - 1.0) < 1e-12)

    # state (5,1,1,2,0): kappa = 1 + 1 + 5/4 + 1/4 + 2/4 + 1 = 5
    i = space.index_of((5, 1, 1, 2, 0))
    assert rm.kappa[i] == pytest.approx(5.0)
    j = space.index_of((5, 2, 1, 2, 0))  # level-1 arrival assigned up under Theta_2 = 0
    assert P[i, j] == pytest.approx(1.0 / 5.0)


def test_jump_chain_rows_4level():
    p = four_level(ell=5)
    rm = build_rate_matrix(p, ReservationVector((0, 0, 0)))
    P = jump_chain(rm)
    reachable = reachable_indices(rm)
    sums = np.asarray(P.sum(axis=1)).ravel()
    for i in reachable:
        assert abs(sums[i] - 1.0) < 1e-12


class _DictPolicy:
    def __init__(self, mapping):
        self.mapping = mapping

    def action_for(self, state, event_tag):
        return self.mapping.get((state, event_tag))


def test_two_level_action_set_successors():
    """Successor sets of state (5,1,1,2,0) under the four action combinations."""
    p = two_level()
    s = (5, 1, 1, 2, 0)

    def successors(arrival_action, completion_action):
        pol = _DictPolicy(
            {
                (s, "arrival-1"): arrival_action,
                (s, "service-up-1"): completion_action,
                (s, "service-own-2"): completion_action,
            }
        )
        return {t.event_tag: t.target for t in transitions_from_2(s, p, pol)}

    first = successors("assign-up", "take-level-1")
    assert first["arrival-1"] == (5, 2, 1, 2, 0)
    assert first["arrival-2"] == (5, 1, 1, 3, 0)
    assert first["service-own-1"] == (5, 1, 0, 2, 0)
    assert first["service-up-1"] == (5, 1, 0, 2, 0)
    assert first["service-own-2"] == (5, 2, 0, 1, 0)
    assert first["abandon-1"] == (5, 1, 0, 2, 0)

    fourth = successors("queue", "reserve")
    assert fourth["arrival-1"] == (5, 1, 2, 2, 0)
    assert fourth["service-up-1"] == (5, 0, 1, 2, 0)
    assert fourth["service-own-2"] == (5, 1, 1, 1, 0)


def test_two_level_closure_and_feasibility():
    p = two_level(ell=8, k=(2, 2))
    space = enumerate_states_2(p)
    for i in range(len(space)):
        s = space.state_at(i)
        for menu in mdp2_event_menu(s, p):
            assert menu.rate > 0
            for _, target, _ in menu.actions:
                assert target in space


def test_incomplete_policy_raises():
    p = two_level()
    s = (5, 1, 1, 2, 0)
    with pytest.raises(IncompletePolicyError):
        transitions_from_2(s, p, _DictPolicy({}))


def test_transition_csv_dump(tmp_path):
    p = four_level(ell=2)
    rm = build_rate_matrix(p, ReservationVector((0, 0, 0)))
    path = tmp_path / "transitions.csv"
    rm.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "from,to,rate,tag,cost"
    assert len(lines) == 1 + len(rm.ev_rate)
