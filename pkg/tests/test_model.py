"""State-space enumeration against independent brute-force filters."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierq.model import (
    InvalidStateError,
    ModelParams,
    ReservationVector,
    derive_occupancy,
    enumerate_reservation_states,
    enumerate_states_2,
    enumerate_states_4,
    enumerate_wait_states,
    in_mdp2_space,
    in_reservation_space,
    in_wait_space,
    load_params,
    reservation_grid,
)


def two_level(ell=20, k=(5, 5)):
    return ModelParams(
        num_levels=2,
        lam=(1.0, 1.0),
        mu=(0.25, 0.25),
        mu_up=(0.25,),
        theta=(1.0, 2.0),
        gamma=(1.0, 2.0),
        beta=0.0,
        k=k,
        ell=ell,
    )


def four_level(ell=10, k=(3, 2, 2, 2)):
    return ModelParams(
        num_levels=4,
        lam=(1.0, 0.5, 0.2, 0.125),
        mu=(2 / 3, 0.5, 0.25, 1 / 6),
        mu_up=(2 / 3, 0.5, 0.25),
        theta=(2.0, 1.0, 1.0, 1.0),
        gamma=(1.0, 1.0, 1.0, 1.0),
        beta=0.0,
        k=k,
        ell=ell,
    )


# ---------------------------------------------------------------------------
# Brute-force oracles: dumb full filters over bounded hypercubes.
# ---------------------------------------------------------------------------


def brute_force_reservation(p, res):
    nu = p.num_levels
    ranges = []
    for i in range(nu - 1):
        ranges.append(range(p.ell + 1))
        ranges.append(range(p.k[i + 1] + 1))
    ranges.append(range(p.ell + 1))
    return sorted(s for s in itertools.product(*ranges) if in_reservation_space(s, p, res))


def brute_force_mdp2(p):
    k1, k2 = p.k
    ranges = [range(k1 + 1), range(k2 + 1), range(p.ell + 1), range(k2 + 1), range(p.ell + 1)]
    return sorted(s for s in itertools.product(*ranges) if in_mdp2_space(s, p))


def brute_force_wait(level, p, res):
    dims = {4: 2, 3: 4, 2: 6, 1: 7}[level]
    bound = {
        4: [p.k[3] + 1, p.ell + 1],
        3: [p.k[2] + 1, p.ell + 1, p.k[3] + 1, p.ell + 1],
        2: [p.k[1] + 1, p.ell + 1, p.k[2] + 1, p.ell + 1, p.k[3] + 1, p.ell + 1],
        1: None,
    }[level]
    if level == 1:
        return brute_force_reservation(p, res)
    ranges = [range(b) for b in bound]
    assert len(ranges) == dims
    return sorted(s for s in itertools.product(*ranges) if in_wait_space(level, s, p, res))


def test_enumeration_matches_oracle_4level_small():
    p = four_level(ell=5, k=(2, 2, 1, 1))
    for res in reservation_grid(p):
        space = enumerate_states_4(p, res)
        assert [tuple(s) for s in space.states] == brute_force_reservation(p, res)


def test_enumeration_matches_oracle_2level_reservation():
    p = two_level(ell=6, k=(2, 2))
    for res in reservation_grid(p):
        space = enumerate_reservation_states(p, res)
        assert [tuple(s) for s in space.states] == brute_force_reservation(p, res)


def test_enumeration_matches_oracle_mdp2():
    p = two_level(ell=7, k=(2, 3))
    space = enumerate_states_2(p)
    assert [tuple(s) for s in space.states] == brute_force_mdp2(p)


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_wait_space_matches_oracle(level):
    p = four_level(ell=4, k=(2, 2, 1, 1))
    for res in [ReservationVector((0, 0, 0)), ReservationVector((1, 1, 1)), ReservationVector((2, 0, 1))]:
        space = enumerate_wait_states(level, p, res)
        assert [tuple(s) for s in space.states] == brute_force_wait(level, p, res)


@settings(max_examples=40, deadline=None)
@given(
    ell=st.integers(1, 6),
    k=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(1, 2)),
    data=st.data(),
)
def test_enumeration_oracle_randomised(ell, k, data):
    p = four_level(ell=ell, k=k)
    thetas = tuple(data.draw(st.integers(0, k[i])) for i in (1, 2, 3))
    res = ReservationVector(thetas)
    space = enumerate_states_4(p, res)
    assert [tuple(s) for s in space.states] == brute_force_reservation(p, res)


def test_index_round_trip():
    p = four_level()
    res = ReservationVector((0, 0, 0))
    space = enumerate_states_4(p, res)
    for i in range(len(space)):
        assert space.index_of(space.state_at(i)) == i
    # lexicographic ordering
    arr = [tuple(s) for s in space.states]
    assert arr == sorted(arr)


def test_membership_and_errors():
    p = four_level()
    res = ReservationVector((0, 0, 0))
    space = enumerate_states_4(p, res)
    assert (4, 0, 2, 0, 0, 0, 0) in space
    assert space.find((0, 1, 0, 0, 0, 0, 0)) == -1  # u1 > n1
    with pytest.raises(InvalidStateError):
        space.index_of((0, 1, 0, 0, 0, 0, 0))
    with pytest.raises(InvalidStateError):
        space.index_of((1, 0, 0))  # wrong family arity


def test_capacity_zero_single_state():
    p4 = four_level(ell=0)
    space = enumerate_states_4(p4, ReservationVector((0, 0, 0)))
    assert len(space) == 1 and space.state_at(0) == (0, 0, 0, 0, 0, 0, 0)
    p2 = two_level(ell=0)
    space2 = enumerate_states_2(p2)
    assert len(space2) == 1 and space2.state_at(0) == (0, 0, 0, 0, 0)


def test_theta_monotonicity():
    p = four_level(ell=6, k=(2, 2, 2, 2))
    sizes = {}
    for res in reservation_grid(p):
        sizes[res.thetas] = len(enumerate_states_4(p, res))
    for t1, n1 in sizes.items():
        for t2, n2 in sizes.items():
            if all(a <= b for a, b in zip(t1, t2)):
                assert n2 <= n1


def test_paper_state_membership_2level():
    p = two_level()
    space = enumerate_states_2(p)
    assert (5, 1, 1, 2, 0) in space


def test_full_reservation_forbids_cross_service():
    p = four_level(ell=6)
    res = ReservationVector((2, 2, 2))  # Theta_i = k_i everywhere
    space = enumerate_states_4(p, res)
    assert np.all(space.states[:, 1] == 0)
    assert np.all(space.states[:, 3] == 0)
    assert np.all(space.states[:, 5] == 0)
    wait4 = enumerate_wait_states(4, p, res)
    assert np.all(wait4.states[:, 0] == 0)


def test_wait4_example_space():
    p = four_level(ell=2, k=(3, 2, 2, 1))
    res = ReservationVector((0, 0, 0))
    space = enumerate_wait_states(4, p, res)
    assert [tuple(s) for s in space.states] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]


def test_occupancy_trivial_and_example():
    p = four_level()
    res = ReservationVector((0, 0, 0))
    occ = derive_occupancy((0,) * 7, p, res)
    assert occ.served_own == (0, 0, 0, 0)
    assert occ.waiting == (0, 0, 0, 0)
    assert occ.free_agents == p.k

    occ = derive_occupancy((4, 1, 2, 0, 0, 0, 0), p, res)
    assert occ.served_own[0] == 3 and occ.served_up[0] == 1 and occ.waiting[0] == 0
    assert occ.served_own[1] == 1 and occ.waiting[1] == 1

    with pytest.raises(InvalidStateError):
        derive_occupancy((5, 1, 1, 2, 0), p, res)  # wrong arity for this family


def test_occupancy_conservation_property():
    p = four_level(ell=6, k=(2, 2, 1, 2))
    res = ReservationVector((1, 0, 1))
    space = enumerate_states_4(p, res)
    for s in space.states:
        occ = derive_occupancy(tuple(s), p, res)
        n = [s[0], s[2], s[4], s[6]]
        for i in range(4):
            assert occ.served_own[i] + occ.served_up[i] + occ.waiting[i] == n[i]
            assert occ.served_own[i] >= 0 and occ.waiting[i] >= 0 and occ.free_agents[i] >= 0
            used = occ.served_own[i] + (occ.served_up[i - 1] if i > 0 else 0)
            assert used <= p.k[i]


def test_params_validation():
    with pytest.raises(ValueError):
        two_level(ell=-1)
    with pytest.raises(ValueError):
        ModelParams(2, (1.0, 0.0), (1, 1), (1,), (1, 1), (1, 1), 0.0, (1, 1), 5)
    with pytest.raises(ValueError):
        ReservationVector((0, -1))
    res = ReservationVector((3,))
    with pytest.raises(ValueError):
        res.validate_for(two_level(k=(5, 2)))


def test_load_params_round_trip(tmp_path):
    p = four_level()
    path = tmp_path / "model.json"
    path.write_text(__import__("json").dumps(p.to_dict()))
    q = load_params(path)
    assert q == p
    with pytest.raises(ValueError):
        load_params({"lambda": [1, 1], "mu": [1, 1]})
    with pytest.raises(ValueError):
        load_params({**p.to_dict(), "bogus": 3})


def test_reservation_grid_size_and_order():
    p = four_level(k=(3, 2, 2, 2))
    grid = list(reservation_grid(p))
    assert len(grid) == 27
    assert grid[0].thetas == (0, 0, 0)
    assert grid[-1].thetas == (2, 2, 2)
