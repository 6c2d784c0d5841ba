"""Model parameters and constrained state spaces.

Two Markov-chain families are enumerated here:

* the reservation-policy chain for a centre with ``nu`` levels of callers and
  agents, with states ``(n_1, u_1, ..., n_{nu-1}, u_{nu-1}, n_nu)`` where
  ``n_i`` counts level-``i`` callers in the system and ``u_i`` counts those
  currently served by a level-``i+1`` agent (for ``nu = 4`` this is the
  7-tuple ``(a, a1, b, b1, c, c1, d)``), and
* the fully flexible two-level decision chain with states
  ``(a1, a2, aq, b2, bq)``.

Per-level tagged-caller spaces used by the waiting-time analysis are also
built here.  All spaces are immutable after construction and are safe to
share across threads.  Rates are interpreted as events per minute.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "ModelParams",
    "ReservationVector",
    "StateSpace",
    "OccupancySummary",
    "InvalidStateError",
    "load_params",
    "reservation_grid",
    "enumerate_states_2",
    "enumerate_states_4",
    "enumerate_reservation_states",
    "enumerate_wait_states",
    "derive_occupancy",
    "in_reservation_space",
    "in_mdp2_space",
    "in_wait_space",
]


class InvalidStateError(ValueError):
    """A state tuple violates the membership constraints of its family."""


@dataclass(frozen=True)
class ModelParams:
    """Rates, costs and sizes of a hierarchical service centre.

    All rates are per unit time (one minute throughout the bundled example
    configurations).  ``mu_up[i]`` is the rate at which a level-``i+1`` call
    is served by a level-``i+2`` agent (0-based), ``gamma`` the per-level
    abandonment costs, ``beta`` the cost of one blocked arrival, ``k`` the
    per-level agent counts and ``ell`` the total caller capacity shared by
    all levels.
    """

    num_levels: int
    lam: tuple[float, ...]
    mu: tuple[float, ...]
    mu_up: tuple[float, ...]
    theta: tuple[float, ...]
    gamma: tuple[float, ...]
    beta: float
    k: tuple[int, ...]
    ell: int

    def __post_init__(self) -> None:
        nu = self.num_levels
        if nu not in (2, 3, 4):
            raise ValueError(f"num_levels must be 2, 3 or 4, got {nu}")
        for name, want in (("lam", nu), ("mu", nu), ("theta", nu), ("gamma", nu), ("k", nu), ("mu_up", nu - 1)):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
            if len(value) != want:
                raise ValueError(f"{name} must have length {want}, got {len(value)}")
        for name in ("lam", "mu", "mu_up", "theta"):
            if any(x <= 0 for x in getattr(self, name)):
                raise ValueError(f"all entries of {name} must be strictly positive")
        if any(g < 0 for g in self.gamma):
            raise ValueError("abandonment costs gamma must be >= 0")
        if self.beta < 0:
            raise ValueError("blocking cost beta must be >= 0")
        if any(int(x) != x or x < 1 for x in self.k):
            raise ValueError("agent counts k must be positive integers")
        object.__setattr__(self, "k", tuple(int(x) for x in self.k))
        if int(self.ell) != self.ell or self.ell < 0:
            raise ValueError("capacity ell must be a nonnegative integer")
        object.__setattr__(self, "ell", int(self.ell))

    @property
    def total_arrival_rate(self) -> float:
        return float(sum(self.lam))

    def to_dict(self) -> dict:
        return {
            "num_levels": self.num_levels,
            "lambda": list(self.lam),
            "mu": list(self.mu),
            "mu_up": list(self.mu_up),
            "theta": list(self.theta),
            "gamma": list(self.gamma),
            "beta": self.beta,
            "k": list(self.k),
            "ell": self.ell,
        }


def load_params(source: str | Path | dict) -> ModelParams:
    """Build :class:`ModelParams` from a JSON document or parsed dict.

    The JSON keys match the field names, with ``"lambda"`` accepted for the
    arrival rates (``lam`` in Python, where ``lambda`` is reserved).
    Unknown keys other than ``defaults`` (command-level option defaults used
    by the command line) are rejected with a field-level message.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = dict(source)
    known = {"num_levels", "lambda", "lam", "mu", "mu_up", "theta", "gamma", "beta", "k", "ell", "defaults"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    if "lambda" in doc and "lam" in doc:
        raise ValueError("config must not provide both 'lambda' and 'lam'")
    lam = doc.get("lambda", doc.get("lam"))
    required = {"mu", "mu_up", "theta", "k", "ell"}
    missing = sorted(r for r in required if r not in doc)
    if lam is None:
        missing.insert(0, "lambda")
    if missing:
        raise ValueError(f"missing config field(s): {', '.join(missing)}")
    num_levels = doc.get("num_levels", len(lam))
    gamma = doc.get("gamma", [1.0] * len(lam))
    return ModelParams(
        num_levels=num_levels,
        lam=tuple(float(x) for x in lam),
        mu=tuple(float(x) for x in doc["mu"]),
        mu_up=tuple(float(x) for x in doc["mu_up"]),
        theta=tuple(float(x) for x in doc["theta"]),
        gamma=tuple(float(x) for x in gamma),
        beta=float(doc.get("beta", 0.0)),
        k=tuple(doc["k"]),
        ell=doc["ell"],
    )


@dataclass(frozen=True)
class ReservationVector:
    """Reservation thresholds ``(Theta_2, ..., Theta_nu)``.

    Threshold ``Theta_i`` keeps that many level-``i`` agents free for
    level-``i`` calls: a lower-level call is routed or handed up only while
    strictly more than ``Theta_i`` level-``i`` agents are idle.
    """

    thetas: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "thetas", tuple(int(x) for x in self.thetas))
        if any(t < 0 for t in self.thetas):
            raise ValueError("reservation thresholds must be >= 0")

    def validate_for(self, p: ModelParams) -> None:
        if len(self.thetas) != p.num_levels - 1:
            raise ValueError(
                f"expected {p.num_levels - 1} thresholds for a {p.num_levels}-level model, got {len(self.thetas)}"
            )
        for i, t in enumerate(self.thetas):
            if t > p.k[i + 1]:
                raise ValueError(f"threshold {t} for level {i + 2} exceeds agent count {p.k[i + 1]}")

    def theta_for_level(self, level: int) -> int:
        """Threshold protecting 1-based agent level ``level`` (2..nu)."""
        return self.thetas[level - 2]


def reservation_grid(p: ModelParams) -> Iterator[ReservationVector]:
    """All ``prod(k_i + 1)`` reservation vectors, in lexicographic order."""

    def rec(prefix: tuple[int, ...], level: int) -> Iterator[ReservationVector]:
        if level > p.num_levels:
            yield ReservationVector(prefix)
            return
        for t in range(p.k[level - 1] + 1):
            yield from rec(prefix + (t,), level + 1)

    yield from rec((), 2)


# ---------------------------------------------------------------------------
# Membership predicates
# ---------------------------------------------------------------------------


def _split_reservation_state(state: Sequence[int], nu: int) -> tuple[list[int], list[int]]:
    if len(state) != 2 * nu - 1:
        raise InvalidStateError(f"expected a {2 * nu - 1}-tuple for a {nu}-level reservation state, got {len(state)}")
    n = [int(state[2 * i]) for i in range(nu)]
    u = [int(state[2 * i + 1]) for i in range(nu - 1)]
    return n, u


def in_reservation_space(state: Sequence[int], p: ModelParams, res: ReservationVector) -> bool:
    """Membership test for the reservation chain of ``p.num_levels`` levels.

    The bounds on the up-served counts ``u_i`` exclude configurations the
    reservation policy can never create: ``u_i`` never exceeds the
    unreserved part of the next level, and a level-``i`` caller cannot be
    waiting while the next level has visibly spare unreserved agents.
    """
    nu = p.num_levels
    try:
        n, u = _split_reservation_state(state, nu)
    except InvalidStateError:
        return False
    if any(x < 0 for x in n) or any(x < 0 for x in u):
        return False
    if sum(n) > p.ell:
        return False
    for i in range(nu - 1):
        k_next = p.k[i + 1]
        th = res.theta_for_level(i + 2)
        hi = min(k_next - th, n[i])
        lo = 0
        if n[i] > p.k[i] and n[i + 1] < k_next - th:
            lo = min(n[i] - p.k[i], k_next - n[i + 1] - th)
        if not (lo <= u[i] <= hi):
            return False
    return True


def in_mdp2_space(state: Sequence[int], p: ModelParams) -> bool:
    """Membership test for the two-level decision chain ``(a1, a2, aq, b2, bq)``."""
    if p.num_levels != 2:
        raise ValueError("the decision chain is defined for two-level models only")
    if len(state) != 5:
        return False
    a1, a2, aq, b2, bq = (int(x) for x in state)
    if min(a1, a2, aq, b2, bq) < 0:
        return False
    k1, k2 = p.k
    if a1 > k1 or a2 > k2 or b2 > k2 - a2:
        return False
    if a1 + a2 + aq + b2 + bq > p.ell:
        return False
    if a1 < k1 and aq > 0:
        return False
    if a2 + b2 < k2 and aq > 0 and bq > 0:
        return False
    return True


def in_wait_space(level: int, state: Sequence[int], p: ModelParams, res: ReservationVector) -> bool:
    """Membership test for the tagged-caller chain of the given 1-based level."""
    if p.num_levels != 4:
        raise ValueError("tagged-caller spaces are defined for four-level models")
    k1, k2, k3, k4 = p.k
    t2, t3, t4 = (res.theta_for_level(i) for i in (2, 3, 4))
    vals = [int(x) for x in state]
    if any(v < 0 for v in vals):
        return False
    if level == 4:
        if len(vals) != 2:
            return False
        c1, d = vals
        return c1 + d <= p.ell and c1 <= k4 - t4
    if level == 3:
        if len(vals) != 4:
            return False
        b1, c, c1, d = vals
        if b1 + c + d > p.ell or b1 > k3 - t3:
            return False
        lo = min(c - k3, k4 - d - t4) if (c > k3 and d < k4 - t4) else 0
        return lo <= c1 <= min(k4 - t4, c)
    if level == 2:
        if len(vals) != 6:
            return False
        a1, b, b1, c, c1, d = vals
        if a1 + b + c + d > p.ell or a1 > k2 - t2:
            return False
        lo_b1 = min(b - k2, k3 - c - t3) if (b > k2 and c < k3 - t3) else 0
        if not (lo_b1 <= b1 <= min(k3 - t3, b)):
            return False
        lo_c1 = min(c - k3, k4 - d - t4) if (c > k3 and d < k4 - t4) else 0
        return lo_c1 <= c1 <= min(k4 - t4, c)
    if level == 1:
        return in_reservation_space(state, p, res)
    raise ValueError(f"level must be in 1..4, got {level}")


# ---------------------------------------------------------------------------
# Indexed state spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSpace:
    """Ordered, index-addressable family of states.

    States are stored lexicographically; ``index_of`` resolves a tuple to
    its dense index in O(1) through a mixed-radix lookup table.
    """

    family: str
    states: np.ndarray
    _radix: tuple[int, ...] = field(repr=False)
    _lookup: np.ndarray = field(repr=False)

    @staticmethod
    def build(family: str, states: Iterable[Sequence[int]], radix: Sequence[int]) -> "StateSpace":
        arr = np.array(list(states), dtype=np.int64)
        if arr.ndim != 2:
            arr = arr.reshape(len(arr), -1)
        radix = tuple(int(r) for r in radix)
        strides = np.ones(len(radix), dtype=np.int64)
        for i in range(len(radix) - 2, -1, -1):
            strides[i] = strides[i + 1] * radix[i + 1]
        lookup = np.full(int(np.prod(radix, dtype=np.int64)), -1, dtype=np.int64)
        flat = arr @ strides
        lookup[flat] = np.arange(len(arr))
        return StateSpace(family=family, states=arr, _radix=radix, _lookup=lookup)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def state_at(self, index: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.states[index])

    def index_of(self, state: Sequence[int]) -> int:
        idx = self.find(state)
        if idx < 0:
            raise InvalidStateError(f"state {tuple(state)} is not in space {self.family!r}")
        return idx

    def find(self, state: Sequence[int]) -> int:
        """Index of ``state``, or -1 if it is not a member."""
        if len(state) != len(self._radix):
            return -1
        flat = 0
        for x, r in zip(state, self._radix):
            xi = int(x)
            if xi < 0 or xi >= r:
                return -1
            flat = flat * r + xi
        return int(self._lookup[flat])

    def __contains__(self, state: Sequence[int]) -> bool:
        return self.find(state) >= 0


def enumerate_reservation_states(p: ModelParams, res: ReservationVector) -> StateSpace:
    """The reservation-chain state space, lexicographically ordered.

    The generator walks caller counts level by level, pruning on the running
    population total, and emits the feasible up-served ranges directly from
    their closed-form bounds; the brute-force membership filter exists only
    in the test suite as an independent oracle.
    """
    res.validate_for(p)
    nu = p.num_levels
    ell = p.ell
    states: list[tuple[int, ...]] = []

    # The bounds on u_i depend on (n_i, n_{i+1}), so generation interleaves:
    # each u_i is emitted right after n_{i+1} is fixed, and the result is
    # sorted once at the end to pin the lexicographic ordering.
    def walk_u(level: int, used: int, prefix: tuple[int, ...], n_here: int) -> None:
        for n_next in range(ell - used + 1):
            k_next = p.k[level + 1]
            th = res.theta_for_level(level + 2)
            hi = min(k_next - th, n_here)
            lo = 0
            if n_here > p.k[level] and n_next < k_next - th:
                lo = min(n_here - p.k[level], k_next - n_next - th)
            for u in range(lo, hi + 1):
                if level + 1 == nu - 1:
                    states.append(prefix + (u, n_next))
                else:
                    walk_u(level + 1, used + n_next, prefix + (u, n_next), n_next)

    for n0 in range(ell + 1):
        walk_u(0, n0, (n0,), n0)

    states.sort()
    radix = []
    for i in range(nu - 1):
        radix.extend([ell + 1, p.k[i + 1] + 1])
    radix.append(ell + 1)
    return StateSpace.build(f"reservation{nu}", states, radix)


def enumerate_states_4(p: ModelParams, res: ReservationVector) -> StateSpace:
    """State space ``(a, a1, b, b1, c, c1, d)`` of the four-level chain."""
    if p.num_levels != 4:
        raise ValueError("enumerate_states_4 requires a four-level model")
    return enumerate_reservation_states(p, res)


def enumerate_states_2(p: ModelParams) -> StateSpace:
    """State space ``(a1, a2, aq, b2, bq)`` of the two-level decision chain."""
    if p.num_levels != 2:
        raise ValueError("enumerate_states_2 requires a two-level model")
    k1, k2 = p.k
    ell = p.ell
    states = []
    for a1 in range(k1 + 1):
        max_aq = ell if a1 == k1 else 0
        for a2 in range(k2 + 1):
            for aq in range(max_aq + 1):
                for b2 in range(k2 - a2 + 1):
                    if a1 + a2 + aq + b2 > ell:
                        break
                    free2 = k2 - a2 - b2
                    for bq in range(ell - a1 - a2 - aq - b2 + 1):
                        if free2 > 0 and aq > 0 and bq > 0:
                            break
                        states.append((a1, a2, aq, b2, bq))
    states.sort()
    radix = (k1 + 1, k2 + 1, ell + 1, k2 + 1, ell + 1)
    return StateSpace.build("mdp2", states, radix)


def enumerate_wait_states(level: int, p: ModelParams, res: ReservationVector) -> StateSpace:
    """Tagged-caller state space for callers of the given 1-based level.

    Level 4 tracks ``(c1, d)``; level 3 tracks ``(b1, c, c1, d)``; level 2
    tracks ``(a1, b, b1, c, c1, d)``; for level 1 the chain uses the full
    reservation space.
    """
    if p.num_levels != 4:
        raise ValueError("tagged-caller spaces are defined for four-level models")
    res.validate_for(p)
    k1, k2, k3, k4 = p.k
    t2, t3, t4 = (res.theta_for_level(i) for i in (2, 3, 4))
    ell = p.ell
    if level == 1:
        space = enumerate_reservation_states(p, res)
        return StateSpace(family="wait1", states=space.states, _radix=space._radix, _lookup=space._lookup)
    states = []
    if level == 4:
        for c1 in range(min(k4 - t4, ell) + 1):
            for d in range(ell - c1 + 1):
                states.append((c1, d))
        radix = (k4 + 1, ell + 1)
    elif level == 3:
        for b1 in range(min(k3 - t3, ell) + 1):
            for c in range(ell - b1 + 1):
                for d in range(ell - b1 - c + 1):
                    lo = min(c - k3, k4 - d - t4) if (c > k3 and d < k4 - t4) else 0
                    for c1 in range(lo, min(k4 - t4, c) + 1):
                        states.append((b1, c, c1, d))
        states.sort()
        radix = (k3 + 1, ell + 1, k4 + 1, ell + 1)
    elif level == 2:
        for a1 in range(min(k2 - t2, ell) + 1):
            for b in range(ell - a1 + 1):
                for c in range(ell - a1 - b + 1):
                    lo_b1 = min(b - k2, k3 - c - t3) if (b > k2 and c < k3 - t3) else 0
                    for b1 in range(lo_b1, min(k3 - t3, b) + 1):
                        for d in range(ell - a1 - b - c + 1):
                            lo_c1 = min(c - k3, k4 - d - t4) if (c > k3 and d < k4 - t4) else 0
                            for c1 in range(lo_c1, min(k4 - t4, c) + 1):
                                states.append((a1, b, b1, c, c1, d))
        states.sort()
        radix = (k2 + 1, ell + 1, k3 + 1, ell + 1, k4 + 1, ell + 1)
    else:
        raise ValueError(f"level must be in 1..4, got {level}")
    return StateSpace.build(f"wait{level}", states, radix)


# ---------------------------------------------------------------------------
# Occupancy derivation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OccupancySummary:
    """Per-level decomposition of a reservation-chain state."""

    served_own: tuple[int, ...]
    served_up: tuple[int, ...]
    waiting: tuple[int, ...]
    free_agents: tuple[int, ...]


def derive_occupancy(state: Sequence[int], p: ModelParams, res: ReservationVector | None = None) -> OccupancySummary:
    """Decompose a reservation-chain state into served/waiting/free counts.

    At each level ``i``, ``min(n_i - u_i, k_i - u_{i-1})`` callers are served
    by their own level's agents (``u_{i-1}`` of those agents are busy with
    the level below), the remainder of ``n_i - u_i`` wait, and ``u_i`` are
    served one level up.
    """
    if res is None:
        res = ReservationVector((0,) * (p.num_levels - 1))
    if not in_reservation_space(state, p, res):
        raise InvalidStateError(f"state {tuple(state)} is not a valid {p.num_levels}-level reservation state")
    nu = p.num_levels
    n, u = _split_reservation_state(state, nu)
    u = u + [0]
    served_own, waiting, free_agents = [], [], []
    for i in range(nu):
        u_prev = u[i - 1] if i > 0 else 0
        cap = p.k[i] - u_prev
        own = min(n[i] - u[i], cap)
        served_own.append(own)
        waiting.append(n[i] - u[i] - own)
        free_agents.append(cap - own)
    return OccupancySummary(
        served_own=tuple(served_own),
        served_up=tuple(u[: nu - 1]) + (0,),
        waiting=tuple(waiting),
        free_agents=tuple(free_agents),
    )
