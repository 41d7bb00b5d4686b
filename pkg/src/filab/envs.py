"""The three-armed bandit and the 3x3 gridworld, their experts and policy classes.

Gridworld cells are indexed ``row * 3 + col`` with row 0 at the top::

    0 1 2        1 = terminal (top middle)
    3 4 5        4 = undesirable center
    6 7 8        7 = start (bottom middle)

Actions are ``UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3``.  The expert flips a fair
coin at the start cell and then follows the left route (7, 6, 3, 0, 1) or
the mirrored right route (7, 8, 5, 2, 1), never entering the center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from filab.errors import InputError
from filab.mdp import FiniteMdp, TabularPolicy

UP, RIGHT, DOWN, LEFT = range(4)
ACTION_NAMES = "URDL"
_DELTAS = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}

SHARPNESS = 2.5
BANDIT_ACTIONS = ("a", "b", "c")


@dataclass(frozen=True)
class BanditSpec:
    epsilon0: float = 0.28
    expert: tuple[float, float, float] = (0.5, 0.5, 0.0)


@dataclass(frozen=True)
class GridWorldSpec:
    epsilon1: float = 0.14
    epsilon2: float = 0.15
    horizon: int = 8
    width: int = 3
    height: int = 3
    start_cell: int = 7
    terminal_cell: int = 1
    center_cell: int = 4


@dataclass(frozen=True, eq=False)
class ExpertModel:
    """Tabular expert plus its deterministic demonstrator modes (equal weights)."""

    policy: TabularPolicy
    modes: tuple[TabularPolicy, ...] = ()
    mode_names: tuple[str, ...] = ()

    @property
    def probs(self) -> np.ndarray:
        return self.policy.probs


def expert_query(expert: ExpertModel, state: int) -> np.ndarray:
    """Action distribution of the interactive expert at ``state``."""
    if not 0 <= state < expert.probs.shape[0]:
        raise InputError(f"state {state} out of range")
    return expert.probs[state].copy()


@dataclass(frozen=True, eq=False)
class EnvBundle:
    name: str
    mdp: FiniteMdp
    expert: ExpertModel
    policy_kind: str
    spec: BanditSpec | GridWorldSpec
    named_policies: dict[str, TabularPolicy] = field(default_factory=dict)


# -- bandit -----------------------------------------------------------------


def make_bandit(epsilon0: float = 0.28) -> EnvBundle:
    """Single state, actions (a, b, c), horizon 1; policies A, B and M(epsilon0)."""
    if not 0.0 <= epsilon0 <= 0.5:
        raise InputError(f"epsilon0 must lie in [0, 0.5], got {epsilon0}")
    mdp = FiniteMdp(np.ones((1, 3, 1)), np.ones(1), 1)
    spec = BanditSpec(epsilon0=float(epsilon0))
    A = TabularPolicy([[1.0, 0.0, 0.0]])
    B = TabularPolicy([[0.0, 1.0, 0.0]])
    M = TabularPolicy([[epsilon0, epsilon0, 1.0 - 2.0 * epsilon0]])
    expert = ExpertModel(TabularPolicy([list(spec.expert)]), modes=(A, B), mode_names=("A", "B"))
    return EnvBundle("bandit", mdp, expert, "bandit", spec, {"A": A, "B": B, "M": M})


# -- gridworld --------------------------------------------------------------


def _cell(row: int, col: int, width: int = 3) -> int:
    return row * width + col


def grid_move(cell: int, action: int, width: int = 3, height: int = 3) -> int:
    """Noise-free successor; moves off the grid leave the agent in place."""
    row, col = divmod(cell, width)
    dr, dc = _DELTAS[action]
    r2, c2 = row + dr, col + dc
    if 0 <= r2 < height and 0 <= c2 < width:
        return _cell(r2, c2, width)
    return cell


def grid_neighbors(cell: int, width: int = 3, height: int = 3) -> list[int]:
    out = []
    for a in range(4):
        nxt = grid_move(cell, a, width, height)
        if nxt != cell:
            out.append(nxt)
    return out


def grid_transition(spec: GridWorldSpec) -> np.ndarray:
    """Control noise swaps the commanded action for one of the other three
    uniformly (prob. epsilon1); transition noise then replaces the successor by
    a uniform in-grid neighbour of the current cell (prob. epsilon2)."""
    n = spec.width * spec.height
    e1, e2 = spec.epsilon1, spec.epsilon2
    P = np.zeros((n, 4, n))
    for s in range(n):
        if s == spec.terminal_cell:
            P[s, :, s] = 1.0
            continue
        nbrs = grid_neighbors(s, spec.width, spec.height)
        slip = np.zeros(n)
        slip[nbrs] = 1.0 / len(nbrs)
        for a in range(4):
            for executed in range(4):
                w = 1.0 - e1 if executed == a else e1 / 3.0
                if w == 0.0:
                    continue
                P[s, a, grid_move(s, executed, spec.width, spec.height)] += w * (1.0 - e2)
                P[s, a] += w * e2 * slip
    return P


def _route_actions(spec: GridWorldSpec, start_action: int) -> np.ndarray:
    acts = np.full(9, UP)
    acts[spec.start_cell] = start_action
    acts[_cell(2, 0)] = UP
    acts[_cell(1, 0)] = UP
    acts[_cell(0, 0)] = RIGHT
    acts[_cell(2, 2)] = UP
    acts[_cell(1, 2)] = UP
    acts[_cell(0, 2)] = LEFT
    # center: shortest center-avoiding exit is straight up into the terminal
    acts[spec.center_cell] = UP
    acts[spec.terminal_cell] = UP
    return acts


def make_gridworld(epsilon1: float = 0.14, epsilon2: float = 0.15, horizon: int = 8) -> EnvBundle:
    for name, eps in (("epsilon1", epsilon1), ("epsilon2", epsilon2)):
        if not 0.0 <= eps < 1.0:
            raise InputError(f"{name} must lie in [0, 1), got {eps}")
    if int(horizon) != horizon or horizon < 4:
        raise InputError(f"horizon must be an integer >= 4, got {horizon}")
    spec = GridWorldSpec(epsilon1=float(epsilon1), epsilon2=float(epsilon2), horizon=int(horizon))
    initial = np.zeros(9)
    initial[spec.start_cell] = 1.0
    mdp = FiniteMdp(grid_transition(spec), initial, spec.horizon)
    left = TabularPolicy.deterministic(_route_actions(spec, LEFT), 4)
    right = TabularPolicy.deterministic(_route_actions(spec, RIGHT), 4)
    expert = ExpertModel(
        TabularPolicy(0.5 * (left.probs + right.probs)), modes=(left, right), mode_names=("L", "R")
    )
    return EnvBundle("grid", mdp, expert, "grid", spec, {"L": left, "R": right})


GRID_POLICY_COUNT = 4**9


def grid_policy_actions(policy_id: int | np.ndarray) -> np.ndarray:
    """Decode policy ids (base 4, state 0 least significant) into action rows."""
    ids = np.asarray(policy_id, dtype=np.int64)
    digits = (ids[..., None] // (4 ** np.arange(9))) % 4
    return digits


def grid_policy_id(actions) -> int:
    actions = np.asarray(actions, dtype=np.int64)
    return int(np.sum(actions * 4 ** np.arange(9)))


def grid_policy_name(actions) -> str:
    return "".join(ACTION_NAMES[a] for a in np.asarray(actions))


def mirror_grid_actions(actions: np.ndarray) -> np.ndarray:
    """Reflect across the middle column: swap columns 0/2 and LEFT/RIGHT."""
    actions = np.asarray(actions)
    cells = np.arange(9)
    rows, cols = divmod(cells, 3)
    src = rows * 3 + (2 - cols)
    swapped = np.array([UP, LEFT, DOWN, RIGHT])
    return swapped[actions[..., src]]


# -- continuous parameterisations ------------------------------------------

_GRID_PHASES = np.array([0.0, math.pi / 2, math.pi, -math.pi / 2])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ParametricPolicy:
    """Softmax policy over a continuous parameter.

    ``bandit``: scalar angle; ``grid``: one angle per state; both map an
    angle through cosines to scores ``V`` and act with ``softmax(A (V + 1))``.
    ``logits``: free per-(state, action) logits, used for tabular cloning.
    """

    kind: str
    theta: np.ndarray
    sharpness: float = SHARPNESS
    num_states: int = 1

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if self.kind == "bandit":
            theta = theta.reshape(())
        elif self.kind == "grid":
            theta = theta.reshape(-1)
        elif self.kind == "logits":
            if theta.ndim != 2:
                raise InputError("logits policy needs a (state, action) table")
        else:
            raise InputError(f"unknown policy kind {self.kind!r}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        n = 1 if self.kind == "bandit" else theta.shape[0]
        object.__setattr__(self, "num_states", n)

    def with_theta(self, theta) -> "ParametricPolicy":
        return ParametricPolicy(self.kind, theta, self.sharpness)

    def _scores(self) -> tuple[np.ndarray, np.ndarray]:
        """Scores ``V`` (S, A) and their derivative w.r.t. each state's angle."""
        th = self.theta
        if self.kind == "bandit":
            angles = np.array([-th - math.pi / 4, th, -th + math.pi / 4])
            V = np.cos(angles)
            dV = np.array([np.sin(-th - math.pi / 4), -np.sin(th), np.sin(-th + math.pi / 4)])
            return V[None, :], dV[None, :]
        phase = _GRID_PHASES[None, :] - th[:, None]
        return np.cos(phase), np.sin(phase)

    def probs(self) -> np.ndarray:
        if self.kind == "logits":
            return _softmax(self.theta)
        V, _ = self._scores()
        return _softmax(self.sharpness * (V + 1.0))

    def tabular(self) -> TabularPolicy:
        p = self.probs()
        return TabularPolicy(p / p.sum(axis=1, keepdims=True))

    def grad_log_prob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-sample gradient of ``log pi(a | s)`` w.r.t. ``theta``.

        Shape ``(n,)`` for the bandit, ``(n, S)`` for grid, ``(n, S, A)`` for logits.
        """
        states = np.asarray(states)
        actions = np.asarray(actions)
        pi = self.probs()
        n = states.size
        if self.kind == "logits":
            g = np.zeros((n,) + self.theta.shape)
            g[np.arange(n), states, :] -= pi[states]
            g[np.arange(n), states, actions] += 1.0
            return g
        _, dV = self._scores()
        local = self.sharpness * (dV[states, actions] - np.sum(pi[states] * dV[states], axis=1))
        if self.kind == "bandit":
            return local
        g = np.zeros((n, self.num_states))
        g[np.arange(n), states] = local
        return g


def bandit_policy_from_theta(theta: float, sharpness: float = SHARPNESS) -> ParametricPolicy:
    return ParametricPolicy("bandit", theta, sharpness)


def grid_policy_from_theta(theta, sharpness: float = SHARPNESS) -> ParametricPolicy:
    return ParametricPolicy("grid", theta, sharpness)


def initial_policy(env: EnvBundle, rng: np.random.Generator, sharpness: float = SHARPNESS) -> ParametricPolicy:
    """Angles drawn uniformly from [-pi, pi] (one per state for the gridworld)."""
    if env.policy_kind == "bandit":
        return bandit_policy_from_theta(rng.uniform(-math.pi, math.pi), sharpness)
    return grid_policy_from_theta(rng.uniform(-math.pi, math.pi, env.mdp.num_states), sharpness)
