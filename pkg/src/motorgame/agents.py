"""Non-learning baselines and a brute-force shortest-path oracle.

The random agent lower-bounds useful behaviour, the greedy agent codifies
the obvious "push the worst flag in the right direction" heuristic, and
the breadth-first oracle computes the true minimum number of actions to
feasibility for any variant.  Together they bracket what the trained
policy should achieve.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .catalog import BaseMachine, MachineVariant, feasible_mask, machine_by_id
from .env import ACTION_MOVES, NUM_ACTIONS, Action, DesignEnv, EpisodeRecord, run_episode
from .errors import ContractViolationError
from .surrogate import design_at, evaluate, lattice_index, lattice_shape


@dataclass(frozen=True)
class OracleResult:
    base_id: int
    variant_seed: int
    shortest_steps: int | None  # None: no feasible point reachable
    witness: tuple[Action, ...]


def random_agent(env: DesignEnv, rng: np.random.Generator,
                 log=None) -> EpisodeRecord:
    """Uniform random actions until the episode ends."""
    return run_episode(env, lambda obs: int(rng.integers(NUM_ACTIONS)), log)


def _band_violation(value: float, band: tuple[float, float]) -> float:
    lo, hi = band
    return max(value - hi, lo - value, 0.0)


def greedy_agent(env: DesignEnv, log=None) -> EpisodeRecord:
    """Deterministic one-step-lookahead heuristic.

    Each step targets the highest-priority nonzero flag and takes the
    action whose (clamped) one-step move most reduces that flag's band
    violation; ties go to the lowest action index.
    """
    base = env.base
    bands = env.variant.target_bands.as_tuple()
    weights = env.config.priority_weights
    order = sorted(range(len(weights)), key=lambda i: (-weights[i], i))
    shape = lattice_shape(base)

    def policy(obs: np.ndarray) -> int:
        flag_values = env.flags
        target = next((i for i in order if flag_values[i] != 0), None)
        if target is None:
            return 0  # already feasible; any action wins
        ijk = lattice_index(base, env.design)
        best_action, best_viol = 0, float("inf")
        for action in range(NUM_ACTIONS):
            axis, delta = ACTION_MOVES[action]
            cand = list(ijk)
            cand[axis] = min(max(cand[axis] + delta, 0), shape[axis] - 1)
            perf = evaluate(design_at(base, *cand), base)
            viol = _band_violation(perf.as_tuple()[target], bands[target])
            if viol < best_viol:
                best_action, best_viol = action, viol
        return best_action

    return run_episode(env, policy, log)


def oracle_shortest(variant: MachineVariant, base: BaseMachine | None = None,
                    ) -> OracleResult:
    """Breadth-first search for the minimum number of actions to feasibility.

    Nodes are lattice points, edges the six actions; moves that would
    leave the lattice are dropped (a shortest path never needs a no-op).
    Returns one optimal witness path alongside the step count.
    """
    if base is None:
        base = machine_by_id(variant.base_id)
    if base.id != variant.base_id:
        raise ContractViolationError(
            f"variant base {variant.base_id} does not match machine {base.id}")
    shape = lattice_shape(base)
    ni, nj, nk = shape
    goal = feasible_mask(base, variant.target_bands).ravel()

    def flat(i: int, j: int, k: int) -> int:
        return (i * nj + j) * nk + k

    start = flat(*lattice_index(base, variant.initial_design))
    if goal[start]:
        return OracleResult(variant.base_id, variant.variant_seed, 0, ())

    parent = np.full(ni * nj * nk, -1, dtype=np.int32)
    via = np.full(ni * nj * nk, -1, dtype=np.int8)
    parent[start] = start
    queue = deque([start])
    found = -1
    while queue and found < 0:
        node = queue.popleft()
        i, j = divmod(node, nj * nk)
        j, k = divmod(j, nk)
        for action in range(NUM_ACTIONS):
            axis, delta = ACTION_MOVES[action]
            cand = [i, j, k]
            cand[axis] += delta
            if not 0 <= cand[axis] < shape[axis]:
                continue
            nxt = flat(*cand)
            if parent[nxt] >= 0:
                continue
            parent[nxt] = node
            via[nxt] = action
            if goal[nxt]:
                found = nxt
                break
            queue.append(nxt)

    if found < 0:
        return OracleResult(variant.base_id, variant.variant_seed, None, ())
    path = []
    node = found
    while node != start:
        path.append(Action(int(via[node])))
        node = int(parent[node])
    path.reverse()
    return OracleResult(variant.base_id, variant.variant_seed, len(path),
                        tuple(path))
