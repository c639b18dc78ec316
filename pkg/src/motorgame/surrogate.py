"""Closed-form per-unit performance model of the design game.

A design point is normalized against its base machine to the per-unit
triple (lam, nu, eta) = (length/L0, turns/N0, tooth_tip/h0).  The five
performance values are then:

    b_gap   = 1 / (nu * lam)                    airgap flux density [pu]
    sigma   = 1 + 0.4 * (eta - 1)               slot-leakage factor
    t_break = lam / (nu^2 * sigma)              breakdown torque [pu]
    i_start = 1 / (nu^2 * lam * sigma)          starting current [pu]
    d_temp  = 0.7*nu^2 + 0.3 / (nu^2 * lam^2)   temperature rise [pu]
    tooth_tip passed through unchanged [mm]

This is a qualitative scaling model (constant flux per pole spread over
pole area, leakage growing with turns-squared and tooth-tip height,
copper loss over cooling area plus iron loss), not a field solver.  It
reproduces the directional couplings a designer exploits and nothing
more.  All arithmetic is 64-bit and branch-free, so the helpers accept
plain floats or numpy arrays and return bit-identical values either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from .errors import ContractViolationError

if TYPE_CHECKING:
    from .catalog import BaseMachine

TOOTH_TIP_LEAKAGE_GAIN = 0.4  # k_h: sigma sensitivity to tooth-tip height
COPPER_LOSS_SHARE = 0.7
IRON_LOSS_SHARE = 0.3


@dataclass(frozen=True)
class DesignPoint:
    """The three free design variables."""

    length: float     # stack length, m
    turns: int        # coil turns per phase
    tooth_tip: float  # rotor tooth tip height, mm

    def __post_init__(self):
        if isinstance(self.turns, float) and not self.turns.is_integer():
            raise ContractViolationError(f"turns must be integral, got {self.turns}")
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "turns", int(self.turns))
        object.__setattr__(self, "tooth_tip", float(self.tooth_tip))
        if self.length <= 0 or self.tooth_tip <= 0 or self.turns < 1:
            raise ContractViolationError(f"invalid design point {self!r}")


@dataclass(frozen=True)
class Performance:
    """The five checked performance values, in fixed priority order."""

    b_gap: float      # pu
    t_break: float    # pu
    i_start: float    # pu
    d_temp: float     # pu
    tooth_tip: float  # mm, equals the design variable exactly

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.b_gap, self.t_break, self.i_start, self.d_temp, self.tooth_tip)


def _perf_values(lam, nu, eta):
    """S1-S5 on per-unit inputs; works elementwise on floats or arrays."""
    sigma = 1.0 + TOOTH_TIP_LEAKAGE_GAIN * (eta - 1.0)
    b_gap = 1.0 / (nu * lam)
    t_break = lam / (nu * nu * sigma)
    i_start = 1.0 / (nu * nu * lam * sigma)
    d_temp = COPPER_LOSS_SHARE * nu * nu + IRON_LOSS_SHARE / (nu * nu * lam * lam)
    return b_gap, t_break, i_start, d_temp


def check_bounds(design: DesignPoint, base: "BaseMachine") -> None:
    """Raise ContractViolationError unless ``design`` lies inside the
    machine's inclusive bounds."""
    b = base.bounds
    ok = (
        b.length[0] <= design.length <= b.length[1]
        and b.turns[0] <= design.turns <= b.turns[1]
        and b.tooth_tip[0] <= design.tooth_tip <= b.tooth_tip[1]
    )
    if not ok:
        raise ContractViolationError(
            f"design {design!r} outside bounds of machine {base.id}"
        )


def normalize(design: DesignPoint, base: "BaseMachine") -> tuple[float, float, float]:
    """Per-unit triple (lam, nu, eta) of a design against its base machine."""
    check_bounds(design, base)
    d0 = base.base_design
    return (design.length / d0.length, design.turns / d0.turns, design.tooth_tip / d0.tooth_tip)


def evaluate(design: DesignPoint, base: "BaseMachine") -> Performance:
    """Evaluate the five performance values at one design point.

    Pure and deterministic: equal inputs give bit-identical outputs.
    """
    lam, nu, eta = normalize(design, base)
    b_gap, t_break, i_start, d_temp = _perf_values(lam, nu, eta)
    return Performance(b_gap, t_break, i_start, d_temp, design.tooth_tip)


# --- lattice helpers -------------------------------------------------------
#
# Every action moves one variable by exactly one step, so the reachable
# designs form a finite grid.  Axis values are always computed as
# lo + index*step; keeping a single formula makes equal lattice points
# bit-identical no matter which code path produced them.


def lattice_shape(base: "BaseMachine") -> tuple[int, int, int]:
    """(n_length, n_turns, n_tooth) point counts along each axis."""
    b, s = base.bounds, base.step_sizes
    n_l = int(round((b.length[1] - b.length[0]) / s.length)) + 1
    n_n = int(round((b.turns[1] - b.turns[0]) / s.turns)) + 1
    n_h = int(round((b.tooth_tip[1] - b.tooth_tip[0]) / s.tooth_tip)) + 1
    return (n_l, n_n, n_h)


def design_at(base: "BaseMachine", i: int, j: int, k: int) -> DesignPoint:
    """Design point at lattice indices (i, j, k)."""
    n_l, n_n, n_h = lattice_shape(base)
    if not (0 <= i < n_l and 0 <= j < n_n and 0 <= k < n_h):
        raise ContractViolationError(f"lattice index ({i}, {j}, {k}) out of range")
    b, s = base.bounds, base.step_sizes
    return DesignPoint(
        length=b.length[0] + i * s.length,
        turns=b.turns[0] + j * s.turns,
        tooth_tip=b.tooth_tip[0] + k * s.tooth_tip,
    )


def lattice_index(base: "BaseMachine", design: DesignPoint) -> tuple[int, int, int]:
    """Indices of a design point that lies on the lattice.

    Raises ContractViolationError if the point is off-lattice or out of
    bounds.
    """
    check_bounds(design, base)
    b, s = base.bounds, base.step_sizes
    i = int(round((design.length - b.length[0]) / s.length))
    j = int(round((design.turns - b.turns[0]) / s.turns))
    k = int(round((design.tooth_tip - b.tooth_tip[0]) / s.tooth_tip))
    if design_at(base, i, j, k) != design:
        raise ContractViolationError(f"design {design!r} is not a lattice point")
    return (i, j, k)


@dataclass(frozen=True)
class LatticeGrid:
    """Performance values over the whole design lattice of one machine.

    Arrays are indexed [i_length, j_turns, k_tooth] and marked read-only;
    they are computed with exactly the same expressions as the scalar
    path, so grid[idx] equals evaluate(design_at(idx)) bitwise.
    """

    lengths: np.ndarray    # (n_l,)
    turns: np.ndarray      # (n_n,)
    tooth_tips: np.ndarray  # (n_h,)
    b_gap: np.ndarray
    t_break: np.ndarray
    i_start: np.ndarray
    d_temp: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.b_gap.shape

    def perf_arrays(self) -> tuple[np.ndarray, ...]:
        """The five performance arrays in flag order, tooth-tip broadcast."""
        tooth = np.broadcast_to(self.tooth_tips[None, None, :], self.shape)
        return (self.b_gap, self.t_break, self.i_start, self.d_temp, tooth)


@lru_cache(maxsize=None)
def evaluate_grid(base: "BaseMachine") -> LatticeGrid:
    """Vectorized evaluate() over every lattice point (cached per machine)."""
    n_l, n_n, n_h = lattice_shape(base)
    b, s = base.bounds, base.step_sizes
    lengths = b.length[0] + np.arange(n_l) * s.length
    turns = b.turns[0] + np.arange(n_n) * s.turns
    tooths = b.tooth_tip[0] + np.arange(n_h) * s.tooth_tip

    d0 = base.base_design
    lam = (lengths / d0.length)[:, None, None]
    nu = (turns / d0.turns)[None, :, None]
    eta = (tooths / d0.tooth_tip)[None, None, :]
    b_gap, t_break, i_start, d_temp = _perf_values(lam, nu, eta)
    b_gap, t_break, i_start = np.broadcast_arrays(b_gap, t_break, i_start)
    d_temp = np.broadcast_to(d_temp, b_gap.shape)

    arrays = [lengths, turns, tooths]
    full = [np.ascontiguousarray(a) for a in (b_gap, t_break, i_start, d_temp)]
    for a in arrays + full:
        a.setflags(write=False)
    return LatticeGrid(lengths, turns, tooths, *full)
