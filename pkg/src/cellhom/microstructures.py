"""Canonical microstructure fixtures and random-cell generators.

The four named fixtures (homogeneous, laminate, cubic inclusion, seeded
random two-phase) are frozen here, seeds included, so every verification
run and test exercises identical cells.
"""

from __future__ import annotations

import numpy as np

from .cell import Lattice, VoxelCell
from .mandel import iso_tensor

RANDOM_FIXTURE_SEED = 7


def homogeneous_cell(dims=(4, 4, 4), stiffness=None) -> VoxelCell:
    """Single-phase cell; defaults to the unit isotropic material."""
    c = iso_tensor(1.0, 1.0) if stiffness is None else stiffness
    return VoxelCell(dims, np.zeros(dims, dtype=np.int64), [c])


def laminate_cell(dims=(8, 4, 4), axis=0,
                  phase_a=(0.0, 1.0), phase_b=(0.0, 2.0)) -> VoxelCell:
    """50/50 two-phase laminate with interfaces normal to ``axis``.

    Layer boundaries coincide with voxel faces, so with the default
    zero-Lame-lambda phases the exact solution is piecewise linear and the
    Q1 discretization reproduces it exactly.
    """
    if dims[axis] % 2:
        raise ValueError("laminate axis must have an even voxel count")
    phase = np.zeros(dims, dtype=np.int64)
    half = dims[axis] // 2
    sel = [slice(None)] * 3
    sel[axis] = slice(half, None)
    phase[tuple(sel)] = 1
    return VoxelCell(dims, phase,
                     [iso_tensor(*phase_a), iso_tensor(*phase_b)])


def cubic_inclusion_cell(dims=(8, 8, 8), core=4,
                         matrix=(1.0, 1.0), inclusion=(3.0, 2.0)) -> VoxelCell:
    """Centered cubic inclusion of ``core``^3 voxels in a matrix phase."""
    phase = np.zeros(dims, dtype=np.int64)
    lo = [(n - core) // 2 for n in dims]
    phase[lo[0]:lo[0] + core, lo[1]:lo[1] + core, lo[2]:lo[2] + core] = 1
    return VoxelCell(dims, phase,
                     [iso_tensor(*matrix), iso_tensor(*inclusion)])


def random_two_phase_cell(dims=(4, 4, 4), seed=RANDOM_FIXTURE_SEED,
                          phase_a=(1.0, 1.0), phase_b=(4.0, 4.0),
                          fraction=0.5) -> VoxelCell:
    """Seeded random two-phase voxel pattern."""
    rng = np.random.default_rng(seed)
    phase = (rng.random(dims) < fraction).astype(np.int64)
    return VoxelCell(dims, phase,
                     [iso_tensor(*phase_a), iso_tensor(*phase_b)])


def random_spd_tensor(rng, scale: float = 1.0, conditioning: float = 10.0) -> np.ndarray:
    """Random SPD 6x6 Mandel matrix with bounded condition number."""
    m = rng.standard_normal((6, 6))
    q, _ = np.linalg.qr(m)
    eig = scale * np.exp(rng.uniform(0.0, np.log(conditioning), 6))
    return q @ np.diag(eig) @ q.T


def random_cell(dims=(4, 4, 4), seed=0, lattice: Lattice | None = None) -> VoxelCell:
    """Random two-phase cell with random SPD phase tensors."""
    rng = np.random.default_rng(seed)
    phases = [random_spd_tensor(rng), random_spd_tensor(rng)]
    phase = rng.integers(0, 2, size=dims).astype(np.int64)
    return VoxelCell(dims, phase, phases,
                     lattice if lattice is not None else Lattice.unit_cube())


def fixture(name: str) -> VoxelCell:
    """Look up one of the four named fixtures: a, b, c or d."""
    table = {
        "a": homogeneous_cell,
        "b": laminate_cell,
        "c": cubic_inclusion_cell,
        "d": random_two_phase_cell,
    }
    if name not in table:
        raise KeyError(f"unknown fixture {name!r}; expected one of a, b, c, d")
    return table[name]()
