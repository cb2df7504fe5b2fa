"""Benchmark case definitions (L-bracket and symmetric tension beam).

Every case carries the same boundary conditions twice: as node/dof sets for
the coarse quad grid and as geometric regions (mm) for the triangle mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import fea_quad as fq
from .fields import DESIGN, PASSIVE_SOLID, PASSIVE_VOID, DesignMask, GridSpec
from .lowfi.material import MaterialParams
from .lowfi.optimize import LowFiProblem


@dataclass(frozen=True)
class WaveConfig:
    d: float = 8.0
    N_dilate: int = 4
    lam: int = 9
    R_f: float = 8.0
    eta_t: float = 0.5
    t_shell: int = 4
    dp_tol: float = 1e-5
    penalty: float = 10.0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("period factor d must be >= 2")
        if self.N_dilate < 1:
            raise ValueError("N_dilate must be >= 1")
        if not 0 < self.eta_t < 1:
            raise ValueError("eta_t must lie in (0, 1)")
        if self.R_f < 0:
            raise ValueError("R_f must be >= 0")
        if self.lam < 1:
            raise ValueError("refinement factor must be >= 1")

    @property
    def P_d(self) -> float:
        return np.pi / self.d


@dataclass(frozen=True)
class Support:
    """Axis-aligned box (mm) whose boundary nodes get the listed dofs fixed."""

    box: tuple  # (xmin, ymin, xmax, ymax)
    dofs: tuple = (0, 1)


@dataclass(frozen=True)
class PointLoad:
    point: tuple  # (x, y) in mm
    force: tuple  # (Fx, Fy) in N


@dataclass(frozen=True)
class CaseDefinition:
    name: str
    grid: GridSpec
    mask: DesignMask
    supports: tuple
    loads: tuple
    mat: MaterialParams = MaterialParams()
    wave: WaveConfig = WaveConfig()
    sizing: str = "fine"
    V_b_range: tuple = (0.35, 0.70)
    V_s: float = 0.5
    m: int = 100
    # low-fidelity knobs that are not material or wave parameters
    lowfi: dict = field(default_factory=dict)
    # high-fidelity load spreading and singular-point exclusion, mm
    load_radius: float = 1.0
    exclusion_radius: float = 2.0

    @property
    def lam(self) -> int:
        return self.wave.lam

    @property
    def domain_area(self) -> float:
        return self.grid.width * self.grid.height

    @property
    def sizing_scale(self) -> float:
        """Mesh-size scale relative to the 60 mm L-bracket reference domain."""
        return max(self.grid.width, self.grid.height) / 60.0

    # ---------------------------------------------------------------- coarse
    def fixed_dofs(self) -> np.ndarray:
        g = self.grid
        i, j = np.meshgrid(np.arange(g.nx + 1), np.arange(g.ny + 1))
        x, y = i.ravel() * g.h, j.ravel() * g.h
        nodes = j.ravel() * (g.nx + 1) + i.ravel()
        tol = 1e-9 * max(g.width, g.height)
        fixed = []
        for s in self.supports:
            x0, y0, x1, y1 = s.box
            inside = (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
            for d in s.dofs:
                fixed.append(2 * nodes[inside] + d)
        return np.unique(np.concatenate(fixed))

    def load_vector(self) -> np.ndarray:
        g = self.grid
        f = np.zeros(fq.n_dofs(g))
        for ld in self.loads:
            i = int(round(ld.point[0] / g.h))
            j = int(round(ld.point[1] / g.h))
            n = fq.node_index(g, i, j)
            f[2 * n] += ld.force[0]
            f[2 * n + 1] += ld.force[1]
        return f

    def lowfi_problem(self, V_b: Optional[float] = None, **overrides) -> LowFiProblem:
        kw = dict(V_b=self.V_b_range[0] if V_b is None else V_b, V_s=self.V_s, mat=self.mat)
        kw.update(self.lowfi)
        kw.update(overrides)
        return LowFiProblem(self.grid, self.mask, self.fixed_dofs(), self.load_vector(), **kw)

    def with_(self, **kw) -> "CaseDefinition":
        return replace(self, **kw)


def _corner_patch(flags: np.ndarray, i_range, j_range):
    flags[j_range[0]:j_range[1], i_range[0]:i_range[1]] = PASSIVE_SOLID


def l_bracket(n: int = 60, h: float = 1.0, arm_ratio: float = 0.4, patch: int = 2, **kw) -> CaseDefinition:
    """Square domain with the top-right block void; top of the vertical arm clamped,
    downward unit force at the top-right corner of the horizontal arm."""
    arm = int(round(arm_ratio * n))
    grid = GridSpec(n, n, h)
    flags = np.full(grid.shape, DESIGN, dtype=np.int8)
    flags[arm:, arm:] = PASSIVE_VOID
    _corner_patch(flags, (n - patch, n), (arm - patch, arm))
    supports = (Support((0.0, n * h, arm * h, n * h), (0, 1)),)
    loads = (PointLoad((n * h, arm * h), (0.0, -1.0)),)
    defaults = dict(name=f"l-bracket-{n}", grid=grid, mask=DesignMask(grid, flags),
                    supports=supports, loads=loads)
    defaults.update(kw)
    return CaseDefinition(**defaults)


def tension_beam(nx: int = 52, ny: int = 80, h: float = 1.0, patch: int = 2, **kw) -> CaseDefinition:
    """Half of a symmetric tension beam: left edge on rollers in x, one y-pin at the
    top-left node, outward unit force at the bottom-right corner."""
    grid = GridSpec(nx, ny, h)
    flags = np.full(grid.shape, DESIGN, dtype=np.int8)
    _corner_patch(flags, (nx - patch, nx), (0, patch))
    supports = (Support((0.0, 0.0, 0.0, ny * h), (0,)), Support((0.0, ny * h, 0.0, ny * h), (1,)))
    loads = (PointLoad((nx * h, 0.0), (1.0, 0.0)),)
    wave = WaveConfig(d=10.0, N_dilate=6, lam=16)
    defaults = dict(name=f"tension-beam-{nx}x{ny}", grid=grid, mask=DesignMask(grid, flags),
                    supports=supports, loads=loads, wave=wave, V_b_range=(0.3, 0.8), m=160)
    defaults.update(kw)
    return CaseDefinition(**defaults)


def smoke_case(**kw) -> CaseDefinition:
    """30x30 L-bracket with a 4x refinement, used for end-to-end smoke runs."""
    defaults = dict(wave=WaveConfig(lam=4), m=16)
    defaults.update(kw)
    case = l_bracket(30, **defaults)
    return replace(case, name="smoke-l-bracket-30")


CASES = {
    "l-bracket": l_bracket,
    "tension-beam": tension_beam,
    "smoke": smoke_case,
}


def get_case(name: str, **kw) -> CaseDefinition:
    try:
        return CASES[name](**kw)
    except KeyError:
        raise KeyError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None
