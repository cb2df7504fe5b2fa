"""Low-fidelity hybrid solid/porous stress minimization.

Design variables are the raw base-material field ``rho`` and the solid
fraction field ``xi``.  Both are filtered and projected before entering the
extended-SIMP stiffness; the infill orientation follows the principal stress
directions and is never a design variable.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .. import fea_quad as fq
from .. import gridio
from ..fields import (
    DesignMask,
    GridSpec,
    OrientationField,
    ScalarField,
    encode_angles,
    project_array,
    project_derivative,
    smooth_array,
    smooth_array_adjoint,
)
from .material import (
    MaterialParams,
    C_aniso_global,
    stiffness_factor_derivatives,
    stiffness_factors,
    stress_state,
    tsai_hill_index,
    tsai_hill_index_grad,
    von_mises_index,
    von_mises_index_grad,
)
from .mma import MMA

log = logging.getLogger(__name__)


class LowFiError(RuntimeError):
    """Failure inside a low-fidelity run, tagged with the iteration index."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"low-fidelity iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True)
class LowFiProblem:
    grid: GridSpec
    mask: DesignMask
    fixed_dofs: np.ndarray
    loads: np.ndarray
    mat: MaterialParams = MaterialParams()
    V_b: float = 0.5
    V_s: float = 0.5
    p_rho: float = 3.0
    p_xi: float = 3.0
    epsilon: float = 1e-9
    P: float = 12.0
    alpha: float = 0.5
    R_s: float = 3.0
    beta_s: float = 32.0
    delta_s: float = 0.5
    max_iters: int = 300
    beta_start: float = 2.0
    beta_interval: int = 40
    move: float = 0.1
    tol: float = 1e-3
    freeze_xi: bool = False
    # step halvings allowed when an MMA step would raise the objective
    max_backtracks: int = 8
    # criteria see relax(rho_bar) * C_mix * strain with relax = rho_bar^q_relax
    q_relax: float = 0.5

    def __post_init__(self):
        if not 0 < self.V_b <= 1:
            raise ValueError("V_b must lie in (0, 1]")
        if not 0 < self.V_s <= 1:
            raise ValueError("V_s must lie in (0, 1]")
        if self.P < 1:
            raise ValueError("P-norm exponent must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.epsilon <= 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3]")
        if self.mask.grid != self.grid:
            raise ValueError("mask grid differs from problem grid")
        if not 0 < self.q_relax <= self.p_rho:
            raise ValueError("q_relax must lie in (0, p_rho]")

    def beta_at(self, iteration: int) -> float:
        """Continuation: double from ``beta_start`` every ``beta_interval`` iterations."""
        if self.beta_start >= self.beta_s or self.beta_interval <= 0:
            return self.beta_s
        return min(self.beta_s, self.beta_start * 2.0 ** (iteration // self.beta_interval))


@dataclass
class LowFiState:
    rho: ScalarField
    xi: ScalarField
    theta: OrientationField
    c: float = 1.0
    iter: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("rho", "xi"):
            v = getattr(self, name).values
            if v.min() < 0 or v.max() > 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.c > 0:
            raise ValueError("correction parameter must be positive")


@dataclass
class Evaluation:
    """Everything one forward analysis produces, reused by the adjoint."""

    beta: float
    rho_bar: np.ndarray  # (ny, nx)
    xi_bar: np.ndarray
    drho: np.ndarray  # d rho_bar / d rho_tilde, zero on passive elements
    dxi: np.ndarray
    theta_stiff: np.ndarray
    theta: np.ndarray  # principal directions of this solve
    C: np.ndarray  # (N, 3, 3)
    mix: np.ndarray  # C / a
    relax: np.ndarray  # (N,) stress relaxation factor
    C_an: np.ndarray
    K: object
    u: np.ndarray
    strain: np.ndarray  # (N, 3) element-center strains
    stress: np.ndarray  # (N, 3) relaxed stress seen by the criteria
    states: np.ndarray  # (N,)
    sigma_pn: float
    base_fraction: float
    solid_fraction: float


# --------------------------------------------------------------------------
# scalar measures

def pnorm_stress(states, P: float) -> float:
    """Overflow-safe ``(sum s^P)^(1/P)``."""
    s = np.asarray(states, float).ravel()
    if np.any(s < 0):
        raise ValueError("stress states must be non-negative")
    m = s.max(initial=0.0)
    if m == 0.0:
        return 0.0
    return float(m * np.sum((s / m) ** P) ** (1.0 / P))


def update_correction(c_prev: float, max_state: float, sigma_pn: float, alpha: float) -> float:
    if not sigma_pn > 0:
        raise ValueError("P-norm stress is zero; the stress field is degenerate")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return alpha * (max_state / sigma_pn) + (1.0 - alpha) * c_prev


def volume_fractions(rho_bar, xi_bar, V_b: float) -> tuple[float, float]:
    """(base fraction, solid-of-base fraction normalized by ``V_b``)."""
    r = np.asarray(rho_bar, float)
    x = np.asarray(xi_bar, float)
    if r.shape != x.shape:
        raise ValueError("fields must share a grid")
    n = r.size
    return float(r.sum() / n), float((x * r).sum() / (n * V_b))


# --------------------------------------------------------------------------
# forward analysis and adjoint

def project_design(problem: LowFiProblem, raw: np.ndarray, beta: float, kind: str):
    tilde = smooth_array(raw, problem.R_s)
    bar = project_array(tilde, beta, problem.delta_s)
    dbar = project_derivative(tilde, beta, problem.delta_s)
    m = problem.mask
    if kind == "rho":
        bar = np.where(m.void, 0.0, np.where(m.solid, 1.0, bar))
    else:
        bar = np.where(m.solid, 1.0, np.where(m.void, 0.0, bar))
    dbar = np.where(m.design, dbar, 0.0)
    return np.clip(bar, 0.0, 1.0), dbar


def relaxation(rho_bar: np.ndarray, q: float, derivative: bool = False) -> np.ndarray:
    """``rho_bar^q`` (or its derivative, zero where ``rho_bar`` is zero).

    With ``q`` below the stiffness penalty, near-void elements that still
    carry load report large stresses, so load paths cannot run through void.
    """
    r = np.asarray(rho_bar, float)
    if not derivative:
        return r ** q
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = q * r[pos] ** (q - 1.0)
    return out


def evaluate(problem: LowFiProblem, rho: np.ndarray, xi: np.ndarray, theta_stiff: np.ndarray,
             beta: Optional[float] = None) -> Evaluation:
    beta = problem.beta_s if beta is None else beta
    g = problem.grid
    rho_bar, drho = project_design(problem, rho, beta, "rho")
    if problem.freeze_xi:
        xi_bar = np.where(problem.mask.solid, 1.0, 0.0)
        dxi = np.zeros(g.shape)
    else:
        xi_bar, dxi = project_design(problem, xi, beta, "xi")
    a, b_iso, b_an = stiffness_factors(rho_bar.ravel(), xi_bar.ravel(), problem.p_rho, problem.p_xi, problem.epsilon)
    C_an = C_aniso_global(problem.mat, np.asarray(theta_stiff, float).ravel())
    mix = b_iso[:, None, None] * problem.mat.C_iso() + b_an[:, None, None] * C_an
    C = a[:, None, None] * mix
    model = fq.QuadModel(g, problem.fixed_dofs, problem.loads, C)
    K = fq.assemble(g, C)
    u = fq.assemble_and_solve(model, K)
    strain = u[fq.element_dofs(g)] @ fq.strain_matrix(g.h).T
    relax = relaxation(rho_bar.ravel(), problem.q_relax)
    stress = relax[:, None] * np.einsum("eab,eb->ea", mix, strain)
    theta = fq.principal_angles(stress[:, 0], stress[:, 1], stress[:, 2])
    states = stress_state(stress, theta, xi_bar.ravel(), problem.mat, problem.p_xi)
    base, solid = volume_fractions(rho_bar, xi_bar, problem.V_b)
    return Evaluation(
        beta=beta, rho_bar=rho_bar, xi_bar=xi_bar, drho=drho, dxi=dxi,
        theta_stiff=np.asarray(theta_stiff, float).reshape(g.shape), theta=theta.reshape(g.shape),
        C=C, mix=mix, relax=relax, C_an=C_an, K=K, u=u, strain=strain, stress=stress, states=states,
        sigma_pn=pnorm_stress(states, problem.P), base_fraction=base, solid_fraction=solid,
    )


@dataclass
class Gradients:
    objective: float
    d_rho: np.ndarray  # d objective / d raw rho, (ny, nx)
    d_xi: np.ndarray
    constraints: np.ndarray  # normalized: [base/V_b - 1, solid/V_s - 1]
    dc_rho: np.ndarray  # (2, ny, nx)
    dc_xi: np.ndarray


def adjoint_gradients(problem: LowFiProblem, ev: Evaluation, c: float = 1.0) -> Gradients:
    """Gradients of ``c * sigma_PN`` and both volume constraints w.r.t. raw fields.

    The orientation used in the stiffness and in the Tsai-Hill rotation, and
    the correction ``c``, are treated as constants.
    """
    g = problem.grid
    N = g.n_elements
    P = problem.P
    xi_b = ev.xi_bar.ravel()
    rho_b = ev.rho_bar.ravel()

    if ev.sigma_pn > 0:
        df_ds = c * (ev.states / ev.sigma_pn) ** (P - 1.0)
    else:
        df_ds = np.zeros(N)
    w_vm = xi_b ** problem.p_xi
    w_th = (1.0 - xi_b) ** problem.p_xi
    theta = ev.theta.ravel()
    ds_dsig = (w_vm[:, None] * von_mises_index_grad(ev.stress, problem.mat)
               + w_th[:, None] * tsai_hill_index_grad(ev.stress, theta, problem.mat))
    gsig = df_ds[:, None] * ds_dsig  # d f / d sigma_e

    # d f / d u through sigma_e = r_e M_e B0 u_e
    B0 = fq.strain_matrix(g.h)
    edofs = fq.element_dofs(g)
    fe = ev.relax[:, None] * np.einsum("eab,ea->eb", ev.mix, gsig) @ B0  # (N, 8)
    dfdu = np.zeros(fq.n_dofs(g))
    np.add.at(dfdu, edofs, fe)
    free = np.setdiff1d(np.arange(dfdu.size), problem.fixed_dofs)
    lam = np.zeros_like(dfdu)
    if np.any(dfdu[free]):
        lam[free] = fq.solve_linear(ev.K, dfdu[free], free,
                                    direct=g.n_elements <= fq.DIRECT_SOLVE_LIMIT)

    # explicit pairing g_a eps_b and adjoint pairing lambda^T K^{ab} u, both per matrix entry
    Kb = fq.stiffness_basis(g.h)
    W = np.einsum("ei,abij,ej->eab", lam[edofs], Kb, ev.u[edofs], optimize=True)
    E = gsig[:, :, None] * ev.strain[:, None, :]

    da, db_iso, db_an = stiffness_factor_derivatives(rho_b, xi_b, problem.p_rho, problem.p_xi, problem.epsilon)
    a, _, _ = stiffness_factors(rho_b, xi_b, problem.p_rho, problem.p_xi, problem.epsilon)
    dr = relaxation(rho_b, problem.q_relax, derivative=True)
    d_rhobar = dr * np.einsum("eab,eab->e", ev.mix, E) - da * np.einsum("eab,eab->e", ev.mix, W)
    dM_dxi = db_iso[:, None, None] * problem.mat.C_iso() + db_an[:, None, None] * ev.C_an
    G = ev.relax[:, None, None] * E - a[:, None, None] * W
    vm = von_mises_index(ev.stress, problem.mat)
    th = tsai_hill_index(ev.stress, theta, problem.mat)
    p = problem.p_xi
    ds_dxi = p * xi_b ** (p - 1) * vm - p * (1.0 - xi_b) ** (p - 1) * th
    d_xibar = np.einsum("eab,eab->e", dM_dxi, G) + df_ds * ds_dxi

    def to_raw(d_bar, dproj):
        return smooth_array_adjoint(d_bar.reshape(g.shape) * dproj, problem.R_s)

    base, solid = ev.base_fraction, ev.solid_fraction
    cons = np.array([base / problem.V_b - 1.0, solid / problem.V_s - 1.0])
    s1 = 1.0 / (N * problem.V_b)
    s2 = 1.0 / (N * problem.V_b * problem.V_s)
    dc_rho = np.stack([to_raw(np.full(N, s1), ev.drho), to_raw(s2 * xi_b, ev.drho)])
    dc_xi = np.stack([np.zeros(g.shape), to_raw(s2 * rho_b, ev.dxi)])
    return Gradients(
        objective=c * ev.sigma_pn,
        d_rho=to_raw(d_rhobar, ev.drho),
        d_xi=to_raw(d_xibar, ev.dxi),
        constraints=cons, dc_rho=dc_rho, dc_xi=dc_xi,
    )


# --------------------------------------------------------------------------
# optimization loop

def initial_state(problem: LowFiProblem) -> LowFiState:
    m = problem.mask
    rho = np.where(m.design, problem.V_b, np.where(m.solid, 1.0, 0.0))
    xi0 = 0.0 if problem.freeze_xi else problem.V_s
    xi = np.where(m.design, xi0, np.where(m.solid, 1.0, 0.0))
    g = problem.grid
    return LowFiState(ScalarField(g, rho), ScalarField(g, xi),
                      OrientationField(g, np.zeros(g.shape), np.full(g.shape, 0.5)))


def run_lowfi(problem: LowFiProblem, V_b_target: Optional[float] = None,
              state: Optional[LowFiState] = None, checkpoint: Optional[Path] = None,
              checkpoint_every: int = 25) -> LowFiState:
    """Run the optimizer to convergence (or ``max_iters``)."""
    if V_b_target is not None:
        problem = replace(problem, V_b=float(V_b_target))
    g = problem.grid
    design = problem.mask.design
    n_d = int(design.sum())
    state = initial_state(problem) if state is None else state
    rho = np.array(state.rho.values)
    xi = np.array(state.xi.values)
    theta = np.array(state.theta.angles)
    c = state.c
    history = list(state.history)
    start = state.iter
    if start == 0:
        # orientation seed from one analysis of the initial design
        try:
            theta = evaluate(problem, rho, xi, theta, problem.beta_at(0)).theta
        except fq.SingularSystemError as exc:
            raise LowFiError(0, exc) from exc

    nvar = n_d if problem.freeze_xi else 2 * n_d
    mma = MMA(nvar, 2, 0.0, 1.0, move=problem.move)
    scale = None

    def analyse(r, x_, th, it_):
        try:
            return evaluate(problem, r, x_, th, problem.beta_at(it_))
        except fq.SingularSystemError as exc:
            raise LowFiError(it_, exc) from exc

    def pack(r, x_):
        return r[design] if problem.freeze_xi else np.concatenate([r[design], x_[design]])

    def unpack(v):
        r, x_ = rho.copy(), xi.copy()
        r[design] = np.clip(v[:n_d], 0.0, 1.0)
        if not problem.freeze_xi:
            x_[design] = np.clip(v[n_d:], 0.0, 1.0)
        return r, x_

    # states store the correction before it sees their design, so resuming recomputes it
    c_prev = c
    ev = analyse(rho, xi, theta, start)
    if start > 0:
        c = update_correction(c_prev, float(ev.states.max()), ev.sigma_pn, problem.alpha)
    it = start
    for it in range(start, problem.max_iters):
        beta = problem.beta_at(it)
        grads = adjoint_gradients(problem, ev, c)
        history.append(dict(iter=it, sigma_pn=ev.sigma_pn, c=c, base_vf=ev.base_fraction,
                            solid_vf=ev.solid_fraction, objective=grads.objective,
                            max_state=float(ev.states.max()), beta=beta))
        theta = ev.theta
        if scale is None:
            scale = 1.0 / max(grads.objective, 1e-300)

        x = pack(rho, xi)
        df0 = grads.d_rho[design] if problem.freeze_xi else np.concatenate([grads.d_rho[design], grads.d_xi[design]])
        if problem.freeze_xi:
            dfdx = grads.dc_rho[:, design]
        else:
            dfdx = np.concatenate([grads.dc_rho[:, design], grads.dc_xi[:, design]], axis=1)
        xnew = mma.update(x, grads.objective * scale, df0 * scale, grads.constraints, dfdx)

        # backtrack along the MMA step while the next recorded objective would rise
        reference = grads.objective
        if problem.beta_at(it + 1) != beta:
            ev0 = analyse(rho, xi, theta, it + 1)
            reference = update_correction(c, float(ev0.states.max()), ev0.sigma_pn, problem.alpha) * ev0.sigma_pn
        step = 1.0
        for attempt in range(problem.max_backtracks + 1):
            trial = x + step * (xnew - x)
            r_t, x_t = unpack(trial)
            ev_t = analyse(r_t, x_t, theta, it + 1)
            c_t = update_correction(c, float(ev_t.states.max()), ev_t.sigma_pn, problem.alpha)
            if c_t * ev_t.sigma_pn <= reference or attempt == problem.max_backtracks:
                break
            step *= 0.5
        change = float(np.max(np.abs(trial - x))) if x.size else 0.0
        rho, xi, ev, c_prev, c = r_t, x_t, ev_t, c, c_t
        history[-1]["change"] = change
        history[-1]["step"] = step
        if checkpoint is not None and (it + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint, LowFiState(ScalarField(g, rho), ScalarField(g, xi),
                                                   OrientationField(g, theta), c_prev, it + 1, history))
        feasible = np.all(grads.constraints <= problem.tol / max(problem.V_b, problem.V_s))
        if beta >= problem.beta_s and change < problem.tol and feasible:
            log.info("converged at iteration %d", it)
            break
    final = LowFiState(ScalarField(g, rho), ScalarField(g, xi),
                       OrientationField(g, theta, encode_angles(theta)), c_prev, it + 1, history)
    return final


def final_fields(problem: LowFiProblem, state: LowFiState):
    """Projected fields and orientation of a finished state (same path as the loop)."""
    ev = evaluate(problem, state.rho.values, state.xi.values, state.theta.angles, problem.beta_s)
    return ev


# --------------------------------------------------------------------------
# checkpoint and history files

def save_checkpoint(path, state: LowFiState) -> None:
    """Grid container blocks: rho, xi, theta, then a scalar block [c, iter, 0...]."""
    g = state.rho.grid
    scalars = np.zeros(g.n_elements)
    scalars[0] = state.c
    if scalars.size > 1:
        scalars[1] = state.iter
    gridio.write_binary(path, g, state.rho.values, state.xi.values, state.theta.angles, scalars)
    if state.history:
        write_history(Path(path).with_suffix(".csv"), state.history)


def load_checkpoint(path) -> LowFiState:
    g, blocks = gridio.read_binary(path)
    if len(blocks) != 4:
        raise ValueError(f"{path}: expected 4 blocks, found {len(blocks)}")
    scal = blocks[3].ravel()
    it = int(scal[1]) if scal.size > 1 else 0
    hist_path = Path(path).with_suffix(".csv")
    history = read_history(hist_path) if hist_path.exists() else []
    return LowFiState(ScalarField(g, blocks[0]), ScalarField(g, blocks[1]),
                      OrientationField(g, blocks[2], encode_angles(blocks[2])), float(scal[0]), it, history)


HISTORY_COLUMNS = ("iter", "sigma_pn", "c", "base_vf", "solid_vf")


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["iter"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]])


def read_history(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [dict(iter=int(r["iter"]), **{k: float(r[k]) for k in HISTORY_COLUMNS[1:]}) for r in rows]
