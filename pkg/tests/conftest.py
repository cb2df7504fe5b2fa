import numpy as np

from hybrid_infill import fea_quad as fq
from hybrid_infill.fields import DesignMask, GridSpec
from hybrid_infill.lowfi.optimize import LowFiProblem


def small_cantilever(n=6, **kw) -> LowFiProblem:
    """Left edge clamped, downward unit load at the bottom-right node."""
    g = GridSpec(n, n)
    left = fq.node_index(g, 0, np.arange(n + 1))
    fixed = np.sort(np.concatenate([2 * left, 2 * left + 1]))
    f = np.zeros(fq.n_dofs(g))
    f[2 * fq.node_index(g, n, 0) + 1] = -1.0
    kw.setdefault("R_s", 1.5)
    mask = kw.pop("mask", DesignMask.all_design(g))
    return LowFiProblem(g, mask, fixed, f, **kw)


def fd_gradient_errors(problem, rho, xi, theta, beta, c, elements, h=1e-6):
    """Relative errors of adjoint vs central differences at the given element indices."""
    from hybrid_infill.lowfi.optimize import adjoint_gradients, evaluate

    ev = evaluate(problem, rho, xi, theta, beta)
    gr = adjoint_gradients(problem, ev, c)

    def obj(r, x):
        return c * evaluate(problem, r, x, theta, beta).sigma_pn

    errs = []
    nx = problem.grid.nx
    for k in elements:
        j, i = divmod(int(k), nx)
        for name, grad in (("rho", gr.d_rho), ("xi", gr.d_xi)):
            plus, minus = {"rho": rho.copy(), "xi": xi.copy()}, {"rho": rho.copy(), "xi": xi.copy()}
            plus[name][j, i] += h
            minus[name][j, i] -= h
            fd = (obj(plus["rho"], plus["xi"]) - obj(minus["rho"], minus["xi"])) / (2 * h)
            errs.append(abs(fd - grad[j, i]) / max(abs(fd), 1e-12))
    return np.array(errs)


# ---------------------------------------------------------------- end-to-end smoke runs

import time
from dataclasses import dataclass

import pytest

SMOKE_GENERATIONS = 10


@dataclass
class SmokeRun:
    cfg: object
    final: object
    seconds: float


@pytest.fixture(scope="session")
def smoke_runs(tmp_path_factory):
    """Hybrid and single-material smoke runs, computed once per session on demand."""
    from hybrid_infill.cases import smoke_case
    from hybrid_infill.config import RunConfig
    from hybrid_infill.pipeline import run_evolutionary_loop

    done = {}

    def get(hybrid: bool = True) -> SmokeRun:
        if hybrid not in done:
            out = tmp_path_factory.mktemp("smoke") / ("hybrid" if hybrid else "baseline")
            cfg = RunConfig(smoke_case(), seed=0, out=out, max_generations=SMOKE_GENERATIONS, hybrid=hybrid)
            t0 = time.perf_counter()
            final = run_evolutionary_loop(cfg)
            done[hybrid] = SmokeRun(cfg, final, time.perf_counter() - t0)
        return done[hybrid]

    return get
