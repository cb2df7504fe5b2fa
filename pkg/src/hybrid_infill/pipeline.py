"""Orchestration: low-fidelity batch, the evolutionary loop, checkpoints and reports.

Run directory layout::

    config.yaml            effective configuration
    lowfi/run_<k>.npz      one finished low-fidelity run (or run_<k>.failed)
    initial.npz            the initial population (batch output)
    evaluations.csv        every high-fidelity result, keyed by candidate id
    geometry/<id>.dxf      realized geometry of every meshed candidate
    ledger.csv             generation, hv, rank1_count, population_ids
    rank1/gen_<g>.csv      Rank-1 archive per generation
    checkpoints/gen_<g>.npz  selected population per generation
    state.json             last completed generation, reference point, hv history
    reports/               emit_reports output
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import RunConfig, dump_config, load_config
from .dehomog import dehomogenize
from .dehomog.contours import ContourSet
from .dehomog.driver import apply_mask
from .dehomog.export import export_geometry, read_dxf, svg_text
from .evo import (
    Candidate,
    HvConfig,
    Population,
    PopulationExtinct,
    append_ledger,
    check_convergence,
    load_population,
    population_hypervolume,
    read_ledger,
    save_population,
    select_next_population,
)
from .evo.selection import ledger_row, partition_anomalies, rank_population, write_rank1_archive
from .fields import encode_angles
from .hifi.evaluate import HiFiResult, anomaly, append_results, evaluate_candidate
from .lowfi.optimize import LowFiError, final_fields, run_lowfi
from .vae import generate_offspring, train_vae
from .vae.sample import channels_to_input

log = logging.getLogger(__name__)

BATCH_FAILURE_LIMIT = 0.2


class BatchError(RuntimeError):
    pass


def _imap(fn, items: list, jobs: int):
    """Ordered lazy map over a bounded process pool (serial for jobs = 1), so
    callers can persist each result as soon as it exists."""
    if jobs <= 1 or len(items) <= 1:
        for x in items:
            yield fn(x)
        return
    with ProcessPoolExecutor(min(jobs, len(items)), mp_context=get_context("fork")) as ex:
        yield from ex.map(fn, items)


def _derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# low-fidelity batch

def batch_targets(V_b_range, m: int) -> np.ndarray:
    if m < 2:
        raise ValueError("batch size m must be >= 2")
    lo, hi = V_b_range
    return np.linspace(lo, hi, m)


def lowfi_run(case, V_b: float, cid: str, hybrid: bool = True):
    """One low-fidelity run turned into a candidate with (rho, xi, encoded theta) channels.
    Returns (candidate, final state).

    ``hybrid=False`` is the single-material baseline: xi frozen at 0."""
    problem = case.lowfi_problem(V_b, freeze_xi=not hybrid)
    state = run_lowfi(problem)
    ev = final_fields(problem, state)
    rho = np.clip(apply_mask(ev.rho_bar, case.mask), 0, 1)
    xi = np.clip(apply_mask(ev.xi_bar, case.mask), 0, 1)
    if not hybrid:
        xi[case.mask.design] = 0.0
    theta = np.clip(encode_angles(ev.theta), 0, 1)
    c = Candidate(cid, case.grid, rho, xi, theta, meta=dict(V_b=float(V_b), iterations=int(state.iter)))
    return c, state


def lowfi_candidate(case, V_b: float, cid: str, hybrid: bool = True) -> Candidate:
    return lowfi_run(case, V_b, cid, hybrid)[0]


def _save_candidate(path: Path, c: Candidate) -> None:
    save_population(path, Population(0, (c,), 1))


def _lowfi_job(args):
    case, V_b, cid, hybrid = args
    try:
        return lowfi_candidate(case, V_b, cid, hybrid)
    except (LowFiError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return f"{type(exc).__name__}: {exc}"


def run_lowfi_batch(case, m: Optional[int] = None, out_dir=None, *, hybrid: bool = True,
                    jobs: int = 1) -> list:
    """m low-fidelity runs at uniformly spaced V_b targets.

    With ``out_dir`` every finished run is stored as ``lowfi/run_<k>.npz`` (or
    ``.failed``) and a repeated call only executes the missing runs."""
    m = case.m if m is None else m
    targets = batch_targets(case.V_b_range, m)
    ids = [f"g000-i{k:03d}" for k in range(m)]
    d = None if out_dir is None else Path(out_dir) / "lowfi"
    if d is not None:
        d.mkdir(parents=True, exist_ok=True)
    results: list = [None] * m
    todo = []
    for k in range(m):
        if d is not None and (d / f"run_{k:03d}.npz").exists():
            results[k] = load_population(d / f"run_{k:03d}.npz").members[0]
        elif d is not None and (d / f"run_{k:03d}.failed").exists():
            results[k] = (d / f"run_{k:03d}.failed").read_text()
        else:
            todo.append(k)
    log.info("low-fidelity batch: %d of %d runs to execute", len(todo), m)
    done = _imap(_lowfi_job, [(case, float(targets[k]), ids[k], hybrid) for k in todo], jobs)
    for k, r in zip(todo, done):
        results[k] = r
        if d is None:
            continue
        if isinstance(r, Candidate):
            _save_candidate(d / f"run_{k:03d}.npz", r)
        else:
            (d / f"run_{k:03d}.failed").write_text(r)
    failed = [(k, r) for k, r in enumerate(results) if not isinstance(r, Candidate)]
    for k, why in failed:
        log.warning("low-fidelity run %d (V_b=%.4g) failed: %s", k, targets[k], why)
    if len(failed) > BATCH_FAILURE_LIMIT * m:
        raise BatchError(f"{len(failed)} of {m} low-fidelity runs failed (limit {BATCH_FAILURE_LIMIT:.0%})")
    return [r for r in results if isinstance(r, Candidate)]


# --------------------------------------------------------------------------
# one candidate through de-homogenization and high-fidelity analysis

def realize(c: Candidate, case, hybrid: bool = True) -> ContourSet:
    res = dehomogenize(c.rho, c.xi, c.theta, case.grid, case.mask, case.wave, solid_fill=hybrid)
    return res.contours


def evaluate_design(c: Candidate, case, *, sizing=None, hybrid: bool = True,
                    geometry_dir=None) -> HiFiResult:
    """Realize and evaluate one candidate; every failure becomes an anomaly result."""
    try:
        contours = realize(c, case, hybrid)
    except (RuntimeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return replace(anomaly(f"de-homogenization failed: {exc}"), candidate_id=c.id)
    if geometry_dir is not None and contours is not None and len(contours):
        export_geometry(contours, "dxf", Path(geometry_dir) / f"{c.id}.dxf")
    return evaluate_candidate(contours, case, sizing, candidate_id=c.id)


@dataclass(frozen=True)
class _Evaluator:
    case: object
    sizing: Optional[str]
    hybrid: bool
    geometry_dir: Optional[str]

    def __call__(self, c: Candidate) -> HiFiResult:
        return evaluate_design(c, self.case, sizing=self.sizing, hybrid=self.hybrid, geometry_dir=self.geometry_dir)


def read_evaluations(path) -> dict:
    """Cached results by candidate id (numbers round-trip through repr)."""
    if not os.path.exists(path):
        return {}
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            try:
                out[r["candidate_id"]] = HiFiResult(
                    float(r["G_vf"]), float(r["G_opt"]), float(r["max_displacement"]), int(r["mesh_elements"]), 0,
                    anomaly=r["anomaly"] == "True", reason=r["reason"], wall_time=float(r["wall_time"]),
                    candidate_id=r["candidate_id"])
            except (TypeError, ValueError):
                continue  # a row cut short by an interrupted run; that candidate is evaluated again
    return out


def _apply(c: Candidate, r: HiFiResult) -> Candidate:
    if r.anomaly:
        return c.with_(objectives=None, anomaly=True, reason=r.reason)
    return c.with_(objectives=(r.G_vf, r.G_opt), anomaly=False, reason="")


def evaluate_all(members, evaluator, jobs: int = 1, cache_path=None) -> list:
    """Evaluate the unevaluated members, reusing and extending the result cache."""
    cache = read_evaluations(cache_path) if cache_path is not None else {}
    todo = [c for c in members if not c.evaluated and c.id not in cache]
    for c, r in zip(todo, _imap(evaluator, todo, jobs)):
        r = replace(r, candidate_id=c.id)
        if cache_path is not None:
            append_results(cache_path, [r])
        cache[c.id] = r
    return [c if c.evaluated else _apply(c, cache[c.id]) for c in members]


# --------------------------------------------------------------------------
# evolutionary loop

def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(obj, indent=1))
    os.replace(tmp, path)


def _truncate_ledger(path: Path, generation: int) -> None:
    """Drop ledger rows past the last checkpointed generation."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    keep = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= generation]
    path.write_text("".join(keep))


def elites_of(pop: Population) -> list:
    """Rank-1 members; if fewer than two, the best two by (rank, -crowding, id)."""
    r1 = pop.rank1()
    if len(r1) >= 2:
        return r1
    order = sorted(pop.members, key=lambda c: (c.rank, -c.crowding, c.id))
    return order[:2]


def _select(members, m: int, generation: int) -> Population:
    if len(members) <= m:
        return rank_population(Population(generation, tuple(members), m))
    pop = Population(generation, tuple(members), max(m, (len(members) + 1) // 2))
    return select_next_population(pop, m)


def _record(run: Path, pop: Population, hv: float, state: dict) -> None:
    g = pop.generation
    save_population(run / "checkpoints" / f"gen_{g:03d}.npz", pop)
    append_ledger(run / "ledger.csv", ledger_row(g, hv, pop))
    write_rank1_archive(run / "rank1" / f"gen_{g:03d}.csv", pop)
    _write_json(run / "state.json", state)


def initial_population(cfg: RunConfig) -> Population:
    run = cfg.out
    path = run / "initial.npz"
    if path.exists():
        return load_population(path)
    members = run_lowfi_batch(cfg.case, cfg.case.m, run, hybrid=cfg.hybrid, jobs=cfg.jobs)
    pop = Population(0, tuple(members), cfg.case.m)
    save_population(path, pop)
    return pop


def run_evolutionary_loop(cfg: RunConfig, evaluator: Optional[Callable] = None,
                          initial: Optional[Population] = None) -> Population:
    """Evaluate, filter, select, train the VAE on the elites, breed m offspring;
    repeat until check_convergence stops. Every generation is checkpointed.

    ``evaluator`` maps a Candidate to a HiFiResult (default: de-homogenize and
    mesh); ``initial`` replaces the low-fidelity batch."""
    run = cfg.out
    for sub in ("checkpoints", "rank1", "geometry"):
        (run / sub).mkdir(parents=True, exist_ok=True)
    m = cfg.case.m
    evaluator = evaluator or _Evaluator(cfg.case, cfg.sizing, cfg.hybrid, str(run / "geometry"))
    cache = run / "evaluations.csv"
    state_path = run / "state.json"

    if state_path.exists() and not cfg.resume:
        raise FileExistsError(f"{run} already holds a run; pass resume to continue it")
    if cfg.resume and state_path.exists():
        state = json.loads(state_path.read_text())
        g = state["generation"]
        pop = load_population(run / "checkpoints" / f"gen_{g:03d}.npz")
        _truncate_ledger(run / "ledger.csv", g)
        ref = HvConfig(*state["ref"])
        hv_hist = [float(h) for h in state["hv_history"]]
        log.info("resuming %s after generation %d", run, g)
    else:
        if (run / "ledger.csv").exists():
            (run / "ledger.csv").unlink()
        if cfg.case_key:
            dump_config(cfg, run / "config.yaml")
        else:
            log.warning("case %s has no registry key; config.yaml not written", cfg.case.name)
        init = initial if initial is not None else initial_population(cfg)
        members = evaluate_all(init.members, evaluator, cfg.jobs, cache)
        kept, dropped = partition_anomalies(members)
        for c, why in dropped:
            log.info("dropping %s: %s", c.id, why)
        if not kept:
            raise PopulationExtinct(f"population extinct: all {len(members)} initial candidates filtered")
        ref = HvConfig.from_points([c.objectives for c in kept])
        pop = _select(kept, m, 0)
        hv_hist = [population_hypervolume(pop.objectives(), ref)]
        g = 0
        state = dict(generation=0, ref=[ref.ref_vf, ref.ref_opt], hv_history=[repr(h) for h in hv_hist],
                     stopped="")
        _record(run, pop, hv_hist[-1], state)

    while True:
        conv = check_convergence(hv_hist, g, max_iter=cfg.max_generations)
        if conv.stop:
            state.update(stopped=conv.reason)
            _write_json(state_path, state)
            log.info("stopping after generation %d: %s", g, conv.reason)
            return pop
        g += 1
        elites = elites_of(pop)
        vcfg = cfg.vae_config(_derived_seed(cfg.seed, g, 0))
        params, report = train_vae(vcfg, channels_to_input(elites, vcfg))
        kids = generate_offspring(params, vcfg, elites, m, _derived_seed(cfg.seed, g, 1), cfg.case.mask,
                                  generation=g)
        if not cfg.hybrid:
            kids = [k.with_(xi=np.where(cfg.case.mask.design, 0.0, k.xi)) for k in kids]
        kids = evaluate_all(kids, evaluator, cfg.jobs, cache)
        kept, dropped = partition_anomalies(list(pop.members) + kids)
        for c, why in dropped:
            log.info("dropping %s: %s", c.id, why)
        # parents were filtered when they entered; only offspring are dropped here
        gone = {c.id for c, _ in dropped}
        fresh = [k for k in kids if k.id not in gone]
        members = list(pop.members) + fresh
        pop = _select(members, m, g)
        hv_hist.append(population_hypervolume(pop.objectives(), ref))
        state = dict(generation=g, ref=[ref.ref_vf, ref.ref_opt], hv_history=[repr(h) for h in hv_hist],
                     stopped="")
        _record(run, pop, hv_hist[-1], state)
        log.info("generation %d: hv %.6g, rank-1 %d, offspring kept %d/%d", g, hv_hist[-1],
                 len(pop.rank1()), len(fresh), m)


# --------------------------------------------------------------------------
# front comparison

def best_below(front: np.ndarray, v: float) -> float:
    """Lowest G_opt among points with G_vf <= v (inf if none)."""
    F = np.asarray(front, float).reshape(-1, 2)
    sel = F[:, 0] <= v
    return float(F[sel, 1].min()) if sel.any() else np.inf


def front_dominance_fraction(front_a, front_b) -> float:
    """Fraction of front_b's volume fractions (inside the common range) at which
    front_a attains a G_opt no worse than front_b at no larger G_vf."""
    A = np.asarray(front_a, float).reshape(-1, 2)
    B = np.asarray(front_b, float).reshape(-1, 2)
    lo = max(A[:, 0].min(), B[:, 0].min())
    hi = min(A[:, 0].max(), B[:, 0].max())
    vs = np.unique(np.concatenate([A[:, 0], B[:, 0]]))
    vs = vs[(vs >= lo) & (vs <= hi)]
    if not len(vs):
        return 0.0
    wins = [best_below(A, v) <= best_below(B, v) for v in vs]
    return float(np.mean(wins))


# --------------------------------------------------------------------------
# reports

def _f(v: float) -> str:
    return f"{v:.6g}"


def _axes(x0, x1, y0, y1, xlabel, ylabel, W=480, H=360, pad=60):
    sx = (W - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (H - 2 * pad) / ((y1 - y0) or 1.0)

    def tr(x, y):
        return pad + (x - x0) * sx, H - pad - (y - y0) * sy

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>']
    for k in range(5):
        xv, yv = x0 + k * (x1 - x0) / 4, y0 + k * (y1 - y0) / 4
        px, _ = tr(xv, y0)
        _, py = tr(x0, yv)
        parts.append(f'<text x="{px:.2f}" y="{H - pad + 16}" font-size="10" text-anchor="middle">{_f(xv)}</text>')
        parts.append(f'<text x="{pad - 4}" y="{py + 3:.2f}" font-size="10" text-anchor="end">{_f(yv)}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 16}" font-size="12" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="14" y="{H / 2}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {H / 2})">{ylabel}</text>')
    return parts, tr


def _span(v: np.ndarray):
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi == lo:
        lo, hi = lo - 0.5 * (abs(lo) or 1.0), hi + 0.5 * (abs(hi) or 1.0)
    m = 0.05 * (hi - lo)
    return lo - m, hi + m


def pareto_svg(pop: Population) -> str:
    F = pop.objectives()
    (x0, x1), (y0, y1) = _span(F[:, 0]), _span(F[:, 1])
    parts, tr = _axes(x0, x1, y0, y1, "G_vf", "G_opt")
    parts.append(f'<text x="240" y="24" font-size="13" text-anchor="middle">generation {pop.generation}</text>')
    for c in sorted(pop.members, key=lambda c: (c.rank == 1, c.id)):
        px, py = tr(*c.objectives)
        color, r = ("#d62728", 4) if c.rank == 1 else ("#7f7f7f", 3)
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" fill="{color}"><title>{c.id}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def hv_svg(gens, hv) -> str:
    gens, hv = np.asarray(gens, float), np.asarray(hv, float)
    (x0, x1), (y0, y1) = _span(gens), _span(hv)
    parts, tr = _axes(x0, x1, y0, y1, "generation", "hypervolume")
    pts = " ".join("{:.2f},{:.2f}".format(*tr(g, h)) for g, h in zip(gens, hv))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    for g, h in zip(gens, hv):
        px, py = tr(g, h)
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" fill="#1f77b4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_reports(run_dir) -> list:
    """Pareto SVG per generation, hypervolume history, Rank-1 gallery and summary CSVs."""
    run = Path(run_dir)
    ledger = run / "ledger.csv"
    if not ledger.exists():
        raise FileNotFoundError(f"no ledger in {run}")
    rows = read_ledger(ledger)
    cfg = load_config(run / "config.yaml") if (run / "config.yaml").exists() else None
    formats = set(cfg.report_formats) if cfg is not None else {"svg", "csv"}
    rep = run / "reports"
    gal = rep / "gallery"
    gal.mkdir(parents=True, exist_ok=True)
    written = []

    def write(path: Path, text: str):
        path.write_text(text)
        written.append(path)

    pops = {r["generation"]: load_population(run / "checkpoints" / f"gen_{r['generation']:03d}.npz") for r in rows}
    if "svg" in formats:
        for g, pop in pops.items():
            write(rep / f"pareto_gen_{g:03d}.svg", pareto_svg(pop))
        write(rep / "hv_history.svg", hv_svg([r["generation"] for r in rows], [r["hv"] for r in rows]))

    final = pops[rows[-1]["generation"]]
    for old in gal.glob("*.svg"):
        old.unlink()
    for c in final.rank1():
        dxf = run / "geometry" / f"{c.id}.dxf"
        if dxf.exists():
            contours = read_dxf(dxf)
        elif cfg is not None:
            contours = realize(c, cfg.case, cfg.hybrid)
        else:
            raise FileNotFoundError(f"no geometry for {c.id} and no config to realize it")
        write(gal / f"{c.id}.svg", svg_text(contours))

    if "csv" in formats:
        lines = ["generation,hv,rank1_count"] + [f"{r['generation']},{r['hv']!r},{r['rank1_count']}" for r in rows]
        write(rep / "summary.csv", "\n".join(lines) + "\n")
        out = ["id,G_vf,G_opt,crowding,provenance"]
        out += [f"{c.id},{c.objectives[0]!r},{c.objectives[1]!r},{c.crowding!r},{c.provenance}"
                for c in final.rank1()]
        write(rep / "final_rank1.csv", "\n".join(out) + "\n")
    return written


def read_summary(path) -> list:
    with open(path, newline="") as fh:
        return [dict(generation=int(r["generation"]), hv=float(r["hv"]), rank1_count=int(r["rank1_count"]))
                for r in csv.DictReader(fh)]
