"""NSGA-II selection, two-objective hypervolume and convergence control."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from .population import Population

log = logging.getLogger(__name__)

OUTLIER_FACTOR = 10.0
PLATEAU_TOL = 1e-3
PLATEAU_STEPS = 5
MAX_GENERATIONS = 250
LEDGER_FIELDS = ("generation", "hv", "rank1_count", "population_ids")


class PopulationExtinct(RuntimeError):
    pass


# --------------------------------------------------------------------------
# anomaly filter

def partition_anomalies(members, factor: float = OUTLIER_FACTOR):
    """Split members into (kept, dropped) where dropped holds (candidate, reason) pairs."""
    kept, dropped = [], []
    for c in members:
        if c.anomaly:
            dropped.append((c, c.reason or "anomaly"))
        elif c.objectives is None:
            dropped.append((c, "not evaluated"))
        elif not np.all(np.isfinite(c.objectives)):
            dropped.append((c, "non-finite objectives"))
        else:
            kept.append(c)
    if kept:
        med = float(np.median([c.objectives[1] for c in kept]))
        out = [c for c in kept if c.objectives[1] > factor * med]
        dropped += [(c, f"G_opt {c.objectives[1]:.4g} > {factor:g} x median {med:.4g}") for c in out]
        kept = [c for c in kept if not c.objectives[1] > factor * med]
    return kept, dropped


def filter_anomalies(pop: Population, factor: float = OUTLIER_FACTOR) -> Population:
    kept, dropped = partition_anomalies(pop.members, factor)
    for c, why in dropped:
        log.info("dropping %s: %s", c.id, why)
    if not kept:
        raise PopulationExtinct(f"population extinct: all {len(pop)} members filtered at generation {pop.generation}")
    return pop.with_members(kept)


# --------------------------------------------------------------------------
# non-dominated sorting

def dominance_matrix(F: np.ndarray) -> np.ndarray:
    """D[i, j] is True when point i dominates point j (minimization)."""
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def fronts(F: np.ndarray) -> list:
    """Fast non-dominated sort; each front lists indices in input order."""
    F = np.asarray(F, float).reshape(len(F), -1)
    D = dominance_matrix(F)
    count = D.sum(axis=0)  # how many points dominate each point
    out = []
    current = np.flatnonzero(count == 0)
    while current.size:
        out.append(current)
        count = count - D[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return out


def crowding_distance(F: np.ndarray) -> np.ndarray:
    """Crowding distance within one front; boundary members get +inf."""
    F = np.asarray(F, float).reshape(len(F), -1)
    n = len(F)
    d = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(F.shape[1]):
        order = np.argsort(F[:, k], kind="stable")
        f = F[order, k]
        d[order[0]] = d[order[-1]] = np.inf
        span = f[-1] - f[0]
        if span > 0:
            d[order[1:-1]] += (f[2:] - f[:-2]) / span
    return d


def nondominated_sort(F: np.ndarray, ids=None):
    """Ranks (1-based) and crowding distances; ties are broken by id order."""
    F = np.asarray(F, float).reshape(len(F), -1)
    n = len(F)
    perm = np.argsort(np.asarray(ids, dtype=object), kind="stable") if ids is not None else np.arange(n)
    rank = np.empty(n, int)
    crowd = np.empty(n)
    for r, fr in enumerate(fronts(F[perm]), start=1):
        idx = perm[fr]
        rank[idx] = r
        crowd[idx] = crowding_distance(F[idx])
    return rank, crowd


def rank_population(pop: Population) -> Population:
    rank, crowd = nondominated_sort(pop.objectives(), pop.ids)
    return pop.with_members([c.with_(rank=int(r), crowding=float(d)) for c, r, d in zip(pop, rank, crowd)])


def select_next_population(pop: Population, m: int) -> Population:
    """NSGA-II environmental selection of m members (fill by rank, cut by crowding)."""
    if len(pop) < m:
        raise ValueError(f"cannot select {m} from {len(pop)} members")
    ranked = rank_population(pop)
    order = sorted(ranked.members, key=lambda c: (c.rank, -c.crowding, c.id))
    chosen = {c.id for c in order[:m]}
    return Population(pop.generation, tuple(c for c in ranked.members if c.id in chosen), m)


# --------------------------------------------------------------------------
# hypervolume

@dataclass(frozen=True)
class HvConfig:
    ref_vf: float
    ref_opt: float

    @property
    def ref(self) -> np.ndarray:
        return np.array([self.ref_vf, self.ref_opt])

    @classmethod
    def from_points(cls, F: np.ndarray, scale: float = 1.1) -> "HvConfig":
        F = np.asarray(F, float).reshape(-1, 2)
        worst = F.max(axis=0)
        return cls(*(worst * scale + (worst == 0) * 1e-12))


def hypervolume_2d(F: np.ndarray, ref) -> float:
    """Exact area dominated by the points and bounded by ``ref`` (minimization)."""
    ref = ref.ref if isinstance(ref, HvConfig) else np.asarray(ref, float)
    F = np.asarray(F, float).reshape(-1, 2)
    for p in F:
        if not np.all(p <= ref):
            raise ValueError(f"point ({p[0]:.6g}, {p[1]:.6g}) does not dominate the reference point")
    if not len(F):
        return 0.0
    P = F[np.lexsort((F[:, 1], F[:, 0]))]
    hv, best = 0.0, ref[1]
    xs = np.append(P[:, 0], ref[0])
    for k, (x, y) in enumerate(P):
        best = min(best, y)
        hv += (xs[k + 1] - x) * (ref[1] - best)
    return float(hv)


def population_hypervolume(F: np.ndarray, ref) -> float:
    """Hypervolume of the points inside the reference box (others add no area)."""
    ref = ref.ref if isinstance(ref, HvConfig) else np.asarray(ref, float)
    F = np.asarray(F, float).reshape(-1, 2)
    return hypervolume_2d(F[np.all(F <= ref, axis=1)], ref)


# --------------------------------------------------------------------------
# convergence

@dataclass(frozen=True)
class Convergence:
    stop: bool
    reason: str = ""


def check_convergence(hv_history, iteration: int, *, tol: float = PLATEAU_TOL, steps: int = PLATEAU_STEPS,
                      max_iter: int = MAX_GENERATIONS) -> Convergence:
    """Stop on a relative hypervolume change below tol for ``steps`` consecutive
    generations, or once ``iteration`` reaches ``max_iter``."""
    h = np.asarray(hv_history, float)
    if h.size == 0:
        raise ValueError("empty hypervolume history")
    if h.size > steps:
        prev, cur = h[-steps - 1:-1], h[-steps:]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(prev != 0, np.abs(cur - prev) / np.abs(prev), np.where(cur == prev, 0.0, np.inf))
        if np.all(rel < tol):
            return Convergence(True, "plateau")
    if iteration >= max_iter:
        return Convergence(True, "max-iterations")
    return Convergence(False)


# --------------------------------------------------------------------------
# ledger

def ledger_row(generation: int, hv: float, pop: Population) -> dict:
    return dict(generation=int(generation), hv=repr(float(hv)), rank1_count=len(pop.rank1()),
                population_ids=" ".join(pop.ids))


def append_ledger(path, row: dict) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEDGER_FIELDS, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(row)


def read_ledger(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [dict(generation=int(r["generation"]), hv=float(r["hv"]), rank1_count=int(r["rank1_count"]),
                 population_ids=r["population_ids"].split()) for r in rows]


def write_rank1_archive(path, pop: Population) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "G_vf", "G_opt", "crowding", "provenance"])
        for c in pop.rank1():
            w.writerow([c.id, repr(c.objectives[0]), repr(c.objectives[1]), repr(c.crowding), c.provenance])
