"""Candidates, populations and their on-disk snapshots."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..fields import GridSpec


@dataclass(frozen=True)
class Candidate:
    """One design: coarse (rho, xi, theta-encoded) channels plus its evaluation."""

    id: str
    grid: GridSpec
    rho: np.ndarray
    xi: np.ndarray
    theta: np.ndarray  # encoded orientation in [0, 1]
    objectives: Optional[tuple] = None  # (G_vf, G_opt)
    anomaly: bool = False
    reason: str = ""
    rank: Optional[int] = None
    crowding: Optional[float] = None
    provenance: str = "initial"  # "initial" or "offspring(<generation>)"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("rho", "xi", "theta"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {a.shape}, grid needs {self.grid.shape}")
            if not np.all((a >= 0) & (a <= 1)):
                raise ValueError(f"{name} channel leaves [0, 1]")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.objectives is not None:
            object.__setattr__(self, "objectives", tuple(float(v) for v in self.objectives))

    @property
    def channels(self) -> np.ndarray:
        return np.stack([self.rho, self.xi, self.theta])

    @property
    def evaluated(self) -> bool:
        return self.objectives is not None or self.anomaly

    def with_(self, **kw) -> "Candidate":
        return replace(self, **kw)


@dataclass(frozen=True)
class Population:
    generation: int
    members: tuple
    m: int

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        ids = [c.id for c in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate candidate ids in population")
        if len(self.members) > 2 * self.m:
            raise ValueError(f"population of {len(self.members)} exceeds 2m = {2 * self.m}")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def ids(self) -> list:
        return [c.id for c in self.members]

    def objectives(self) -> np.ndarray:
        if any(c.objectives is None for c in self.members):
            raise ValueError("population has unevaluated members")
        return np.array([c.objectives for c in self.members], float).reshape(-1, 2)

    def rank1(self) -> list:
        return [c for c in self.members if c.rank == 1]

    def with_members(self, members, generation: Optional[int] = None) -> "Population":
        return Population(self.generation if generation is None else generation, tuple(members), self.m)


# --------------------------------------------------------------------------
# snapshots

def save_population(path, pop: Population) -> None:
    """Channels and evaluation state of every member, enough to resume a run."""
    members = pop.members
    g = members[0].grid if members else GridSpec(1, 1)
    info = [dict(id=c.id, objectives=c.objectives, anomaly=c.anomaly, reason=c.reason, rank=c.rank,
                 crowding=None if c.crowding is None else (repr(c.crowding)),
                 provenance=c.provenance, meta=c.meta) for c in members]
    header = dict(generation=pop.generation, m=pop.m, grid=[g.nx, g.ny, g.h], members=info)
    stack = lambda name: np.array([getattr(c, name) for c in members]).reshape(len(members), *g.shape)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), np.uint8),
                 rho=stack("rho"), xi=stack("xi"), theta=stack("theta"))


def load_population(path) -> Population:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        rho, xi, theta = z["rho"], z["xi"], z["theta"]
    nx, ny, h = header["grid"]
    g = GridSpec(int(nx), int(ny), float(h))
    members = []
    for k, d in enumerate(header["members"]):
        crowd = None if d["crowding"] is None else float(d["crowding"])
        obj = None if d["objectives"] is None else tuple(d["objectives"])
        members.append(Candidate(d["id"], g, rho[k], xi[k], theta[k], obj, d["anomaly"], d["reason"],
                                 d["rank"], crowd, d["provenance"], d.get("meta", {})))
    return Population(header["generation"], tuple(members), header["m"])
