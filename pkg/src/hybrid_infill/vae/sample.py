"""Offspring by latent interpolation between elite pairs."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..evo.population import Candidate
from ..fields import DesignMask
from .model import VaeConfig, decode, encode, pad_to

JITTER = 0.1


def channels_to_input(candidates, cfg: VaeConfig) -> np.ndarray:
    """Stack candidate channels, edge-padded to the model resolution."""
    x = np.stack([c.channels for c in candidates])
    return pad_to(x, cfg.height, cfg.width)


def generate_offspring(params: dict, cfg: VaeConfig, elites, count: int, seed: int, mask: DesignMask, *,
                       generation: int = 0, t: Optional[np.ndarray] = None,
                       eta: Optional[np.ndarray] = None, pairs: Optional[np.ndarray] = None) -> list:
    """Decode z = t mu_a + (1 - t) mu_b + eta for random elite pairs (a, b).

    ``t``, ``eta`` and ``pairs`` override the random draws (used in tests)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    elites = list(elites)
    if len(elites) < 2:
        raise ValueError("need at least two distinct elites to form a pair")
    rng = np.random.default_rng(seed)
    mu, _ = encode(params, channels_to_input(elites, cfg), cfg)
    if pairs is None:
        pairs = np.array([rng.choice(len(elites), 2, replace=False) for _ in range(count)])
    if t is None:
        t = rng.random(count)
    if eta is None:
        eta = JITTER * rng.standard_normal((count, cfg.latent_dim))
    t = np.asarray(t, float).reshape(count, 1)
    z = t * mu[pairs[:, 0]] + (1 - t) * mu[pairs[:, 1]] + eta
    out = decode(params, z, cfg)
    grid = mask.grid
    ny, nx = grid.shape
    kids = []
    for k in range(count):
        rho = (out[k, 0, :ny, :nx] >= 0.5).astype(float)
        xi = (out[k, 1, :ny, :nx] >= 0.5).astype(float)
        theta = out[k, 2, :ny, :nx]
        rho[mask.void], xi[mask.void] = 0.0, 0.0
        rho[mask.solid], xi[mask.solid] = 1.0, 1.0
        kids.append(Candidate(f"g{generation:03d}-o{k:03d}", grid, rho, xi, theta,
                              provenance=f"offspring({generation})",
                              meta=dict(parents=[elites[pairs[k, 0]].id, elites[pairs[k, 1]].id],
                                        t=float(t[k, 0]))))
    return kids
