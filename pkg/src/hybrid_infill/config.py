"""Run configuration: a benchmark case plus run plumbing, loaded from YAML.

Schema (every key optional except ``case``)::

    case: smoke | l-bracket | tension-beam
    seed: 0
    out: runs/smoke
    jobs: 1
    max_generations: 250
    hybrid: true             # false = single-material baseline (xi frozen at 0, lattice only)
    sizing: fine             # coarse | medium | fine | extreme-fine
    report_formats: [svg, csv]
    case_params:             # CaseDefinition scalars
      m: 16
      V_b_range: [0.35, 0.7]
      V_s: 0.5
      load_radius: 1.0
      exclusion_radius: 2.0
    material: {E_iso: 1.0, nu_iso: 0.3, sigma_S: 2.0, E11: 0.3, ...}
    wave: {d: 8.0, N_dilate: 4, lam: 4, R_f: 8.0, eta_t: 0.5, t_shell: 4, dp_tol: 1.0e-5}
    lowfi: {P: 12.0, alpha: 0.5, R_s: 3.0, beta_s: 32.0, max_iters: 300, ...}
    vae: {latent_dim: 64, beta_kl: 1.0, epochs: 200, batch_size: 16, learning_rate: 0.001}

``default_config(case)`` returns the fully populated dictionary for a case.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .cases import CASES, CaseDefinition, WaveConfig, get_case
from .hifi.mesh import SIZING_LEVELS
from .lowfi.material import MaterialParams
from .lowfi.optimize import LowFiProblem
from .vae.model import VaeConfig

CASE_PARAMS = ("m", "V_b_range", "V_s", "load_radius", "exclusion_radius")
LOWFI_PARAMS = tuple(f.name for f in fields(LowFiProblem)
                     if f.name not in ("grid", "mask", "fixed_dofs", "loads", "mat", "V_b", "V_s", "freeze_xi"))
VAE_PARAMS = ("latent_dim", "beta_kl", "epochs", "batch_size", "learning_rate", "c1", "c2")
TOP_KEYS = ("case", "seed", "out", "jobs", "resume", "max_generations", "hybrid", "sizing", "report_formats",
            "case_params", "material", "wave", "lowfi", "vae")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: CaseDefinition
    seed: int = 0
    out: Path = Path("runs/run")
    jobs: int = 1
    resume: bool = False
    max_generations: int = 250
    hybrid: bool = True
    sizing: Optional[str] = None
    report_formats: tuple = ("svg", "csv")
    vae: dict = field(default_factory=dict)
    case_key: str = ""

    def __post_init__(self):
        object.__setattr__(self, "out", Path(self.out))
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be >= 0")
        if self.sizing is not None and self.sizing not in SIZING_LEVELS:
            raise ConfigError(f"unknown sizing {self.sizing!r}; choose from {list(SIZING_LEVELS)}")
        if self.case.m < 2:
            raise ConfigError("population size m must be >= 2")
        bad = set(self.report_formats) - {"svg", "csv"}
        if bad:
            raise ConfigError(f"unknown report formats {sorted(bad)}")
        bad = set(self.vae) - set(VAE_PARAMS)
        if bad:
            raise ConfigError(f"unknown vae keys {sorted(bad)}")
        if not self.case_key:
            object.__setattr__(self, "case_key", case_key_of(self.case))

    def vae_config(self, seed: int) -> VaeConfig:
        from .vae.model import padded_size
        g = self.case.grid
        return VaeConfig(padded_size(g.ny), padded_size(g.nx), seed=seed, **self.vae)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        if not self.case_key:
            raise ConfigError(f"case {self.case.name!r} is not a registered case and cannot be written to a config")
        d = default_config(self.case_key, self.case)
        d.update(seed=self.seed, out=str(self.out), jobs=self.jobs, resume=self.resume,
                 max_generations=self.max_generations, hybrid=self.hybrid,
                 sizing=self.sizing or self.case.sizing, report_formats=list(self.report_formats))
        d["vae"].update(self.vae)
        return d


def case_key_of(case: CaseDefinition) -> str:
    """Registry key whose default case has the same name (and so the same geometry), or ""."""
    for key in CASES:
        if get_case(key).name == case.name:
            return key
    return ""


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def default_config(case_name: str, case: Optional[CaseDefinition] = None) -> dict:
    """Every tunable key of a case with its current value."""
    case = case or get_case(case_name)
    vae = VaeConfig(4, 4)
    return dict(
        case=case_name, seed=0, out=f"runs/{case_name}", jobs=1, resume=False, max_generations=250,
        hybrid=True, sizing=case.sizing, report_formats=["svg", "csv"],
        case_params={k: _plain(getattr(case, k)) for k in CASE_PARAMS},
        material=asdict(case.mat),
        wave=asdict(case.wave),
        lowfi={k: case.lowfi.get(k, LowFiProblem.__dataclass_fields__[k].default) for k in LOWFI_PARAMS},
        vae={k: getattr(vae, k) for k in VAE_PARAMS},
    )


def _check_keys(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    bad = set(given) - set(allowed)
    if bad:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    _check_keys("top level", d, TOP_KEYS)
    name = d.get("case")
    if name not in CASES:
        raise ConfigError(f"unknown case {name!r}; choose from {sorted(CASES)}")
    case = get_case(name)
    try:
        cp = d.get("case_params") or {}
        _check_keys("case_params", cp, CASE_PARAMS)
        cp = {k: tuple(v) if isinstance(v, list) else v for k, v in cp.items()}
        mat = d.get("material") or {}
        _check_keys("material", mat, MaterialParams.__dataclass_fields__)
        wave = d.get("wave") or {}
        _check_keys("wave", wave, WaveConfig.__dataclass_fields__)
        lowfi = d.get("lowfi") or {}
        _check_keys("lowfi", lowfi, LOWFI_PARAMS)
        vae = d.get("vae") or {}
        _check_keys("vae", vae, VAE_PARAMS)
        case = case.with_(mat=replace(case.mat, **mat), wave=replace(case.wave, **wave),
                          lowfi={**case.lowfi, **lowfi}, **cp)
        lo, hi = case.V_b_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"V_b_range {case.V_b_range} must satisfy 0 < lo <= hi <= 1")
        VaeConfig(4, 4, **vae)
        return RunConfig(case=case, seed=int(d.get("seed", 0)), out=Path(d.get("out", f"runs/{name}")),
                         jobs=int(d.get("jobs", 1)), resume=bool(d.get("resume", False)),
                         max_generations=int(d.get("max_generations", 250)), hybrid=bool(d.get("hybrid", True)),
                         sizing=d.get("sizing"), report_formats=tuple(d.get("report_formats", ("svg", "csv"))),
                         vae=dict(vae), case_key=name)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        d = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(d)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
