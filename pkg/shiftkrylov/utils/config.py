"""configuration and setup utils"""

import logging
import re
from collections.abc import Hashable
from dataclasses import dataclass, field
from pathlib import Path
from typing import cast

import coolname
import rich
import shutup
from omegaconf import OmegaConf
from rich.logging import RichHandler
from rich.syntax import Syntax

from . import serialize

shutup.mute_warnings()
logging.basicConfig(
    level="WARNING", format="%(message)s", datefmt="[%X]", handlers=[RichHandler()]
)
logger = logging.getLogger("shiftkrylov")
logger.setLevel(logging.WARNING)

METHODS = ("sgmres", "srgmres", "seq-gmres", "seq-rgmres")
SHIFT_CONVENTIONS = ("relative", "absolute")
PRECONDITIONERS = ("none", "identity", "ilu0")
SWEEP_MODES = ("mk", "m_plus_k", "marginal", "shift_magnitude")


class ConfigurationError(ValueError):
    """Invalid run configuration."""


""" these dataclasses are just for type hinting, the actual defaults are in config.yaml """


@dataclass
class ProblemConfig:
    matrix: str | None
    synthetic: str | None
    kappa_c: float | None
    qcd_base: bool
    sequence_length: int
    perturbation: float
    complex_rhs_increments: bool
    save_matrix: str | None


@dataclass
class SolverConfig:
    method: str
    m: int
    k: int
    eps: float
    max_cycles: int
    shift_convention: str
    parallel_shift_projections: bool
    n_jobs: int
    verify_residuals: bool


@dataclass
class PrecondConfig:
    kind: str


@dataclass
class TimingConfig:
    repeats: int


@dataclass
class SweepConfig:
    mode: str
    m_values: list[int]
    k_values: list[int]
    m_plus_k: int
    methods: list[str]
    shift_interval: list[float]
    shift_count: int
    magnitudes: list[float]
    base_shift: str


@dataclass
class CostConfig:
    param: str
    values: list[int]
    m: int
    k: int
    L: int
    n: int
    j_new: float | None
    half_recycle: bool


@dataclass
class DiagnoseConfig:
    max_dim: int
    method: str


@dataclass
class FetchConfig:
    names: list[str]
    dest: str
    base_url: str
    timeout: float


@dataclass
class Config(Hashable):
    shifts: list[str]
    seed: int
    out_dir: Path
    exp_name: str | None
    out: str | None
    log_level: str

    problem: ProblemConfig
    solver: SolverConfig
    precond: PrecondConfig
    timing: TimingConfig
    sweep: SweepConfig
    cost: CostConfig
    diagnose: DiagnoseConfig
    fetch: FetchConfig = field(default_factory=lambda: FetchConfig([], "data/qcd", "", 60.0))


_BARE_I = re.compile(r"(^|[+-])i$")


def parse_shift(text: str | float | complex) -> complex:
    """Parse '0.5', '1+2i', '-3i' or '1e-3' into a complex shift."""
    if isinstance(text, int | float | complex):
        return complex(text)
    s = str(text).strip().replace(" ", "")
    s = _BARE_I.sub(r"\g<1>1i", s).replace("i", "j")
    try:
        return complex(s)
    except ValueError:
        raise ConfigurationError(f"cannot parse shift {text!r}") from None


def parse_shifts(items) -> list[complex]:
    if isinstance(items, str):
        items = [t for t in items.split(",") if t.strip()]
    return [parse_shift(t) for t in items]


def _get_next_logindex(dir: Path) -> int:
    """Get the next available index for a run directory."""
    max_index = -1
    for p in dir.iterdir():
        try:
            if (current_index := int(p.name.split("-")[0])) > max_index:
                max_index = current_index
        except ValueError:
            pass
    return max_index + 1


def _load_cfg(
    path: Path = Path(__file__).parent / "config.yaml", use_cli_args=True
) -> Config:
    cfg = OmegaConf.load(path)
    if use_cli_args:
        cfg = OmegaConf.merge(cfg, OmegaConf.from_cli())
    return cfg


def load_cfg(
    path: Path = Path(__file__).parent / "config.yaml", overrides: list[str] | None = None
) -> Config:
    """Load config from .yaml file and dot-list overrides, and set up the run directory."""
    cfg = _load_cfg(path, use_cli_args=False)
    if overrides:
        cfg = OmegaConf.merge(cfg, OmegaConf.from_dotlist(overrides))
    return prep_cfg(cfg)


def validate_cfg(cfg: Config) -> None:
    solver = cfg.solver
    if solver.method not in METHODS:
        raise ConfigurationError(f"unknown method {solver.method!r}, expected one of {METHODS}")
    if not solver.eps > 0:
        raise ConfigurationError(f"`solver.eps` must be positive, got {solver.eps}")
    if solver.m < 1:
        raise ConfigurationError(f"`solver.m` must be at least 1, got {solver.m}")
    if solver.k < 0:
        raise ConfigurationError(f"`solver.k` must be nonnegative, got {solver.k}")
    if solver.max_cycles < 1:
        raise ConfigurationError(f"`solver.max_cycles` must be at least 1, got {solver.max_cycles}")
    if solver.shift_convention not in SHIFT_CONVENTIONS:
        raise ConfigurationError(f"unknown shift convention {solver.shift_convention!r}")
    if cfg.precond.kind not in PRECONDITIONERS:
        raise ConfigurationError(f"unknown preconditioner {cfg.precond.kind!r}")
    if cfg.sweep.mode not in SWEEP_MODES:
        raise ConfigurationError(f"unknown sweep mode {cfg.sweep.mode!r}")
    if cfg.problem.sequence_length < 1:
        raise ConfigurationError("`problem.sequence_length` must be at least 1")
    if cfg.timing.repeats < 1:
        raise ConfigurationError("`timing.repeats` must be at least 1")
    shifts = parse_shifts(list(cfg.shifts))
    if not shifts:
        raise ConfigurationError("at least one shift is required")
    if len(set(shifts)) != len(shifts):
        raise ConfigurationError(f"shifts must be distinct: {list(cfg.shifts)}")


def prep_cfg(cfg: Config, make_dirs: bool = True) -> Config:
    if cfg.problem.matrix is not None and cfg.problem.synthetic is not None:
        raise ConfigurationError(
            "Provide either a Matrix Market source (`problem.matrix=...`) or a synthetic problem (`problem.synthetic=nx,peclet,rot`), not both."
        )
    if isinstance(cfg.shifts, str):
        cfg.shifts = [t.strip() for t in cfg.shifts.split(",") if t.strip()]
    cfg.shifts = [str(s) for s in cfg.shifts]

    # validate the config
    cfg_schema: Config = OmegaConf.structured(Config)
    cfg = OmegaConf.merge(cfg_schema, cfg)
    validate_cfg(cfg)

    if make_dirs:
        top_out_dir = Path(cfg.out_dir).resolve()
        top_out_dir.mkdir(parents=True, exist_ok=True)

        # generate experiment name and prefix with consecutive index
        ind = _get_next_logindex(top_out_dir)
        cfg.exp_name = cfg.exp_name or coolname.generate_slug(3)
        cfg.exp_name = f"{ind}-{cfg.exp_name}"
        cfg.out_dir = (top_out_dir / cfg.exp_name).resolve()
    else:
        cfg.exp_name = cfg.exp_name or coolname.generate_slug(3)

    logger.setLevel(cfg.log_level)
    return cast(Config, cfg)


def print_cfg(cfg: Config) -> None:
    rich.print(Syntax(OmegaConf.to_yaml(cfg), "yaml", theme="paraiso-dark"))


def save_run(cfg: Config, report=None, table=None, name: str = "report") -> Path:
    """Write the resolved config plus a JSON report or CSV table to the run directory."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # save config
    OmegaConf.save(config=cfg, f=out_dir / "config.yaml")
    target = Path(cfg.out) if cfg.out else None
    if report is not None:
        target = target or out_dir / f"{name}.json"
        serialize.dump_json(report, target)
    if table is not None:
        target = target or out_dir / f"{name}.csv"
        table.to_csv(target, index=False, float_format="%.17g")
    return target or out_dir
