"""Solve reports: per-system counters and residual histories."""

from dataclasses import dataclass, field

import humanize
from dataclasses_json import DataClassJsonMixin, config


def _encode_complex(z):
    return None if z is None else [float(z.real), float(z.imag)]


def _decode_complex(v):
    return None if v is None else complex(v[0], v[1])


complex_field = config(encoder=_encode_complex, decoder=_decode_complex)


@dataclass
class SystemReport(DataClassJsonMixin):
    """Counters and history of one shifted system of a family."""

    shift: complex = field(metadata=complex_field)
    r0_norm: float = 0.0

    # ---- costs attributed to this system ----
    matvecs: int = 0
    precond_applies: int = 0
    # recycle space rebuilds (C = A_p U) when entering a new operator
    setup_matvecs: int = 0
    setup_precond_applies: int = 0

    # ---- progress ----
    cycles: int = 0
    projections: int = 0
    skipped_projections: int = 0
    # residual norm after every cycle or projection that touched this system
    history: list[float] = field(default_factory=list)
    converged: bool = False
    true_relres: float | None = None

    @property
    def relres(self) -> float:
        if not self.history or self.r0_norm == 0.0:
            return 0.0
        return self.history[-1] / self.r0_norm

    def record(self, resnorm: float):
        self.history.append(float(resnorm))


@dataclass
class SolveReport(DataClassJsonMixin):
    """Result of one shifted-family solve."""

    method: str
    systems: list[SystemReport] = field(default_factory=list)
    wall_time: float = 0.0
    flags: list[str] = field(default_factory=list)
    # explicit residual checks, never part of the totals
    verification_matvecs: int = 0
    recycle_dim: int = 0
    label: str = ""

    @property
    def total_matvecs(self) -> int:
        return sum(s.matvecs + s.setup_matvecs for s in self.systems)

    @property
    def iteration_matvecs(self) -> int:
        return sum(s.matvecs for s in self.systems)

    @property
    def setup_matvecs(self) -> int:
        return sum(s.setup_matvecs for s in self.systems)

    @property
    def total_precond_applies(self) -> int:
        return sum(s.precond_applies + s.setup_precond_applies for s in self.systems)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.systems)

    def flag(self, message: str):
        if message not in self.flags:
            self.flags.append(message)

    def merge(self, other: "SolveReport") -> "SolveReport":
        """Append the systems of a solve on the same family (sequential methods)."""
        self.systems.extend(other.systems)
        self.wall_time += other.wall_time
        self.verification_matvecs += other.verification_matvecs
        self.recycle_dim = max(self.recycle_dim, other.recycle_dim)
        for f in other.flags:
            self.flag(f)
        return self

    def summary(self) -> str:
        state = "converged" if self.converged else "NOT converged"
        return (
            f"{self.method} {self.label}: {len(self.systems)} systems {state}, "
            f"{self.total_matvecs} matvecs ({self.setup_matvecs} setup), "
            f"{humanize.naturaldelta(self.wall_time, minimum_unit='milliseconds')}"
        )


@dataclass
class RunReport(DataClassJsonMixin):
    """All family solves of one run, e.g. a sequence of matrices."""

    exp_name: str
    method: str
    solves: list[SolveReport] = field(default_factory=list)
    # median over timing repeats
    wall_time: float = 0.0
    repeats: int = 1

    @property
    def total_matvecs(self) -> int:
        return sum(s.total_matvecs for s in self.solves)

    @property
    def setup_matvecs(self) -> int:
        return sum(s.setup_matvecs for s in self.solves)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.solves)
