"""Problem sources: Matrix Market files, QCD matrices, synthetic operators, right-hand sides."""

import json
import logging
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import backoff
import jsonschema
import numpy as np
import requests
import scipy.io
import scipy.sparse
import scipy.sparse.linalg

from .kernels import Shift, SparseOperator
from .utils import extract_archives

logger = logging.getLogger("shiftkrylov")

QCD_BASE_URL = "https://sparse.tamu.edu/MM/QCD"
QCD_SMALL_SET = [
    "conf5_0-4x4-10",
    "conf5_0-4x4-14",
    "conf5_0-4x4-18",
    "conf5_0-4x4-22",
    "conf5_0-4x4-26",
    "conf6_0-4x4-20",
    "conf6_0-4x4-30",
]
QCD_SHIFTS = [0.01, 0.02, 0.03, 1.0, 2.0, 3.0]
# 1-norm and 2-norm ranges of the Dirac matrices of the QCD group
QCD_NORM1_RANGE = (28.0, 31.0)
QCD_NORM2_RANGE = (11.0, 14.0)
RHS_INCREMENT = 0.1

METADATA_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "kappa_c": {"type": "number", "exclusiveMinimum": 0},
        "norm1_range": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 2,
            "maxItems": 2,
        },
        "norm2_range": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 2,
            "maxItems": 2,
        },
    },
    "required": ["name", "kappa_c"],
}

_KAPPA_RE = re.compile(r"k(?:appa)?[ _]?c\w*\s*[=:]\s*([0-9]*\.[0-9]+(?:[eE][-+]?\d+)?)", re.I)


class ProblemError(Exception):
    """Errors raised while loading or generating problems."""


class MatrixMarketError(ProblemError):
    """Malformed Matrix Market input."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MetadataError(ProblemError):
    """Missing or invalid matrix metadata."""


@dataclass
class ProblemInstance:
    """One shifted family: (A + s I) x = b for every shift."""

    op: SparseOperator
    b: np.ndarray
    shifts: list[Shift] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        if self.b.shape != (self.op.nrows,):
            raise ProblemError(
                f"right-hand side of shape {self.b.shape} for a {self.op.shape} operator"
            )
        if not np.any(self.b):
            raise ProblemError("right-hand side must be nonzero")

    @property
    def n(self) -> int:
        return self.op.nrows


def read_matrix_market(path: Path | str) -> SparseOperator:
    """
    Read a coordinate Matrix Market file (real/integer/complex; general,
    symmetric, skew-symmetric or hermitian) into CSR.
    """
    path = Path(path)
    with open(path) as f:
        lines = f.readlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)

    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError(f"bad header {lines[0].strip()!r}", 1)
    obj, fmt, dtype, symmetry = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported object/format {obj} {fmt}", 1)
    if dtype not in ("real", "integer", "complex"):
        raise MatrixMarketError(f"unsupported field {dtype!r}", 1)
    if symmetry not in ("general", "symmetric", "skew-symmetric", "hermitian"):
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", 1)
    is_complex = dtype == "complex"

    lineno = 1
    size = None
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("%") or not line.strip():
            continue
        try:
            size = tuple(int(t) for t in line.split())
        except ValueError:
            raise MatrixMarketError(f"bad size line {line.strip()!r}", lineno) from None
        break
    if size is None or len(size) != 3:
        raise MatrixMarketError("missing or malformed size line", lineno)
    nrows, ncols, nnz = size

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.complex128)
    count = 0
    ncols_expected = 4 if is_complex else 3
    for lineno, line in enumerate(lines[lineno:], start=lineno + 1):
        if line.startswith("%") or not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != ncols_expected:
            raise MatrixMarketError(
                f"expected {ncols_expected} fields, got {len(tokens)}", lineno
            )
        if count >= nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", lineno)
        try:
            i, j = int(tokens[0]), int(tokens[1])
            v = float(tokens[2])
            if is_complex:
                v = complex(v, float(tokens[3]))
        except ValueError:
            raise MatrixMarketError(f"unparseable entry {line.strip()!r}", lineno) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"index ({i}, {j}) outside {nrows}x{ncols}", lineno)
        rows[count], cols[count], vals[count] = i - 1, j - 1, v
        count += 1
    if count != nnz:
        raise MatrixMarketError(f"declared {nnz} entries, found {count}", lineno)

    if symmetry != "general":
        off = rows != cols
        mirror = vals[off]
        if symmetry == "hermitian":
            mirror = np.conj(mirror)
        elif symmetry == "skew-symmetric":
            mirror = -mirror
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, mirror]),
        )
    mat = scipy.sparse.coo_array((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
    logger.debug(f"Read {path.name}: {nrows}x{ncols}, {nnz} stored entries")
    return SparseOperator(scipy.sparse.csr_array(mat))


def write_matrix_market(path: Path | str, op: SparseOperator, comment: str = "") -> None:
    scipy.io.mmwrite(
        str(path),
        scipy.sparse.coo_matrix(op.matrix),
        comment=comment,
        field="complex",
        precision=17,
        symmetry="general",
    )


def read_mm_comments(path: Path | str) -> list[str]:
    comments = []
    with open(path) as f:
        for line in f:
            if not line.startswith("%"):
                break
            comments.append(line.lstrip("%").strip())
    return comments


def qcd_base_matrix(D: SparseOperator, kappa_c: float) -> SparseOperator:
    """A = (1/kappa_c + 1e-3) I - D."""
    if not D.is_square():
        raise ProblemError(f"Dirac matrix must be square, got {D.shape}")
    if kappa_c <= 0:
        raise ProblemError(f"kappa_c must be positive, got {kappa_c}")
    eye = scipy.sparse.identity(D.nrows, dtype=np.complex128, format="csr")
    return SparseOperator(scipy.sparse.csr_array((1.0 / kappa_c + 1e-3) * eye - D.matrix))


def rhs_sequence(n: int, count: int, seed: int, complex_increments: bool = True) -> list[np.ndarray]:
    """
    b_1 = ones, b_i = b_{i-1} + d_i with random d_i of norm RHS_INCREMENT.
    """
    if count < 1:
        raise ProblemError(f"count must be at least 1, got {count}")
    rng = np.random.default_rng(seed)
    seq = [np.ones(n, dtype=np.complex128)]
    for _ in range(count - 1):
        d = rng.standard_normal(n).astype(np.complex128)
        if complex_increments:
            d = d + 1j * rng.standard_normal(n)
        d *= RHS_INCREMENT / np.linalg.norm(d)
        seq.append(seq[-1] + d)
    return seq


def synthetic_convdiff(nx: int, peclet: float = 0.0, complex_rotation: float = 0.0) -> SparseOperator:
    """
    5-point convection-diffusion stencil on an nx x nx grid, scaled by h^2:
    4 on the diagonal, -1 -/+ p/2 for the west/east and south/north
    neighbours with p = peclet * h, all multiplied by exp(i * rotation).
    """
    if nx < 3:
        raise ProblemError(f"grid needs nx >= 3, got {nx}")
    h = 1.0 / (nx + 1)
    p = peclet * h
    main = scipy.sparse.diags(
        [np.full(nx - 1, -1 - p / 2), np.full(nx, 2.0), np.full(nx - 1, -1 + p / 2)],
        [-1, 0, 1],
    )
    eye = scipy.sparse.identity(nx)
    A = scipy.sparse.kron(eye, main) + scipy.sparse.kron(main, eye)
    A = A.astype(np.complex128) * np.exp(1j * complex_rotation)
    return SparseOperator(scipy.sparse.csr_array(A))


def perturbed_sequence(
    op: SparseOperator, count: int, magnitude: float, seed: int
) -> list[SparseOperator]:
    """`count` operators on the pattern of `op`, each a relative random perturbation of the previous."""
    rng = np.random.default_rng(seed)
    ops = [op]
    for _ in range(count - 1):
        prev = ops[-1].matrix
        noise = rng.uniform(-1.0, 1.0, prev.nnz)
        mat = scipy.sparse.csr_array(
            (prev.data * (1 + magnitude * noise), prev.indices.copy(), prev.indptr.copy()),
            shape=prev.shape,
        )
        ops.append(SparseOperator(mat))
    return ops


def norm2_estimate(op: SparseOperator) -> float:
    return float(scipy.sparse.linalg.svds(op.matrix, k=1, return_singular_vectors=False)[0])


def load_metadata(path: Path | str) -> dict:
    path = Path(path)
    try:
        with open(path) as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise MetadataError(f"Failed to load metadata {path}: {e}") from e
    try:
        jsonschema.validate(meta, METADATA_SCHEMA)
    except jsonschema.ValidationError as e:
        raise MetadataError(f"Invalid metadata {path}: {e.message}") from e
    return meta


def save_metadata(path: Path | str, meta: dict) -> None:
    jsonschema.validate(meta, METADATA_SCHEMA)
    with open(path, "w") as f:
        json.dump(meta, f, indent=2)


def find_kappa_c(comments: list[str]) -> float | None:
    for line in comments:
        if match := _KAPPA_RE.search(line):
            return float(match.group(1))
    return None


def load_qcd_matrix(
    directory: Path | str, name: str, kappa_c: float | None = None
) -> SparseOperator:
    """Base matrix of one QCD Dirac matrix stored as <name>.mtx with <name>.json metadata."""
    directory = Path(directory)
    mtx = directory / f"{name}.mtx"
    if not mtx.exists():
        raise ProblemError(f"QCD matrix {mtx} not found; run `shiftkrylov fetch-qcd` first")
    if kappa_c is None:
        kappa_c = load_metadata(directory / f"{name}.json")["kappa_c"]
    return qcd_base_matrix(read_matrix_market(mtx), kappa_c)


def list_qcd_matrices(directory: Path | str) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.mtx"))


@backoff.on_exception(
    backoff.expo,
    (requests.ConnectionError, requests.Timeout, requests.HTTPError),
    max_tries=4,
)
def _download(url: str, dest: Path, timeout: float) -> None:
    logger.info(f"Downloading {url}")
    with requests.get(url, stream=True, timeout=timeout) as resp:
        resp.raise_for_status()
        with open(dest, "wb") as f:
            shutil.copyfileobj(resp.raw, f)


def fetch_qcd(
    names: list[str],
    dest: Path | str,
    base_url: str = QCD_BASE_URL,
    kappa_c: float | None = None,
    timeout: float = 60.0,
) -> list[Path]:
    """
    Download QCD matrices, unpack them into `dest` as <name>.mtx and write the
    <name>.json metadata. kappa_c comes from the matrix comments unless given.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names:
        mtx = dest / f"{name}.mtx"
        if not mtx.exists():
            archive = dest / f"{name}.tar.gz"
            _download(f"{base_url}/{name}.tar.gz", archive, timeout)
            extract_archives(dest)
            found = next(dest.rglob(f"{name}.mtx"), None)
            if found is None:
                raise ProblemError(f"archive for {name} holds no {name}.mtx")
            if found != mtx:
                found.replace(mtx)

        kc = kappa_c if kappa_c is not None else find_kappa_c(read_mm_comments(mtx))
        if kc is None:
            raise MetadataError(
                f"no kappa_c in the comments of {mtx.name}; pass it explicitly"
            )
        save_metadata(
            dest / f"{name}.json",
            {
                "name": name,
                "kappa_c": kc,
                "norm1_range": list(QCD_NORM1_RANGE),
                "norm2_range": list(QCD_NORM2_RANGE),
            },
        )
        written.append(mtx)
    return written
