"""Data ingestion, sample covariance, and bit-stable text serialization.

All numeric emission uses 17 significant digits so that emitted files round
trip to identical float64 values.  Every output file begins with comment
lines echoing the package version, the command line, and the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError
from .kernels import LowRankComponent, SparseComponent, SymMatrix

__all__ = [
    "DatasetSpec",
    "LoadedMatrix",
    "load_matrix",
    "sample_covariance",
    "format_value",
    "write_header",
    "save_matrix_csv",
    "save_fit",
    "load_fit",
    "save_study_csv",
]

FORMAT = "%.17g"


def format_value(x: float) -> str:
    return FORMAT % float(x)


@dataclass(frozen=True)
class DatasetSpec:
    """How to read an observations-by-variables text matrix."""

    path: str
    has_header: bool = False
    delimiter: str = ","
    demean: bool = False


@dataclass(frozen=True)
class LoadedMatrix:
    values: np.ndarray
    column_means: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def load_matrix(spec: DatasetSpec) -> LoadedMatrix:
    """Parse a rectangular numeric matrix; report shape and column means.

    Raises InputError with a line number on ragged rows, non-numeric cells,
    or fewer than 2 data rows.  Comment lines starting with '#' are skipped.
    """
    rows: list[list[float]] = []
    width = None
    try:
        handle = open(spec.path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {spec.path!r}: {exc}") from None
    with handle:
        reader = csv.reader(handle, delimiter=spec.delimiter)
        skip_header = spec.has_header
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if skip_header:
                skip_header = False
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise InputError(f"{spec.path}:{lineno}: non-numeric cell ({exc})") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise InputError(
                    f"{spec.path}:{lineno}: ragged row (expected {width} cells, got {len(values)})"
                )
            rows.append(values)
    if len(rows) < 2:
        raise InputError(f"{spec.path}: need at least 2 data rows, got {len(rows)}")
    x = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError(f"{spec.path}: matrix has non-finite entries")
    means = x.mean(axis=0)
    if spec.demean:
        x = x - means
    return LoadedMatrix(values=x, column_means=means)


def sample_covariance(x: np.ndarray, convention: str = "unbiased") -> SymMatrix:
    """Sample covariance of demeaned data: X'X/(n-1) or X'X/n."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("need an n x p matrix with n >= 2")
    n = x.shape[0]
    if convention == "unbiased":
        denom = n - 1
    elif convention == "ml":
        denom = n
    else:
        raise InputError(f"unknown covariance convention {convention!r}")
    return SymMatrix(x.T @ x / denom)


def write_header(handle, command: str, seed=None, extra: dict | None = None) -> None:
    from . import __version__

    handle.write(f"# factorcov {__version__}\n")
    handle.write(f"# command: {command}\n")
    handle.write(f"# seed: {'none' if seed is None else seed}\n")
    for key, value in (extra or {}).items():
        handle.write(f"# {key}: {value}\n")


def save_matrix_csv(path: str, matrix: np.ndarray, command: str = "", seed=None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w") as handle:
        write_header(handle, command, seed)
        for row in matrix:
            handle.write(",".join(format_value(v) for v in row))
            handle.write("\n")


def _write_scalars(handle, scalars: dict) -> None:
    for key, value in scalars.items():
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = format_value(value)
        else:
            rendered = str(value)
        handle.write(f"{key}={rendered}\n")


def save_fit(
    path: str,
    kind: str,
    low_rank: LowRankComponent,
    sparse: SparseComponent,
    scalars: dict,
    command: str = "",
    seed=None,
    dense_blocks: dict | None = None,
) -> None:
    """Serialize a fitted decomposition as plain text.

    Layout: key=value header block, then ``[eigvals]`` and ``[basis]`` for
    the low-rank part, ``[sparse]`` as 1-based (i, j, value) triplets over
    the diagonal plus the nonzero upper off-diagonal entries, and one
    ``[dense NAME]`` block per extra dense matrix.
    """
    p = sparse.dim
    with open(path, "w") as handle:
        write_header(handle, command, seed)
        _write_scalars(handle, {"kind": kind, "p": p, "r": low_rank.rank, **scalars})
        handle.write("[eigvals]\n")
        if low_rank.rank:
            handle.write(" ".join(format_value(v) for v in low_rank.eigvals))
        handle.write("\n[basis]\n")
        for row in low_rank.basis:
            handle.write(" ".join(format_value(v) for v in row))
            handle.write("\n")
        handle.write("[sparse]\n")
        a = sparse.matrix.values
        for i in range(p):
            handle.write(f"{i + 1} {i + 1} {format_value(a[i, i])}\n")
        for i, j in sorted(sparse.support):
            handle.write(f"{i + 1} {j + 1} {format_value(a[i, j])}\n")
        for name, block in (dense_blocks or {}).items():
            handle.write(f"[dense {name}]\n")
            for row in np.asarray(block, dtype=np.float64):
                handle.write(" ".join(format_value(v) for v in row))
                handle.write("\n")
        handle.write("[end]\n")


@dataclass(frozen=True)
class LoadedFit:
    kind: str
    scalars: dict
    low_rank: LowRankComponent
    sparse: SparseComponent
    dense_blocks: dict = field(default_factory=dict)


def load_fit(path: str) -> LoadedFit:
    """Parse a fit file written by :func:`save_fit`."""
    scalars: dict = {}
    sections: dict[str, list[str]] = {}
    current = None
    try:
        handle = open(path)
    except OSError as exc:
        raise InputError(f"cannot open {path!r}: {exc}") from None
    with handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() and current is None:
                continue
            if line.startswith("#"):
                continue
            if line.startswith("["):
                name = line.strip().strip("[]")
                if name == "end":
                    current = None
                    continue
                current = name
                sections[current] = []
                continue
            if current is not None:
                sections[current].append(line)
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            scalars[key.strip()] = value.strip()

    def _require(name: str) -> list[str]:
        if name not in sections:
            raise InputError(f"{path}: missing [{name}] section")
        return sections[name]

    try:
        p = int(scalars["p"])
        r = int(scalars["r"])
        kind = scalars["kind"]
    except KeyError as exc:
        raise InputError(f"{path}: missing required scalar {exc}") from None

    eig_lines = [ln for ln in _require("eigvals") if ln.strip()]
    eigvals = np.array(
        [float(v) for ln in eig_lines for v in ln.split()], dtype=np.float64
    )
    basis_rows = [ln for ln in _require("basis") if ln.strip()]
    if r == 0:
        basis = np.zeros((p, 0))
    else:
        basis = np.array([[float(v) for v in ln.split()] for ln in basis_rows])
        if basis.shape != (p, r):
            raise InputError(f"{path}: basis block has shape {basis.shape}, expected {(p, r)}")
    if eigvals.shape != (r,):
        raise InputError(f"{path}: eigvals block has length {eigvals.size}, expected {r}")
    low_rank = LowRankComponent(basis=basis, eigvals=eigvals)

    s = np.zeros((p, p))
    for ln in _require("sparse"):
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 3:
            raise InputError(f"{path}: bad sparse triplet {ln!r}")
        i, j, value = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        s[i, j] = value
        s[j, i] = value
    sparse = SparseComponent(SymMatrix(s))

    dense: dict = {}
    for name, lines in sections.items():
        if name.startswith("dense "):
            label = name[len("dense "):]
            dense[label] = np.array(
                [[float(v) for v in ln.split()] for ln in lines if ln.strip()]
            )
    typed: dict = {}
    for key, value in scalars.items():
        if key in ("kind",):
            typed[key] = value
        elif value in ("true", "false"):
            typed[key] = value == "true"
        else:
            try:
                typed[key] = int(value)
            except ValueError:
                try:
                    typed[key] = float(value)
                except ValueError:
                    typed[key] = value
    return LoadedFit(kind=kind, scalars=typed, low_rank=low_rank, sparse=sparse,
                     dense_blocks=dense)


def save_study_csv(path: str, rows, command: str = "", seed=None) -> None:
    """Write aggregated study rows: setting, estimator, metric, mean, std,
    median, mad, n_ok."""
    with open(path, "w") as handle:
        write_header(handle, command, seed)
        handle.write("setting,estimator,metric,mean,std,median,mad,n_ok\n")
        for row in rows:
            handle.write(
                ",".join(
                    [
                        str(row["setting"]),
                        row["estimator"],
                        row["metric"],
                        format_value(row["mean"]),
                        format_value(row["std"]),
                        format_value(row["median"]),
                        format_value(row["mad"]),
                        str(row["n_ok"]),
                    ]
                )
            )
            handle.write("\n")
