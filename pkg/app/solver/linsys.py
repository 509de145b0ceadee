"""Sparse assembly and direct solution of the coupled block system"""
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, TextIO, Tuple, Union
import logging

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.sparse.linalg import splu

from app.solver.errors import LinearSystemError, SingularSystemError

logger = logging.getLogger(__name__)

RESIDUAL_WARNING = 1e-8
PIVOT_TOLERANCE = 1e-13
# largest system whose breakdown column is located by a dense pivoted QR
DENSE_PIVOT_LIMIT = 3000


@dataclass
class TripletList:
    """Accumulates (row, col, value) entries and a dense right-hand side"""
    n_rows: int
    n_cols: int
    rows: List[np.ndarray] = field(default_factory=list)
    cols: List[np.ndarray] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)
    rhs: np.ndarray = None

    def __post_init__(self):
        if self.rhs is None:
            self.rhs = np.zeros(self.n_rows)

    def add(self, rows: np.ndarray, cols: np.ndarray, block: np.ndarray) -> None:
        """Scatter dense blocks; rows (..., a), cols (..., b), block (..., a, b)"""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        block = np.asarray(block, dtype=float)
        r = np.broadcast_to(rows[..., :, None], block.shape)
        c = np.broadcast_to(cols[..., None, :], block.shape)
        # negative ids mark dofs that do not exist (Dirichlet faces)
        keep = (r >= 0) & (c >= 0)
        self.add_entries(r[keep], c[keep], block[keep])

    def add_entries(self, rows: np.ndarray, cols: np.ndarray, values: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.intp).ravel()
        cols = np.asarray(cols, dtype=np.intp).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if rows.size == 0:
            return
        self.rows.append(rows)
        self.cols.append(cols)
        self.values.append(values)

    def add_rhs(self, rows: np.ndarray, values: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.intp).ravel()
        values = np.asarray(values, dtype=float).ravel()
        keep = rows >= 0
        np.add.at(self.rhs, rows[keep], values[keep])

    def transpose(self) -> "TripletList":
        """Matrix part transposed; the right-hand side is dropped"""
        t = TripletList(self.n_cols, self.n_rows)
        r, c, v = self.arrays()
        t.add_entries(c, r, v)
        return t

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.rows:
            empty = np.zeros(0, dtype=np.intp)
            return empty, empty, np.zeros(0)
        return np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.values)

    def __len__(self) -> int:
        return sum(len(r) for r in self.rows)


Triplets = Union[TripletList, Sequence[Tuple[int, int, float]]]


def to_compressed(triplets: Triplets, n: int, n_cols: int = None) -> sp.csr_matrix:
    """Sum duplicates into a row-sorted CSR matrix"""
    n_cols = n if n_cols is None else n_cols
    if isinstance(triplets, TripletList):
        rows, cols, values = triplets.arrays()
    else:
        entries = list(triplets)
        rows = np.array([t[0] for t in entries], dtype=np.intp)
        cols = np.array([t[1] for t in entries], dtype=np.intp)
        values = np.array([t[2] for t in entries], dtype=float)
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n_cols):
        raise LinearSystemError(f"triplet index outside the {n}x{n_cols} matrix")
    matrix = sp.coo_matrix((values, (rows, cols)), shape=(n, n_cols)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def _original_column(lu, position: int) -> int:
    """Column of A that sits at position of the factored A Pc"""
    return int(np.argsort(lu.perm_c)[position])


def _singular_pivot(A: sp.spmatrix) -> int:
    """Column where the factorization of A breaks down, -1 when none is found"""
    n = A.shape[0]
    if n <= DENSE_PIVOT_LIMIT:
        _, r, perm = scipy.linalg.qr(A.toarray(), pivoting=True, mode="economic")
        diag = np.abs(np.diag(r))
        scale = diag[0] if diag.size and diag[0] > 0 else 1.0
        deficient = np.flatnonzero(diag <= PIVOT_TOLERANCE * scale * n)
        return int(perm[deficient[0]]) if deficient.size else -1

    # structurally singular: a column with no row in the maximum matching
    pattern = sp.csr_matrix(A, copy=True)
    pattern.eliminate_zeros()
    matched = maximum_bipartite_matching(pattern, perm_type="row")
    unmatched = np.flatnonzero(matched < 0)
    if unmatched.size:
        return int(unmatched[0])

    # numerically singular: smallest pivot of a slightly shifted factorization
    shift = PIVOT_TOLERANCE * max(infinity_norm(A), 1.0)
    try:
        lu = splu(sp.csc_matrix(A) + shift * sp.identity(n, format="csc"))
    except RuntimeError:
        return -1
    return _original_column(lu, int(np.argmin(np.abs(lu.U.diagonal()))))


def solve_direct(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Sparse LU solve; raises SingularSystemError with the failing column"""
    n = A.shape[0]
    if A.shape[1] != n:
        raise LinearSystemError(f"matrix must be square, got {A.shape}")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != n:
        raise LinearSystemError(f"right-hand side has {b.shape[0]} entries for a {n}x{n} matrix")
    if n == 0:
        return np.zeros(0)

    try:
        lu = splu(sp.csc_matrix(A))
    except RuntimeError as e:
        raise SingularSystemError(f"sparse LU failed: {e}", _singular_pivot(A))

    u_diag = np.abs(lu.U.diagonal())
    scale = max(u_diag.max(), 1.0e-300)
    tiny = np.flatnonzero(u_diag <= PIVOT_TOLERANCE * scale)
    if tiny.size:
        raise SingularSystemError("numerically singular factorization", _original_column(lu, int(tiny[0])))

    x = lu.solve(b)
    residual = relative_residual(A, x, b)
    if residual > RESIDUAL_WARNING:
        logger.warning(f"Direct solve residual {residual:.3e} above {RESIDUAL_WARNING:.0e} (n={n})")
    else:
        logger.debug(f"Direct solve n={n}, nnz={A.nnz}, residual {residual:.3e}")
    return x


def relative_residual(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / norm_b) if norm_b > 0 else float(r)


def infinity_norm(A: sp.spmatrix) -> float:
    if A.nnz == 0:
        return 0.0
    return float(np.abs(A).sum(axis=1).max())


def symmetry_defect(A: Union[sp.spmatrix, np.ndarray]) -> float:
    """max |A_ij - A_ji| / ||A||_inf"""
    A = sp.csr_matrix(A)
    norm = infinity_norm(A)
    if norm == 0.0:
        return 0.0
    diff = abs(A - A.T)
    return float(diff.max() / norm) if diff.nnz else 0.0


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric elimination of prescribed dofs; rows and columns become identity"""
    dofs = np.asarray(dofs, dtype=np.intp)
    values = np.asarray(values, dtype=float)
    n = A.shape[0]
    if dofs.size == 0:
        return sp.csr_matrix(A), np.asarray(b, dtype=float).copy()
    lifted = np.zeros(n)
    lifted[dofs] = values
    b = np.asarray(b, dtype=float) - A @ lifted
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    b[dofs] = values
    return A, b


@dataclass(frozen=True)
class CoupledSystem:
    """[K_CG, K_I; K_I^T, K_HDG] with CG dofs first, then trace dofs"""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_cg: int
    n_trace: int

    @property
    def size(self) -> int:
        return self.n_cg + self.n_trace

    def block(self, name: str) -> sp.csr_matrix:
        cg = slice(0, self.n_cg)
        trace = slice(self.n_cg, self.size)
        slices = {
            "cg": (cg, cg),
            "coupling": (cg, trace),
            "coupling_t": (trace, cg),
            "hdg": (trace, trace),
        }
        rows, cols = slices[name]
        return self.matrix[rows, cols]

    def with_dirichlet(self, dofs: np.ndarray, values: np.ndarray) -> "CoupledSystem":
        """Eliminate prescribed CG dofs; the block layout is unchanged"""
        matrix, rhs = apply_dirichlet(self.matrix, self.rhs, dofs, values)
        return CoupledSystem(matrix, rhs, self.n_cg, self.n_trace)

    def solve(self) -> np.ndarray:
        return solve_direct(self.matrix, self.rhs)


BLOCK_NAMES = ("cg", "coupling", "coupling_t", "hdg")


def block_system(n_cg: int, n_trace: int, blocks: Iterable[Tuple[str, TripletList]]) -> CoupledSystem:
    """Merge named blocks in local numbering into [K_CG, K_I; K_I^T, K_HDG].

    Right-hand sides of the "cg" and "hdg" blocks are summed into the
    matching half of the global vector.
    """
    n = n_cg + n_trace
    offsets = {"cg": (0, 0), "coupling": (0, n_cg), "coupling_t": (n_cg, 0), "hdg": (n_cg, n_cg)}
    merged = TripletList(n, n)
    rhs = np.zeros(n)
    for name, t in blocks:
        if name not in offsets:
            raise LinearSystemError(f"unknown block {name!r}; expected one of {BLOCK_NAMES}")
        row0, col0 = offsets[name]
        r, c, v = t.arrays()
        merged.add_entries(r + row0, c + col0, v)
        if name in ("cg", "hdg"):
            rhs[row0: row0 + t.n_rows] += t.rhs
    return CoupledSystem(to_compressed(merged, n), rhs, n_cg, n_trace)


def dump(A: sp.spmatrix, stream: TextIO) -> None:
    """Write 'i j value' lines, one per stored entry"""
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        stream.write(f"{i} {j} {v:.17g}\n")
