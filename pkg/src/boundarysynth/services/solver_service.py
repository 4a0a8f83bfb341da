import threading
from typing import Literal, Optional, Tuple

import numpy as np
import scipy.sparse as sps
from aws_lambda_powertools import Logger
from models.linalg import SolveMethod, SolveReport, SolverOptions
from numpy.typing import NDArray
from scipy.sparse.linalg import SuperLU, cg, splu
from utils.errors import SolverError

logger = Logger()

CG_ITERATION_FACTOR = 20
SYMMETRY_TOLERANCE = 1e-14
# CG iterates to tol / CG_RESIDUAL_SLACK so the true residual, which drifts from the recursive one, stays below tol
CG_RESIDUAL_SLACK = 10.0


def is_symmetric(A: sps.csr_matrix, rtol: float = SYMMETRY_TOLERANCE) -> bool:
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    difference = A - A.T
    return bool(difference.nnz == 0 or abs(difference).max() <= rtol * scale)


def _relative_residuals(A: sps.csr_matrix, x: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    r = np.atleast_2d((A @ x - b).T)
    norms = np.linalg.norm(np.atleast_2d(b.T), axis=1)
    return np.linalg.norm(r, axis=1) / np.where(norms > 0.0, norms, 1.0)


class LinearSolver:
    """Solver bound to one sparse matrix; the factorization is built lazily, once, under a lock.

    ``solve`` handles A x = b and ``solve_transpose`` handles A^T x = b, each for one right-hand side or a
    column block of them.
    """

    def __init__(self, A: sps.spmatrix, options: Optional[SolverOptions] = None) -> None:
        self.A = sps.csr_matrix(A, dtype=np.float64)
        self.A.sum_duplicates()
        self.A.sort_indices()
        if self.A.shape[0] != self.A.shape[1]:
            raise SolverError(f"Matrix must be square, got shape {self.A.shape}")
        self.options = options or SolverOptions()
        self._lock = threading.Lock()
        self._lu: Optional[SuperLU] = None
        self._transpose: Optional[sps.csr_matrix] = None

    @property
    def size(self) -> int:
        return int(self.A.shape[0])

    @property
    def method(self) -> SolveMethod:
        if self.options.method == "auto":
            return SolveMethod.DIRECT if self.size <= self.options.direct_limit else SolveMethod.CG
        return SolveMethod(self.options.method)

    def _factorization(self) -> SuperLU:
        with self._lock:
            if self._lu is None:
                self._lu = splu(self.A.tocsc())
                logger.debug(f"Factorized {self.size}x{self.size} system")
            return self._lu

    def _transposed(self) -> sps.csr_matrix:
        with self._lock:
            if self._transpose is None:
                self._transpose = self.A.T.tocsr()
            return self._transpose

    def solve(self, b: NDArray[np.float64]) -> Tuple[NDArray[np.float64], SolveReport]:
        return self._solve(np.asarray(b, dtype=np.float64), "N")

    def solve_transpose(self, b: NDArray[np.float64]) -> Tuple[NDArray[np.float64], SolveReport]:
        return self._solve(np.asarray(b, dtype=np.float64), "T")

    def _solve(self, b: NDArray[np.float64], trans: Literal["N", "T"]) -> Tuple[NDArray[np.float64], SolveReport]:
        if b.ndim not in (1, 2) or b.shape[0] != self.size:
            raise SolverError(f"Right-hand side of shape {b.shape} does not match a {self.size}x{self.size} matrix")
        method = self.method
        if not np.any(b):
            return np.zeros_like(b), SolveReport(iterations=0, final_residual=0.0, method=method)
        if method is SolveMethod.DIRECT:
            return self._solve_direct(b, trans)
        return self._solve_cg(b, trans)

    def _solve_direct(
        self, b: NDArray[np.float64], trans: Literal["N", "T"]
    ) -> Tuple[NDArray[np.float64], SolveReport]:
        lu = self._factorization()
        operator = self.A if trans == "N" else self._transposed()
        x = lu.solve(b, trans=trans)
        tol = self.options.tol
        for step in range(self.options.refinement_steps + 1):
            residual = float(_relative_residuals(operator, x, b).max())
            if residual <= tol:
                return x, SolveReport(iterations=step, final_residual=residual, method=SolveMethod.DIRECT)
            if step < self.options.refinement_steps:
                x = x + lu.solve(b - operator @ x, trans=trans)
        report = SolveReport(
            iterations=self.options.refinement_steps, final_residual=residual, method=SolveMethod.DIRECT
        )
        raise SolverError(f"Direct solve residual {residual:.3e} above tolerance {tol:.1e}", report)

    def _solve_cg(self, b: NDArray[np.float64], trans: Literal["N", "T"]) -> Tuple[NDArray[np.float64], SolveReport]:
        operator = self.A if trans == "N" else self._transposed()
        if not is_symmetric(operator):
            raise SolverError("Conjugate gradients requires a symmetric matrix")
        diagonal = operator.diagonal()
        if np.any(diagonal <= 0.0):
            raise SolverError("Jacobi preconditioner needs a positive diagonal")
        preconditioner = sps.diags(1.0 / diagonal)
        max_iterations = CG_ITERATION_FACTOR * self.size
        tol = self.options.tol
        rtol = tol / CG_RESIDUAL_SLACK

        columns = b.reshape(self.size, -1)
        solution = np.zeros_like(columns)
        total_iterations = 0
        worst = 0.0
        for k in range(columns.shape[1]):
            rhs = columns[:, k]
            if not np.any(rhs):
                continue
            counter = [0]

            def count(_: NDArray[np.float64], counter: list = counter) -> None:
                counter[0] += 1

            x, info = cg(operator, rhs, rtol=rtol, atol=0.0, maxiter=max_iterations, M=preconditioner, callback=count)
            residual = float(np.linalg.norm(operator @ x - rhs) / np.linalg.norm(rhs))
            total_iterations = max(total_iterations, counter[0])
            worst = max(worst, residual)
            if info != 0 or residual > tol:
                report = SolveReport(iterations=counter[0], final_residual=residual, method=SolveMethod.CG)
                raise SolverError(
                    f"CG stopped after {counter[0]} iterations with residual {residual:.3e} (tolerance {tol:.1e})",
                    report,
                )
            solution[:, k] = x
        report = SolveReport(iterations=total_iterations, final_residual=worst, method=SolveMethod.CG)
        logger.debug("CG solve finished", extra={"iterations": total_iterations, "residual": worst})
        return solution.reshape(b.shape), report


def solve(
    A: sps.spmatrix, b: NDArray[np.float64], tol: float = 1e-12, method: str = "auto"
) -> Tuple[NDArray[np.float64], SolveReport]:
    return LinearSolver(A, SolverOptions(tol=tol, method=method)).solve(b)


def solve_transpose(
    A: sps.spmatrix, b: NDArray[np.float64], tol: float = 1e-12, method: str = "auto"
) -> Tuple[NDArray[np.float64], SolveReport]:
    """Solve A^T x = b."""
    return LinearSolver(A, SolverOptions(tol=tol, method=method)).solve_transpose(b)
