"""Implicit graph fairing: solve (I + s*L) H = X by damped Jacobi iteration.

For a loop-free graph the system matrix has the constant diagonal (1+s), so
one damped-Jacobi sweep collapses to

    H' = H - omega*H + (1-alpha)*omega*A_hat@H + alpha*omega*X,

with alpha = 1/(1+s) and A_hat = I - L. The iteration matrix is
M = (1-omega)*I + (1-alpha)*omega*A_hat; since the eigenvalues of A_hat lie
in [-1, 1], every omega in (0, 2/(2-alpha)) gives spectral radius < 1.
A dense LU solve acts as the independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

DEFAULT_OMEGA = 1.0
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 10_000
_DIVERGENCE_FACTOR = 1e6
_DIRECT_SIZE_LIMIT = 10_000
_SPECTRUM_SIZE_LIMIT = 512


class ConvergenceError(RuntimeError):
    """Solver failed to reach the requested tolerance."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class FairingProblem:
    """One fairing system: Laplacian L (n x n), signal X (n x f), scale s.

    alpha is always 1/(1+s); passing it explicitly only cross-checks the
    caller's value. omega >= 0 is accepted so that divergent settings can be
    diagnosed; the guaranteed-convergent range is (0, omega_upper_bound).
    """

    laplacian: np.ndarray
    signal: np.ndarray
    s: float
    omega: float = DEFAULT_OMEGA
    alpha: float = None

    def __post_init__(self):
        self.laplacian = np.asarray(self.laplacian, dtype=np.float64)
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.laplacian.ndim != 2 or self.laplacian.shape[0] != self.laplacian.shape[1]:
            raise ShapeError(f"laplacian must be square, got {self.laplacian.shape}")
        if self.signal.ndim != 2 or self.signal.shape[0] != self.laplacian.shape[0]:
            raise ShapeError(
                f"signal rows {self.signal.shape} do not match laplacian {self.laplacian.shape}")
        if not self.s > 0:
            raise ValueError(f"smoothing scale s must be positive, got {self.s}")
        expected_alpha = 1.0 / (1.0 + self.s)
        if self.alpha is None:
            self.alpha = expected_alpha
        elif abs(self.alpha - expected_alpha) > 1e-15:
            raise ValueError(f"alpha={self.alpha} inconsistent with s={self.s}")
        if self.omega < 0:
            raise ValueError(f"relaxation factor omega must be >= 0, got {self.omega}")
        self.norm_adj = np.eye(self.laplacian.shape[0]) - self.laplacian

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]

    @property
    def omega_upper_bound(self) -> float:
        return 2.0 / (2.0 - self.alpha)

    @property
    def in_convergence_range(self) -> bool:
        return 0.0 < self.omega < self.omega_upper_bound

    def system_matrix(self) -> np.ndarray:
        return np.eye(self.n) + self.s * self.laplacian

    def relative_residual(self, h: np.ndarray) -> float:
        x_norm = np.linalg.norm(self.signal)
        res = np.linalg.norm(self.system_matrix() @ h - self.signal)
        return res if x_norm == 0.0 else res / x_norm


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    final_residual: float


def jacobi_step(problem: FairingProblem, h: np.ndarray) -> np.ndarray:
    """One damped sweep: H - omega*H + (1-alpha)*omega*A_hat@H + alpha*omega*X."""
    if h.shape != problem.signal.shape:
        raise ShapeError(f"iterate shape {h.shape} does not match signal {problem.signal.shape}")
    w = problem.omega
    a = problem.alpha
    return h - w * h + (1.0 - a) * w * (problem.norm_adj @ h) + a * w * problem.signal


def solve_jacobi(problem: FairingProblem, tol: float = DEFAULT_TOL,
                 max_iters: int = DEFAULT_MAX_ITERS) -> SolveReport:
    """Iterate from H0 = X until the relative residual drops below tol.

    Raises ConvergenceError if the residual blows up (divergent omega) or the
    iteration budget runs out.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if problem.omega == 0:
        raise ValueError("omega=0 never makes progress; pick omega > 0")
    h = problem.signal.copy()
    res = problem.relative_residual(h)
    initial = max(res, 1.0)
    iters = 0
    while res > tol:
        if iters >= max_iters:
            raise ConvergenceError("weighted Jacobi did not converge", iters, res)
        h = jacobi_step(problem, h)
        res = problem.relative_residual(h)
        iters += 1
        if not np.isfinite(res) or res > _DIVERGENCE_FACTOR * initial:
            raise ConvergenceError("weighted Jacobi diverged", iters, res)
    return SolveReport(solution=h, iterations=iters, final_residual=res)


def solve_direct(problem: FairingProblem) -> np.ndarray:
    """Dense LU solve of (I + s*L) H = X; the oracle path."""
    if problem.n > _DIRECT_SIZE_LIMIT:
        raise ValueError(f"direct solve limited to n <= {_DIRECT_SIZE_LIMIT}")
    # s > 0 with PSD L makes the system symmetric positive definite.
    return np.linalg.solve(problem.system_matrix(), problem.signal)


def iteration_spectral_radius(problem: FairingProblem) -> float:
    """Spectral radius of M = (1-omega)*I + (1-alpha)*omega*A_hat."""
    if problem.n > _SPECTRUM_SIZE_LIMIT:
        raise ValueError(f"spectral radius limited to n <= {_SPECTRUM_SIZE_LIMIT}")
    m = (1.0 - problem.omega) * np.eye(problem.n) \
        + (1.0 - problem.alpha) * problem.omega * problem.norm_adj
    return float(np.max(np.abs(np.linalg.eigvalsh(m))))


def observed_decay_rate(problem: FairingProblem, max_iters: int = 600,
                        floor: float = 1e-10, seed: int = 0) -> float:
    """Measured geometric error-decay rate of the Jacobi iteration.

    Starts from a seeded random iterate so the error generically excites
    every mode of the iteration matrix (the H0 = X start used by the solver
    has no component along the graph's kernel mode, hiding the slowest rate).
    Discards the first third of the run as burn-in, fits one geometric rate
    to the rest, and stops before the error reaches the rounding plateau.
    """
    h_star = solve_direct(problem)
    rng = np.random.Generator(np.random.PCG64(seed))
    h = h_star + rng.standard_normal(problem.signal.shape)
    err0 = np.linalg.norm(h - h_star)
    errs = [err0]
    for _ in range(max_iters):
        h = jacobi_step(problem, h)
        err = np.linalg.norm(h - h_star)
        errs.append(err)
        if err < floor * err0 or err == 0.0:
            break
    last = len(errs) - 1
    burn = max(1, last // 3)
    if last <= burn:
        raise ValueError("too few iterations to measure a rate")
    return float((errs[last] / errs[burn]) ** (1.0 / (last - burn)))
