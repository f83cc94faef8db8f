"""Terminal consensus gain synthesis.

Solves the disc-modified algebraic Riccati equation

    P = -(1 - delta^2) A'PB (B'PB + I)^{-1} B'PA + A'PA + Q

by fixed-point iteration, derives the consensus gain
K = (B'PB + I)^{-1} B'PA, and verifies that A - (1 - sigma) B K stays Schur
stable for complex sigma sampled inside the disc of radius delta.  The gain
sign is chosen so that A - BK is the stabilized direction; the numerical
disc verifier is the arbiter of that convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DiscUnstable, NonConvergence, NotPositiveDefinite, SingularPinnedDegree
from .plant_models import SystemModel
from .topology import Topology, normalized_pinned_laplacian, spectral_radius_pinned

MARE_CHANGE_TOL = 1e-13
MARE_MAX_ITER = 300_000


@dataclass(frozen=True)
class DiscReport:
    """Outcome of sampling the stability disc."""

    max_spectral_radius: float
    worst_sigma: complex
    sample_count: int

    @property
    def stable(self) -> bool:
        return self.max_spectral_radius < 1.0


@dataclass(frozen=True)
class DeltaInterval:
    """Admissible open interval for the disc radius delta."""

    lo: float
    hi: float
    warning: str | None = None

    @property
    def empty(self) -> bool:
        return self.lo >= self.hi

    def contains(self, delta: float) -> bool:
        return self.lo < delta < self.hi

    def default_delta(self) -> float:
        """Geometric midpoint, falling back to hi/2 when lo is zero."""
        if self.empty:
            raise NonConvergence("admissible interval is empty")
        if self.lo <= 0.0:
            return self.hi / 2.0
        return float(np.sqrt(self.lo * self.hi))


@dataclass(frozen=True)
class TerminalGain:
    """Riccati solution P, gain K, and the parameters that produced them."""

    riccati_solution: np.ndarray
    gain: np.ndarray
    design_weight: np.ndarray
    disc_radius: float
    mare_residual: float
    disc_report: DiscReport


def _mare_rhs(P: np.ndarray, A: np.ndarray, B: np.ndarray, Q: np.ndarray, delta: float) -> np.ndarray:
    btpb = B.T @ P @ B
    inner = np.linalg.solve(btpb + np.eye(btpb.shape[0]), B.T @ P @ A)
    return -(1.0 - delta * delta) * (A.T @ P @ B) @ inner + A.T @ P @ A + Q


def solve_mare(
    model: SystemModel,
    Q,
    delta: float,
    change_tol: float = MARE_CHANGE_TOL,
    max_iter: int = MARE_MAX_ITER,
) -> np.ndarray:
    """Fixed-point solution of the disc-modified Riccati equation.

    Iterates P <- RHS(P) from P_0 = Q with symmetrization each step,
    stopping when the relative Frobenius change drops below ``change_tol``.

    Raises
    ------
    NonConvergence
        Iteration budget exhausted or the iterates diverged; usually the
        disc radius lies outside its admissible interval.
    NotPositiveDefinite
        The converged solution lost positive definiteness.
    """
    A, B = model.A, model.B
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        P_next = _mare_rhs(P, A, B, Q, delta)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e150:
            raise NonConvergence("Riccati iteration diverged")
        denom = max(np.linalg.norm(P_next, "fro"), 1.0)
        change = np.linalg.norm(P_next - P, "fro") / denom
        P = P_next
        if change < change_tol:
            break
    else:
        raise NonConvergence(
            f"Riccati iteration did not converge within {max_iter} steps"
        )
    if np.any(np.linalg.eigvalsh(P) <= 0.0):
        raise NotPositiveDefinite("Riccati solution is not positive definite")
    return P


def mare_residual(model: SystemModel, Q, P: np.ndarray, delta: float) -> float:
    """Relative Frobenius defect of the fixed-point equation."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    defect = _mare_rhs(P, model.A, model.B, Q, delta) - P
    return float(np.linalg.norm(defect, "fro") / max(np.linalg.norm(P, "fro"), 1e-300))


def terminal_gain(P: np.ndarray, model: SystemModel) -> np.ndarray:
    """Consensus gain K = (B'PB + I)^{-1} B'PA."""
    B = model.B
    btpb = B.T @ P @ B
    return np.linalg.solve(btpb + np.eye(btpb.shape[0]), B.T @ P @ model.A)


def verify_schur_disc(
    model: SystemModel,
    K: np.ndarray,
    delta: float,
    sample_count: int = 192,
) -> DiscReport:
    """Sample spectral radii of A - (1 - sigma) B K over the disc.

    Sigma is drawn from concentric rings of radius 0, delta/2, and
    0.99 delta with uniformly spaced phases.  Returns the worst case and
    raises :class:`DiscUnstable` when any sample reaches radius 1.
    """
    if sample_count < 64:
        raise ValueError("sample_count must be at least 64")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    per_ring = sample_count // 2  # plus one sample at sigma = 0
    phases = 2.0 * np.pi * np.arange(per_ring) / max(per_ring, 1)
    sigmas = [0.0 + 0.0j]
    for radius in (0.5 * delta, 0.99 * delta):
        sigmas.extend(radius * np.exp(1j * phases))
    worst = -np.inf
    worst_sigma = 0.0 + 0.0j
    BK = model.B @ K
    for sigma in sigmas:
        eig = np.linalg.eigvals(model.A - (1.0 - sigma) * BK)
        radius = float(np.max(np.abs(eig)))
        if radius > worst:
            worst = radius
            worst_sigma = complex(sigma)
    report = DiscReport(
        max_spectral_radius=worst, worst_sigma=worst_sigma, sample_count=len(sigmas)
    )
    if not report.stable:
        raise DiscUnstable(
            f"spectral radius {worst:.6f} >= 1 at sigma {worst_sigma:.4f}", report
        )
    return report


def admissible_delta_interval(topology: Topology, model: SystemModel) -> DeltaInterval:
    """Open interval (lo, hi) of admissible disc radii.

    ``lo`` is the spectral radius of D_B^{-1} A; ``hi`` is 1 when no
    eigenvalue of A exceeds magnitude 1, else the reciprocal product of
    unstable eigenvalue magnitudes.  A warning is attached when A is
    unstable and B has rank other than one, since the synthesis guarantee
    for that case is only stated for single-column B.
    """
    lo = spectral_radius_pinned(topology)
    eig = np.linalg.eigvals(model.A)
    mags = np.abs(eig)
    warning = None
    if np.all(mags <= 1.0):
        hi = 1.0
    else:
        hi = float(1.0 / np.prod(mags[mags > 1.0]))
        if np.linalg.matrix_rank(model.B) != 1:
            warning = "unstable A with rank(B) != 1 is outside the synthesis guarantee"
    return DeltaInterval(lo=lo, hi=hi, warning=warning)


@dataclass(frozen=True)
class StackedTerminalMatrix:
    """Stacked terminal-error propagation map and its spectral radius."""

    matrix: np.ndarray
    spectral_radius: float


def stacked_terminal_matrix(
    topology: Topology, model: SystemModel, K: np.ndarray
) -> StackedTerminalMatrix:
    """Abar = I_N (x) A - D_B^{-1} L_B (x) BK.

    The stacked terminal errors of all followers evolve by left
    multiplication with this matrix; its spectral radius below one is the
    terminal consensus certificate.
    """
    try:
        norm_lap = normalized_pinned_laplacian(topology)
    except SingularPinnedDegree:
        raise
    K = np.atleast_2d(np.asarray(K, dtype=float))
    N = topology.follower_count
    abar = np.kron(np.eye(N), model.A) - np.kron(norm_lap, model.B @ K)
    radius = float(np.max(np.abs(np.linalg.eigvals(abar))))
    return StackedTerminalMatrix(matrix=abar, spectral_radius=radius)


def synthesize(
    model: SystemModel,
    Q,
    delta: float,
    sample_count: int = 192,
    residual_tol: float = 1e-10,
) -> TerminalGain:
    """Full synthesis: solve, derive the gain, and gate on the verifiers."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P = solve_mare(model, Q, delta)
    residual = mare_residual(model, Q, P, delta)
    if residual > residual_tol:
        raise NonConvergence(
            f"Riccati residual {residual:.3e} above tolerance {residual_tol:.1e}"
        )
    K = terminal_gain(P, model)
    report = verify_schur_disc(model, K, delta, sample_count=sample_count)
    return TerminalGain(
        riccati_solution=P,
        gain=K,
        design_weight=Q,
        disc_radius=float(delta),
        mare_residual=residual,
        disc_report=report,
    )
