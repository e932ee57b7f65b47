"""Stokes-projection start, semi-implicit BDF2 stepping and saddle-point solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from cvxopt import umfpack
import cvxopt

from .assembly import (Discretization, TransportField, assemble_cip, assemble_convection,
                       assemble_graddiv, assemble_load, assemble_stokes_blocks,
                       build_discretization, gradient_load)
from .config import SAMPLE_INTERVAL, RunConfig
from .mms import ManufacturedSolution, gradient_perturbation

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solve failed or produced non-finite values."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t = {t:.6g})")
        self.t = t


@dataclass(frozen=True)
class DiscreteState:
    t: float
    u: np.ndarray
    p: np.ndarray


@dataclass
class SaddleSystem:
    """Velocity block ``K``, divergence ``B``, pressure-basis integrals ``m``, free velocity dofs.

    Solved as ``[[K, -B^T], [-B, 0]]`` on the free velocity dofs with the
    pressure fixed to zero mean.
    """

    K: sp.csr_matrix
    B: sp.csr_matrix
    m: np.ndarray
    free: np.ndarray


class SaddleSolver:
    """Sparse LU (UMFPACK) for a sequence of saddle systems sharing one structure.

    The pressure constant is removed by dropping the divergence row and column of
    one pressure dof (that row is implied by the others for velocities vanishing
    on the boundary) and shifting the computed pressure to zero mean afterwards.
    A dense multiplier row would couple every pressure dof and ruin the fill.
    The symbolic factorization is computed once and reused.
    """

    def __init__(self, K: sp.csr_matrix, B: sp.csr_matrix, m: np.ndarray, free: np.ndarray,
                 pinned: int = 0):
        self.m = np.asarray(m, dtype=float)
        self.free_idx = np.flatnonzero(free)
        self.n_u = K.shape[0]
        self.n_p = B.shape[0]
        self.keep_p = np.delete(np.arange(self.n_p), pinned)
        self._k_nnz = K.nnz
        self._k_indices = K.indices
        self._k_indptr = K.indptr

        # tag entries to learn where the K and B values land in the assembled matrix
        Kt = sp.csr_matrix((np.arange(1, K.nnz + 1, dtype=float), K.indices, K.indptr),
                           shape=K.shape)
        Bc = B.tocsr()
        Bt = sp.csr_matrix((-np.arange(1, Bc.nnz + 1, dtype=float), Bc.indices, Bc.indptr),
                           shape=Bc.shape)
        idx = self.free_idx
        Kf = Kt[idx][:, idx]
        Bf = Bt[self.keep_p][:, idx]
        tagged = sp.bmat([[Kf, Bf.T], [Bf, None]], format="csc")
        tagged.sort_indices()
        tags = tagged.data.astype(np.int64)
        self._from_k = np.flatnonzero(tags > 0)
        self._k_src = tags[self._from_k] - 1
        self._template = np.zeros(len(tags))
        from_b = tags < 0
        self._template[from_b] = -Bc.data[-tags[from_b] - 1]
        self._indices = tagged.indices
        self._indptr = tagged.indptr
        self.shape = tagged.shape
        cols = np.repeat(np.arange(self.shape[1]), np.diff(self._indptr))
        self._I = cvxopt.matrix(self._indices.astype(np.int64))
        self._J = cvxopt.matrix(cols.astype(np.int64))
        self._symbolic = None
        self._numeric = None
        self._A = None
        self._matrix = None

    def _check_pattern(self, K):
        if K.nnz != self._k_nnz or not (K.indices is self._k_indices
                                        or np.array_equal(K.indices, self._k_indices)):
            raise ValueError("velocity block does not match the solver's sparsity pattern")

    def factorize(self, K: sp.csr_matrix, t: float | None = None) -> None:
        self._check_pattern(K)
        data = self._template.copy()
        data[self._from_k] = K.data[self._k_src]
        if not np.all(np.isfinite(data)):
            raise SolverError("non-finite matrix entries", t)
        self._matrix = sp.csc_matrix((data, self._indices, self._indptr), shape=self.shape)
        if self._A is None:
            self._A = cvxopt.spmatrix(cvxopt.matrix(data), self._I, self._J, self.shape)
        else:
            self._A.V = cvxopt.matrix(data)
        try:
            if self._symbolic is None:
                self._symbolic = umfpack.symbolic(self._A)
            self._numeric = umfpack.numeric(self._A, self._symbolic)
        except (ArithmeticError, ValueError) as exc:
            raise SolverError(
                f"sparse factorization failed: {exc}; shape={self.shape}, nnz={len(data)}, "
                f"max|a|={np.abs(data).max():.3e}", t) from exc

    def _lu_solve(self, rhs: np.ndarray) -> np.ndarray:
        x = cvxopt.matrix(rhs.copy())
        umfpack.solve(self._A, self._numeric, x)
        return np.array(x).ravel()

    def solve(self, rhs_u: np.ndarray, rhs_p: np.ndarray | None = None,
              t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Full-length (u, p); eliminated velocity dofs are zero, p has zero mean."""
        if self._numeric is None:
            raise RuntimeError("factorize() must be called before solve()")
        rp = np.zeros(self.n_p) if rhs_p is None else np.asarray(rhs_p, dtype=float)
        rhs = np.concatenate([rhs_u[self.free_idx], -rp[self.keep_p]])
        A = self._matrix
        x = self._lu_solve(rhs)
        scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
        res = np.linalg.norm(A @ x - rhs) / scale
        for _ in range(3):
            if res <= RESIDUAL_TOL or not np.isfinite(res):
                break
            x += self._lu_solve(rhs - A @ x)
            res = np.linalg.norm(A @ x - rhs) / scale
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution", t)
        if res > RESIDUAL_TOL:
            raise SolverError(f"relative residual {res:.3e} above {RESIDUAL_TOL:.0e}", t)
        self.last_residual = res
        u = np.zeros(self.n_u)
        nf = len(self.free_idx)
        u[self.free_idx] = x[:nf]
        p = np.zeros(self.n_p)
        p[self.keep_p] = x[nf:]
        p -= (self.m @ p) / self.m.sum()
        return u, p


def solve_saddle(system: SaddleSystem, rhs_u: np.ndarray, rhs_p: np.ndarray | None = None,
                 t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One-shot solve of ``K u - B^T p = rhs_u``, ``-B u = -rhs_p`` with zero-mean pressure."""
    solver = SaddleSolver(system.K, system.B, system.m, system.free)
    solver.factorize(system.K, t)
    return solver.solve(rhs_u, rhs_p, t)


def stokes_projection(disc: Discretization, exact: ManufacturedSolution | None = None,
                      t: float = 0.0, blocks: dict | None = None) -> DiscreteState:
    """Discrete velocity whose gradient matches the exact one on the discretely divergence-free subspace."""
    exact = exact or ManufacturedSolution()
    blocks = blocks or assemble_stokes_blocks(disc, 1.0)
    A = blocks["A"]
    system = SaddleSystem(A, blocks["B"], blocks["m"], disc.free_velocity)
    rhs = gradient_load(disc, exact.velocity_gradient, t)
    u, _ = solve_saddle(system, rhs, t=t)
    return DiscreteState(t, u, np.zeros(disc.pressure.n_dofs))


@dataclass
class StepInfo:
    t: float
    divergence: float
    cip_energy: float | None = None


class Stepper:
    """Assembled operators and per-step solves for one scheme.

    The transport in the convection and interior-penalty terms is either the
    previous velocity (first, backward-Euler step) or the extrapolation
    ``2 u^n - u^{n-1}`` (BDF2 steps).
    """

    def __init__(self, disc: Discretization, config: RunConfig, forcing=None):
        self.disc = disc
        self.config = config
        self.exact = ManufacturedSolution()
        blocks = assemble_stokes_blocks(disc, 1.0)
        self.M = blocks["M"]
        self.A = blocks["A"]
        self.B = blocks["B"]
        self.m = blocks["m"]
        self.blocks = blocks
        self.cip = config.cip_parameters()
        self.G = assemble_graddiv(disc, config.gamma_gd) if config.scheme == "th-graddiv" else None
        self.forcing = forcing or make_forcing(config, self.exact)
        self.solver: SaddleSolver | None = None

    def load(self, t: float) -> np.ndarray:
        return assemble_load(self.disc, self.forcing, t, self.config.load_degree)

    def operator(self, mass_coeff: float, transport: np.ndarray):
        """Velocity block for one step and the stabilization matrix (or None)."""
        a = TransportField(self.disc, transport)
        data = (mass_coeff * self.M.data + self.config.nu * self.A.data
                + assemble_convection(self.disc, a).data)
        S = None
        if self.config.scheme == "sv-cip":
            S = assemble_cip(self.disc, a, self.cip)
            data += S.data
        elif self.G is not None:
            data += self.G.data
        return self.disc.pattern.matrix(data), S

    def _solve(self, K, rhs, t, S):
        if self.solver is None:
            self.solver = SaddleSolver(K, self.B, self.m, self.disc.free_velocity)
        self.solver.factorize(K, t)
        u, p = self.solver.solve(rhs, t=t)
        info = StepInfo(t, self.discrete_divergence(u),
                        None if S is None else float(u @ (S @ u)))
        return DiscreteState(t, u, p), info

    def advance_euler(self, state: DiscreteState, dt: float, t_new: float):
        K, S = self.operator(1.0 / dt, state.u)
        rhs = self.M @ state.u / dt + self.load(t_new)
        return self._solve(K, rhs, t_new, S)

    def advance_bdf2(self, state_n: DiscreteState, state_nm1: DiscreteState, dt: float,
                     t_new: float):
        if not dt > 0:
            raise ValueError("time step must be positive")
        K, S = self.operator(1.5 / dt, 2 * state_n.u - state_nm1.u)
        rhs = self.M @ (4 * state_n.u - state_nm1.u) / (2 * dt) + self.load(t_new)
        return self._solve(K, rhs, t_new, S)

    def discrete_divergence(self, u: np.ndarray) -> float:
        """max |B u| relative to (1 + max |u|)."""
        return float(np.abs(self.B @ u).max() / (1.0 + np.abs(u).max()))


def make_forcing(config: RunConfig, exact: ManufacturedSolution | None = None):
    exact = exact or ManufacturedSolution()
    nu = config.nu
    extra = gradient_perturbation(config.perturbation) if config.perturbation else None

    def forcing(x, y, t):
        f = exact.forcing(x, y, t, nu)
        if extra is not None:
            f = f + extra(x, y, t)
        return f

    return forcing


@dataclass
class Trajectory:
    config: RunConfig
    disc: Discretization
    dt: float
    states: list[DiscreteState] = field(default_factory=list)
    steps: list[StepInfo] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def run_transient(config: RunConfig, disc: Discretization | None = None, forcing=None,
                  callback=None) -> Trajectory:
    """Integrate from the Stokes projection of u(0) to T, keeping states every 0.1 time units.

    The first step is backward Euler, later steps BDF2 with a fixed step that
    divides the sampling interval.
    """
    disc = disc or build_discretization(config.N, config.k, config.scheme)
    stepper = Stepper(disc, config, forcing)
    per_sample = config.steps_per_sample(disc.h)
    dt = SAMPLE_INTERVAL / per_sample
    n_steps = int(round(config.T / SAMPLE_INTERVAL)) * per_sample

    state = stokes_projection(disc, stepper.exact, 0.0, stepper.blocks)
    traj = Trajectory(config, disc, dt, [state])
    log.info("%s N=%d: %d steps of dt=%.4g, %d velocity dofs", config.scheme, config.N,
             n_steps, dt, disc.velocity.n_dofs)
    prev = None
    for n in range(1, n_steps + 1):
        t_new = n * SAMPLE_INTERVAL / per_sample
        if prev is None:
            new, info = stepper.advance_euler(state, dt, t_new)
        else:
            new, info = stepper.advance_bdf2(state, prev, dt, t_new)
        traj.steps.append(info)
        prev, state = state, new
        if n % per_sample == 0:
            traj.states.append(state)
            if callback is not None:
                callback(state)
    return traj
