"""Residual and Jacobian of the fully discrete mixed system.

Per backward-Euler time level the unknowns are the homogenized density
rho_bar (scalar P1) and the momentum m (vector P1), stacked as
``[m_dofs, rho_dofs]``.  The residual rows are

  momentum, test v:  (F(|m_n|) m_n, v) - (rho_bar_n, div v) + (grad Psi_n, v)
  density,  test q:  (phi (rho_bar_n - rho_bar_{n-1}) / dt, q)
                     + (div m_n, q) - (f_n, q) + (phi dPsi_n, q)

with all pairings by element quadrature.  ``dPsi_n`` is the time derivative
of the boundary extension; it is taken either as the backward difference
(Psi_n - Psi_{n-1}) / dt (default) or as the analytic derivative Psi_t(t_n),
selectable through :class:`DiscretizationOptions`.  The Jacobian has the
block form [[A(m), -B^T], [B, M_phi / dt]] where A carries the flux
Jacobian, B the divergence coupling and M_phi the porosity-weighted mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .constitutive import GeneralizedPolynomial
from .mesh_fem import (QuadratureRule, ScalarP1Space, StructuredTriMesh,
                       VectorP1Space, l2_project)

__all__ = [
    "ExactSolution",
    "ProblemData",
    "SystemState",
    "DiscretizationOptions",
    "Assembler",
    "residual",
    "jacobian",
    "initial_state",
]


@dataclass(frozen=True)
class ExactSolution:
    """Analytic (rho, m) pair for manufactured-solution studies.

    ``rho(x, t)`` maps (..., 2) coordinates to scalars, ``m(x, t)`` to
    (..., 2) vectors.
    """

    rho: Callable[[np.ndarray, float], np.ndarray]
    m: Callable[[np.ndarray, float], np.ndarray]


@dataclass
class ProblemData:
    """Coefficients, data functions and the momentum law of one problem.

    All spatial callables take an (..., 2) coordinate array; time-dependent
    ones take (x, t).  ``psi`` is the boundary extension: its value,
    analytic time derivative and spatial gradient must all be evaluable in
    the interior.
    """

    law: GeneralizedPolynomial
    phi: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray, float], np.ndarray]
    psi: Callable[[np.ndarray, float], np.ndarray]
    psi_t: Callable[[np.ndarray, float], np.ndarray]
    grad_psi: Callable[[np.ndarray, float], np.ndarray]
    rho0: Callable[[np.ndarray], np.ndarray]
    final_time: float = 1.0
    phi_bounds: tuple[float, float] = (1.0, 1.0)
    exact: ExactSolution | None = None
    name: str = "problem"

    def __post_init__(self):
        lo, hi = self.phi_bounds
        if not (0.0 < lo <= hi):
            raise ValueError(f"porosity bounds must satisfy 0 < lo <= hi, got {self.phi_bounds}")
        if self.final_time <= 0.0:
            raise ValueError("final_time must be positive")


@dataclass
class SystemState:
    """Degree-of-freedom vectors of one time level."""

    rho_bar: np.ndarray
    m: np.ndarray
    t: float

    def __post_init__(self):
        self.rho_bar = np.asarray(self.rho_bar, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if not (np.all(np.isfinite(self.rho_bar)) and np.all(np.isfinite(self.m))):
            raise ValueError("state contains non-finite entries")

    def copy(self) -> "SystemState":
        return SystemState(self.rho_bar.copy(), self.m.copy(), self.t)


@dataclass(frozen=True)
class DiscretizationOptions:
    """Switches for the parts of the scheme the formulation leaves open.

    psi_t_mode:
        "discrete" (default) uses the backward difference of the boundary
        extension for the dPsi term, i.e. the fully discrete data treatment;
        "analytic" evaluates the exact Psi_t at t_n.  With analytic data and
        a manufactured solution whose fields lie in the P1 spaces, the
        scheme is exact and refinement studies only measure solver noise.
    pin_rho_boundary:
        strongly enforce rho_bar = 0 at boundary nodes (the weak form
        already carries the condition naturally; default off).
    momentum_bc:
        "none" (default) leaves the momentum space unconstrained; "exact"
        pins boundary momentum dofs to the exact solution (requires
        ``ProblemData.exact``), a variant kept for sensitivity studies of
        the equal-order pair.
    quad_order:
        quadrature order for every pairing (default 4).
    """

    psi_t_mode: str = "discrete"
    pin_rho_boundary: bool = False
    momentum_bc: str = "none"
    quad_order: int = 4

    def __post_init__(self):
        if self.psi_t_mode not in ("discrete", "analytic"):
            raise ValueError(f"unknown psi_t_mode {self.psi_t_mode!r}")
        if self.momentum_bc not in ("none", "exact"):
            raise ValueError(f"unknown momentum_bc {self.momentum_bc!r}")


class Assembler:
    """Caches the static operators of one (mesh, problem) pair."""

    def __init__(self, mesh: StructuredTriMesh, data: ProblemData,
                 options: DiscretizationOptions | None = None):
        self.mesh = mesh
        self.data = data
        self.options = options or DiscretizationOptions()
        rule = QuadratureRule.on_triangle(self.options.quad_order)
        self.scalar_space = ScalarP1Space(mesh, rule)
        self.vector_space = VectorP1Space(mesh, rule)
        if self.options.momentum_bc == "exact" and data.exact is None:
            raise ValueError("momentum_bc='exact' needs ProblemData.exact")
        self._qpts = self.scalar_space.quadrature_coords()
        self._phi_q = np.asarray(data.phi(self._qpts), dtype=float) \
            * np.ones(self._qpts.shape[:2])
        lo, hi = data.phi_bounds
        if np.any(self._phi_q < lo - 1e-12) or np.any(self._phi_q > hi + 1e-12):
            raise ValueError("porosity violates its stated bounds at quadrature points")
        self.mass_phi = self.scalar_space.mass_matrix(data.phi)
        self.div_coupling = self._assemble_div_coupling()
        self._div_coupling_T = self.div_coupling.T.tocsr()
        self._jac_cache: dict = {}

    # -- static operators ----------------------------------------------------

    def _assemble_div_coupling(self):
        """B[j, (i,c)] = (d phi_i / dx_c, phi_j): density rows, momentum cols."""
        mesh = self.mesh
        tris = mesh.triangles
        int_basis = mesh.areas / 3.0  # exact integral of each P1 basis
        rows, cols, vals = [], [], []
        for k in range(3):
            for i in range(3):
                for c in range(2):
                    rows.append(tris[:, k])
                    cols.append(2 * tris[:, i] + c)
                    vals.append(mesh.grads[:, i, c] * int_basis)
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(mesh.n_nodes, 2 * mesh.n_nodes)).tocsr()

    # -- per-step data -------------------------------------------------------

    def _dpsi_values(self, t_n: float, dt: float) -> np.ndarray:
        if self.options.psi_t_mode == "analytic":
            return np.asarray(self.data.psi_t(self._qpts, t_n), dtype=float) \
                * np.ones(self._qpts.shape[:2])
        return (np.asarray(self.data.psi(self._qpts, t_n), dtype=float)
                - np.asarray(self.data.psi(self._qpts, t_n - dt), dtype=float)) / dt \
            * np.ones(self._qpts.shape[:2])

    def _momentum_bc_dofs(self, t_n: float):
        """(dof indices, values) of pinned momentum dofs, or (None, None)."""
        if self.options.momentum_bc != "exact":
            return None, None
        bn = self.mesh.boundary_nodes
        vals = np.asarray(self.data.exact.m(self.mesh.nodes[bn], t_n), dtype=float)
        dofs = np.column_stack([2 * bn, 2 * bn + 1]).ravel()
        return dofs, vals.reshape(-1)

    # -- nonlinear pieces ------------------------------------------------------

    def _flux_terms(self, m_dofs: np.ndarray, t_n: float, want_jacobian: bool):
        """(F(|m|) m, v) vector and optionally the element flux Jacobians."""
        law = self.data.law
        vs = self.vector_space
        rule = vs.quadrature
        basis = rule.basis_values()
        mq = vs.eval_at_quadrature(m_dofs)  # (nt, nq, 2)
        mag = np.sqrt(np.sum(mq * mq, axis=-1))
        f = law.eval_F(mag, t_n)
        r_el = np.einsum("q,tq,tqc,qk->tkc", rule.weights, f, mq, basis) \
            * self.mesh.areas[:, None, None]
        rvec = np.zeros(vs.n_dofs)
        np.add.at(rvec, vs.element_dof_map.ravel(), r_el.reshape(-1, 6).ravel())
        if not want_jacobian:
            return rvec, None
        magc = np.maximum(mag, law.eps_reg)
        fp = law.eval_F_prime(magc, t_n)
        eye = np.eye(2)
        jq = f[:, :, None, None] * eye[None, None] \
            + (fp / magc)[:, :, None, None] * mq[:, :, :, None] * mq[:, :, None, :]
        a_el = np.einsum("q,qi,qj,tqcd->ticjd", rule.weights, basis, basis, jq) \
            * self.mesh.areas[:, None, None, None, None]
        return rvec, a_el

    def _momentum_block(self, a_el: np.ndarray):
        vs = self.vector_space
        dof = vs.element_dof_map
        key = "mom_pattern"
        if key not in self._jac_cache:
            rows = np.repeat(dof, 6, axis=1).ravel()
            cols = np.tile(dof, (1, 6)).ravel()
            self._jac_cache[key] = (rows, cols)
        rows, cols = self._jac_cache[key]
        return sp.coo_matrix((a_el.reshape(-1, 36).ravel(), (rows, cols)),
                             shape=(vs.n_dofs, vs.n_dofs)).tocsr()

    # -- public assembly -------------------------------------------------------

    def residual(self, state_n: SystemState, state_prev: SystemState,
                 dt: float) -> np.ndarray:
        """Stacked (momentum, density) residual at one time level."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        if abs(state_n.t - state_prev.t - dt) > 1e-10 * max(1.0, abs(state_n.t)):
            raise ValueError("state times inconsistent with dt")
        t_n = state_n.t
        ss, vs = self.scalar_space, self.vector_space
        flux_vec, _ = self._flux_terms(state_n.m, t_n, want_jacobian=False)
        grad_psi_vec = vs.load_vector(lambda pts: np.asarray(
            self.data.grad_psi(pts, t_n), dtype=float))
        r_mom = flux_vec - self._div_coupling_T @ state_n.rho_bar + grad_psi_vec
        f_vec = ss.load_vector(lambda pts: np.asarray(self.data.f(pts, t_n), dtype=float)
                               * np.ones(pts.shape[:2]))
        dpsi = self._dpsi_values(t_n, dt)
        dpsi_vec = ss.load_vector(lambda pts: self._phi_q * dpsi)
        r_den = self.mass_phi @ (state_n.rho_bar - state_prev.rho_bar) / dt \
            + self.div_coupling @ state_n.m - f_vec + dpsi_vec
        bdofs, bvals = self._momentum_bc_dofs(t_n)
        if bdofs is not None:
            r_mom[bdofs] = state_n.m[bdofs] - bvals
        if self.options.pin_rho_boundary:
            bn = self.mesh.boundary_nodes
            r_den[bn] = state_n.rho_bar[bn]
        return np.concatenate([r_mom, r_den])

    def jacobian(self, state_n: SystemState, dt: float):
        """Exact derivative of :meth:`residual` w.r.t. (m, rho_bar)."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        _, a_el = self._flux_terms(state_n.m, state_n.t, want_jacobian=True)
        a_blk = self._momentum_block(a_el)
        bt = self._div_coupling_T
        b = self.div_coupling
        m_dt = self.mass_phi / dt
        bdofs, _ = self._momentum_bc_dofs(state_n.t)
        if bdofs is not None:
            a_blk = a_blk.tolil()
            bt = bt.tolil()
            for d in bdofs:
                a_blk.rows[d] = [d]
                a_blk.data[d] = [1.0]
                bt.rows[d] = []
                bt.data[d] = []
            a_blk, bt = a_blk.tocsr(), bt.tocsr()
        if self.options.pin_rho_boundary:
            m_dt = m_dt.tolil()
            b = b.tolil()
            for bn in self.mesh.boundary_nodes:
                m_dt.rows[bn] = [bn]
                m_dt.data[bn] = [1.0]
                b.rows[bn] = []
                b.data[bn] = []
            m_dt, b = m_dt.tocsr(), b.tocsr()
        return sp.bmat([[a_blk, -bt], [b, m_dt]], format="csc")

    def momentum_residual(self, m_dofs: np.ndarray, rho_bar: np.ndarray,
                          t: float) -> np.ndarray:
        """Momentum rows alone, used by the initialization solve."""
        flux_vec, _ = self._flux_terms(m_dofs, t, want_jacobian=False)
        grad_psi_vec = self.vector_space.load_vector(lambda pts: np.asarray(
            self.data.grad_psi(pts, t), dtype=float))
        r = flux_vec - self._div_coupling_T @ rho_bar + grad_psi_vec
        bdofs, bvals = self._momentum_bc_dofs(t)
        if bdofs is not None:
            r[bdofs] = m_dofs[bdofs] - bvals
        return r

    def momentum_jacobian(self, m_dofs: np.ndarray, t: float):
        _, a_el = self._flux_terms(m_dofs, t, want_jacobian=True)
        a_blk = self._momentum_block(a_el)
        bdofs, _ = self._momentum_bc_dofs(t)
        if bdofs is not None:
            a_blk = a_blk.tolil()
            for d in bdofs:
                a_blk.rows[d] = [d]
                a_blk.data[d] = [1.0]
            a_blk = a_blk.tocsr()
        return a_blk.tocsc()

    def initial_state(self, newton_tol: float = 1e-10,
                      max_iter: int = 60) -> SystemState:
        """Project the initial density; solve the momentum block by Newton from 0.

        The momentum initialization trace is attached to the raised error on
        failure so non-convergence is diagnosable.
        """
        from .solver import LinearSolver, NonConvergence  # local: avoid cycle

        data = self.data
        rho_bar0 = l2_project(self.scalar_space,
                              lambda pts: np.asarray(data.rho0(pts), dtype=float)
                              - np.asarray(data.psi(pts, 0.0), dtype=float))
        m = np.zeros(self.vector_space.n_dofs)
        solver = LinearSolver()
        trace = []
        for _ in range(max_iter):
            r = self.momentum_residual(m, rho_bar0, 0.0)
            rnorm = float(np.linalg.norm(r))
            trace.append(rnorm)
            if rnorm <= newton_tol:
                return SystemState(rho_bar0, m, 0.0)
            step = solver.solve(self.momentum_jacobian(m, 0.0), -r)
            # singular law makes the first steps from m = 0 tiny; plain
            # undamped Newton walks out of the clamp region reliably
            m = m + step
        raise NonConvergence("momentum initialization did not converge", trace)


def residual(state_n: SystemState, state_prev: SystemState, dt: float,
             data: ProblemData, mesh: StructuredTriMesh,
             options: DiscretizationOptions | None = None) -> np.ndarray:
    """One-shot residual; prefer a shared :class:`Assembler` in loops."""
    return Assembler(mesh, data, options).residual(state_n, state_prev, dt)


def jacobian(state_n: SystemState, dt: float, data: ProblemData,
             mesh: StructuredTriMesh,
             options: DiscretizationOptions | None = None):
    """One-shot Jacobian; prefer a shared :class:`Assembler` in loops."""
    return Assembler(mesh, data, options).jacobian(state_n, dt)


def initial_state(data: ProblemData, mesh: StructuredTriMesh,
                  options: DiscretizationOptions | None = None) -> SystemState:
    """Initial (rho_bar, m) pair per the scheme's initialization rule."""
    return Assembler(mesh, data, options).initial_state()
