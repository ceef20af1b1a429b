"""Matrix-free solvers for the periodic cell problem.

Three routes are provided:

* ``solve_strain_driven``: preconditioned CG on the periodic fluctuation for
  a prescribed mean strain;
* ``solve_stress_driven``: preconditioned CG on the (mean strain, fluctuation)
  pair for a prescribed mean stress, with an exact mean-stress correction at
  return;
* ``solve_stress_uzawa``: alternating closed-form stress minimization and
  preconditioned displacement ascent on the stress-displacement Lagrangian,
  stopped by the duality gap.

The preconditioner is the constant-coefficient operator built from the
volume-averaged stiffness; being block-circulant on the periodic grid it is
inverted exactly by DFT diagonalization (3x3 Hermitian blocks per frequency,
zero frequency annihilated, which also enforces the zero-mean constraint).
A per-node block-Jacobi preconditioner and no preconditioning are available
as fallbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mandel
from .cell import VoxelCell, cell_average
from .energies import MacroLoad, displacement_potential
from .fem import (
    LinPerField,
    div_adjoint,
    gather_corners,
    node_mean,
    project_zero_mean,
    strain_tables,
    sym_gradient,
)


@dataclass
class SolveParams:
    """Knobs shared by all solvers.

    ``uzawa_step`` is either a positive float or the string ``"auto"``, in
    which case the step is set to 2 / (lmax + lmin) of the preconditioned
    operator, both extreme eigenvalues estimated by 20 seeded power
    iterations.
    """

    tol: float = 1e-9
    max_iter: int = 10000
    uzawa_step: float | str = "auto"
    seed: int = 0
    precond: str = "reference"

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not (self.uzawa_step == "auto" or float(self.uzawa_step) > 0.0):
            raise ValueError("uzawa_step must be positive or 'auto'")
        if self.precond not in ("reference", "jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.precond!r}")


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    final_energy: float
    converged: bool
    gap_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)


class NotConverged(RuntimeError):
    """Iteration budget exhausted; carries the partial report."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


class StepTooLarge(RuntimeError):
    """Uzawa gap grew for 10 consecutive iterations; carries the report."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# operator context


class Stencil:
    """Per-solve bundle of geometry tables, material fields and preconditioner."""

    def __init__(self, cell: VoxelCell, precond: str = "reference"):
        self.cell = cell
        self.tables = strain_tables(cell)
        self.cvox = cell.stiffness_field
        self.cmean = cell.mean_stiffness
        self.cmean_inv = mandel.invert(self.cmean)
        self.volume = cell.volume
        self.dims = cell.dims
        self.nphi = int(np.prod(cell.dims)) * 3
        self.precond = precond
        self._ref_pinv = None
        self._jac_inv = None

    # field operations ------------------------------------------------------

    def strain_periodic(self, phi: np.ndarray) -> np.ndarray:
        return np.einsum("qacd,ijkad->ijkqc", self.tables, gather_corners(phi))

    def stress(self, e: np.ndarray) -> np.ndarray:
        return np.einsum("ijkcd,ijkqd->ijkqc", self.cvox, e)

    def stress_ref(self, e: np.ndarray) -> np.ndarray:
        return np.einsum("cd,ijkqd->ijkqc", self.cmean, e)

    def compliance_stress(self, s: np.ndarray) -> np.ndarray:
        return np.einsum("ijkcd,ijkqd->ijkqc", self.cell.compliance_field, s)

    def divadj(self, s: np.ndarray) -> np.ndarray:
        return div_adjoint(self.cell, s, self.tables)

    def project(self, phi: np.ndarray) -> np.ndarray:
        return phi - node_mean(phi)

    # periodic-fluctuation operator ------------------------------------------

    def k_phi(self, phi: np.ndarray) -> np.ndarray:
        out = self.divadj(self.stress(self.strain_periodic(phi)))
        return self.project(out)

    def k_ref_phi(self, phi: np.ndarray) -> np.ndarray:
        out = self.divadj(self.stress_ref(self.strain_periodic(phi)))
        return self.project(out)

    # extended operator on (mean strain, fluctuation) -------------------------

    def unpack(self, x: np.ndarray):
        return x[:6], x[6:].reshape(self.dims + (3,))

    def pack(self, macro: np.ndarray, phi: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(macro, dtype=float).ravel(), phi.ravel()])

    def strain_ext(self, x: np.ndarray) -> np.ndarray:
        macro, phi = self.unpack(x)
        e = self.strain_periodic(phi)
        e += macro
        return e

    def k_ext(self, x: np.ndarray) -> np.ndarray:
        s = self.stress(self.strain_ext(x))
        return self.pack(self.volume * cell_average(self.cell, s),
                         self.project(self.divadj(s)))

    def m_ext(self, x: np.ndarray) -> np.ndarray:
        """Apply the block preconditioner operator itself (not its inverse)."""
        macro, phi = self.unpack(x)
        return self.pack(self.volume * (self.cmean @ macro), self.k_ref_phi(phi))

    # preconditioner inverses --------------------------------------------------

    @property
    def ref_pinv(self) -> np.ndarray:
        """DFT-diagonalized pseudo-inverse blocks of the reference operator."""
        if self._ref_pinv is None:
            kernel = np.zeros(self.dims + (3, 3))
            for d in range(3):
                imp = np.zeros(self.dims + (3,))
                imp[0, 0, 0, d] = 1.0
                kernel[..., :, d] = self.divadj(self.stress_ref(self.strain_periodic(imp)))
            khat = np.fft.fftn(kernel, axes=(0, 1, 2))
            khat = 0.5 * (khat + np.conj(khat.transpose(0, 1, 2, 4, 3)))
            pinv = np.linalg.pinv(khat, rcond=1e-12, hermitian=True)
            pinv[0, 0, 0] = 0.0  # zero frequency carries the removed nullspace
            self._ref_pinv = pinv
        return self._ref_pinv

    def ref_solve(self, r: np.ndarray) -> np.ndarray:
        rhat = np.fft.fftn(r, axes=(0, 1, 2))
        zhat = np.einsum("ijkab,ijkb->ijka", self.ref_pinv, rhat)
        return np.real(np.fft.ifftn(zhat, axes=(0, 1, 2)))

    @property
    def jac_inv(self) -> np.ndarray:
        """Inverse per-node 3x3 diagonal blocks of the heterogeneous operator."""
        if self._jac_inv is None:
            w = self.cell.voxel_volume / 8.0
            blocks = np.zeros(self.dims + (3, 3))
            from .fem import CORNERS

            for ai, a in enumerate(CORNERS):
                contrib = w * np.einsum("qcd,ijkce,qef->ijkdf",
                                        self.tables[:, ai], self.cvox,
                                        self.tables[:, ai])
                blocks += np.roll(contrib, shift=a, axis=(0, 1, 2))
            self._jac_inv = np.linalg.inv(blocks)
        return self._jac_inv

    def jacobi_solve(self, r: np.ndarray) -> np.ndarray:
        return np.einsum("ijkab,ijkb->ijka", self.jac_inv, r)

    def precond_phi(self, r: np.ndarray) -> np.ndarray:
        if self.precond == "reference":
            return self.ref_solve(r)
        if self.precond == "jacobi":
            return self.project(self.jacobi_solve(r))
        return r.copy()

    def precond_ext(self, x: np.ndarray) -> np.ndarray:
        macro, phi = self.unpack(x)
        return self.pack(self.cmean_inv @ macro / self.volume, self.precond_phi(phi))


# ---------------------------------------------------------------------------
# preconditioned conjugate gradients


def _pcg(op, precond, b, tol, max_iter, x0=None, energy_offset=0.0):
    """PCG with a Polak-Ribiere restart-safe beta; tracks energy via K x.

    Returns (x, report). The recorded energies are ``1/2 x.Kx - b.x`` plus
    ``energy_offset``, exact per iterate thanks to the running ``K x``.
    """
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if bnorm == 0.0 and not np.any(x):
        return x, SolveReport(0, [0.0], energy_offset, True,
                              energy_history=[energy_offset])
    kx = op(x) if np.any(x) else np.zeros_like(b)
    r = b - kx
    scale = bnorm if bnorm > 0.0 else float(np.linalg.norm(r))
    if scale == 0.0:
        return x, SolveReport(0, [0.0], energy_offset, True,
                              energy_history=[energy_offset])

    def energy():
        return 0.5 * float(x @ kx) - float(b @ x) + energy_offset

    history = [float(np.linalg.norm(r)) / scale]
    energies = [energy()]
    if history[-1] <= tol:
        return x, SolveReport(0, history, energies[-1], True,
                              energy_history=energies)
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        kp = op(p)
        pkp = float(p @ kp)
        if pkp <= 0.0 or rz <= 0.0:
            break  # stagnated in rounding noise; residual test decides below
        alpha = rz / pkp
        x += alpha * p
        kx += alpha * kp
        r_old = r
        r = r - alpha * kp
        it += 1
        history.append(float(np.linalg.norm(r)) / scale)
        energies.append(energy())
        if history[-1] <= tol:
            break
        z = precond(r)
        rz_new = float(r @ z)
        r_prev_z = float(r_old @ z)
        beta = max(0.0, (rz_new - r_prev_z) / rz)
        p = z + beta * p
        rz = rz_new
    converged = history[-1] <= tol
    return x, SolveReport(it, history, energies[-1], converged,
                          energy_history=energies)


# ---------------------------------------------------------------------------
# solver entry points


def solve_strain_driven(cell: VoxelCell, macro_strain, params: SolveParams | None = None,
                        x0: np.ndarray | None = None):
    """Cell solution for a prescribed mean strain.

    Returns ``(u, report)`` where ``u.macro`` is the given strain and
    ``u.periodic`` the zero-mean fluctuation; at convergence the nodal
    residual of the equilibrium equations is below ``tol`` relative to the
    load produced by the mean strain.
    """
    params = params or SolveParams()
    a = np.asarray(macro_strain, dtype=float)
    st = Stencil(cell, params.precond)
    const = np.broadcast_to(a, cell.dims + (8, 6))
    rhs = -st.project(st.divadj(st.stress(const)))
    offset = 0.5 * float(np.sum(st.stress(const) * const)) * cell.voxel_volume / 8.0

    def op(v):
        return st.k_phi(v.reshape(cell.dims + (3,))).ravel()

    def pre(v):
        return st.precond_phi(v.reshape(cell.dims + (3,))).ravel()

    x0v = None if x0 is None else st.project(x0).ravel()
    sol, report = _pcg(op, pre, rhs.ravel(), params.tol, params.max_iter,
                       x0=x0v, energy_offset=offset)
    phi = st.project(sol.reshape(cell.dims + (3,)))
    u = LinPerField(a, phi)
    if not report.converged:
        raise NotConverged(
            f"strain-driven solve: {report.residual_history[-1]:.3e} after "
            f"{report.iterations} iterations", report)
    return u, report


def solve_stress_driven(cell: VoxelCell, macro_stress, params: SolveParams | None = None,
                        x0: np.ndarray | None = None):
    """Cell solution for a prescribed mean stress.

    Returns ``(w, report)`` with zero-mean ``w``; the returned field carries
    the prescribed mean stress exactly (a final 6x6 correction of the mean
    strain eliminates constraint drift) and equilibrium holds to ``tol``.
    """
    params = params or SolveParams()
    s_target = np.asarray(macro_stress, dtype=float)
    st = Stencil(cell, params.precond)
    b = st.pack(cell.volume * s_target, np.zeros(cell.dims + (3,)))
    sol, report = _pcg(st.k_ext, st.precond_ext, b, params.tol, params.max_iter,
                       x0=x0)
    macro, phi = st.unpack(sol)
    phi = st.project(phi)
    mean_sig = cell_average(cell, st.stress(st.strain_ext(st.pack(macro, phi))))
    macro = macro + st.cmean_inv @ (s_target - mean_sig)
    w = project_zero_mean(cell, LinPerField(macro, phi))
    report.final_energy = displacement_potential(cell, w, s_target)
    if not report.converged:
        raise NotConverged(
            f"stress-driven solve: {report.residual_history[-1]:.3e} after "
            f"{report.iterations} iterations", report)
    return w, report


def _power_step_estimate(st: Stencil, seed: int, iters: int = 20) -> float:
    """AUTO Uzawa step 2/(lmax+lmin) of the preconditioned operator.

    Extreme eigenvalues come from 20 power iterations each (the smallest via
    the shifted operator); iterates are kept clear of the constant-shift
    nullspace so roundoff cannot collapse the estimates.
    """
    rng = np.random.default_rng(seed)

    def clean(x):
        macro, phi = st.unpack(x)
        return st.pack(macro, st.project(phi))

    def t_apply(x):
        return st.precond_ext(st.k_ext(x))

    def rayleigh(x):
        num = float(x @ st.k_ext(x))
        den = float(x @ st.m_ext(x))
        return num / den if den > 1e-30 else 1.0

    def seed_vec():
        x = clean(st.pack(rng.standard_normal(6),
                          rng.standard_normal(st.dims + (3,))))
        return x / np.linalg.norm(x)

    x = seed_vec()
    for _ in range(iters):
        y = clean(t_apply(x))
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            break
        x = y / ny
    lam_max = max(rayleigh(x), 1e-30)

    z = seed_vec()
    for _ in range(iters):
        y = clean(lam_max * z - t_apply(z))
        ny = float(np.linalg.norm(y))
        if ny <= 1e-10 * lam_max:
            # spectrum collapsed onto lam_max; the shifted operator vanishes
            return 1.0 / lam_max
        z = y / ny
    shifted = lam_max - rayleigh(z)
    lam_min = lam_max - min(max(shifted, 0.0), lam_max)
    lam_min = max(lam_min, 1e-12 * lam_max)
    return 2.0 / (lam_max + lam_min)


def solve_stress_uzawa(cell: VoxelCell, macro_stress, params: SolveParams | None = None):
    """Alternating-directions saddle-point solve for a prescribed mean stress.

    The stress step is closed form (the inner minimum of the
    stress-displacement Lagrangian is attained at the constitutive stress of
    the current displacement); the displacement step is a preconditioned
    gradient ascent on the dual. Each iteration also projects the working
    stress onto the admissible set exactly, through one reference-operator
    solve, so the recorded gap pairs a feasible primal value with the dual
    value and weak duality holds per iteration. Convergence requires both
    that certified gap (relative to the complementary energy) and the
    equilibrium residual to fall below ``tol``.

    Returns ``(sigma, v, report)``: the admissible stress, the zero-mean
    displacement whose constitutive stress it approximates, and the report
    with the per-iteration gap history. The dual multiplier of the
    underlying Lagrangian is ``-v``.
    """
    params = params or SolveParams()
    s_target = np.asarray(macro_stress, dtype=float)
    st = Stencil(cell, params.precond)
    gaps: list = []
    history: list = []
    energies: list = []

    if np.linalg.norm(s_target) == 0.0:
        report = SolveReport(0, [0.0], 0.0, True, gap_history=[0.0],
                             energy_history=[0.0])
        return np.zeros(cell.dims + (8, 6)), LinPerField.zeros(cell), report

    rho = (float(params.uzawa_step) if params.uzawa_step != "auto"
           else _power_step_estimate(st, params.seed))
    b = st.pack(cell.volume * s_target, np.zeros(cell.dims + (3,)))
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    streak = 0
    prev_gap = np.inf
    it = 0
    converged = False

    while True:
        e = st.strain_ext(x)
        sig = st.stress(e)
        mean_sig = cell_average(cell, sig)
        divadj_sig = st.divadj(sig)
        kx = st.pack(cell.volume * mean_sig, st.project(divadj_sig))
        grad = kx - b
        # exact projection onto the admissible set: the reference solve
        # removes the weak divergence, the constant shift fixes the mean
        psi = st.ref_solve(divadj_sig)
        sig_feas = sig - st.stress_ref(st.strain_periodic(psi))
        sig_feas += s_target - cell_average(cell, sig_feas)
        compl = 0.5 * float(np.sum(st.compliance_stress(sig_feas) * sig_feas)) \
            * cell.voxel_volume / 8.0
        k_en = 0.5 * float(x @ kx) - float(b @ x)
        gap = abs(compl + k_en)
        gaps.append(gap)
        relres = float(np.linalg.norm(grad)) / bnorm
        history.append(relres)
        energies.append(k_en)

        gap_rel = gap / max(compl, 1e-300)
        if gap_rel <= params.tol and relres <= params.tol:
            converged = True
            break
        report_now = SolveReport(it, history, compl, False, gap_history=gaps,
                                 energy_history=energies)
        if gap > prev_gap * (1.0 + 1e-15) + 1e-300:
            streak += 1
            if streak >= 10:
                raise StepTooLarge(
                    f"uzawa gap grew for {streak} consecutive iterations "
                    f"(step {rho:.3e})", report_now)
        else:
            streak = 0
        prev_gap = gap
        if it >= params.max_iter:
            raise NotConverged(
                f"uzawa: gap {gap_rel:.3e} after {it} iterations", report_now)
        x = x - rho * st.precond_ext(grad)
        it += 1

    macro, phi = st.unpack(x)
    v = project_zero_mean(cell, LinPerField(macro, st.project(phi)))
    report = SolveReport(it, history, compl, converged,
                         gap_history=gaps, energy_history=energies)
    return sig_feas, v, report


def solve_strain_route(cell: VoxelCell, load: MacroLoad,
                       params: SolveParams | None = None):
    """Cell solve reported in strain space through the gradient isomorphisms.

    For a mean-strain load the result is the zero-mean fluctuation strain
    (the image of the periodic displacement); for a mean-stress load it is
    the total strain of the zero-mean displacement solution. Paired calls
    with consistent data differ exactly by the mean strain.
    """
    params = params or SolveParams()
    if load.kind == "strain":
        u, report = solve_strain_driven(cell, load.value, params)
        e = sym_gradient(cell, u)
        return e - load.value, report
    w, report = solve_stress_driven(cell, load.value, params)
    return sym_gradient(cell, w), report
