"""Per-mode dense solves and mode orchestration.

Each azimuthal mode yields an independent (3n, 3n) dense system; modes are
assembled and LU-factored in parallel worker threads.  Negative modes reuse
the factorization of the matching positive mode through the parity relation
A(-m) = D A(m) D, so x(-m) = D solve(A(m), D b(-m)).  Factorizations are
retained so further incident fields at the same geometry and wavenumbers
cost one triangular solve per mode.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg as sla

from .geometry import PanelMesh
from .incident import BoundaryDataModes, IncidentField, boundary_data
from .operators import BoundaryAssembler, parity_signs

RESIDUAL_FAIL = 1e-6

# concurrent scipy LAPACK calls corrupt the heap on some builds (observed
# with lu_solve); factor/solve time is negligible next to assembly, so all
# LAPACK entry points are serialized
_LAPACK_LOCK = threading.Lock()


def _apply_factored(lu: np.ndarray, piv: np.ndarray, x: np.ndarray) -> np.ndarray:
    """A @ x from the compact factors: A = P^-1 L U, P the pivot swaps."""
    y = np.triu(lu) @ x
    y += np.tril(lu, -1) @ y
    for i in range(len(piv) - 1, -1, -1):  # invert the forward swap sequence
        j = piv[i]
        if j != i:
            y[[i, j]] = y[[j, i]]
    return y


@dataclass(frozen=True)
class ModalSystem:
    """LU-factored system of one nonnegative mode, serving modes +m and -m."""

    m: int
    lu: tuple[np.ndarray, np.ndarray]
    parity: np.ndarray

    @classmethod
    def from_matrix(cls, m: int, A: np.ndarray) -> "ModalSystem":
        if m < 0:
            raise ValueError("factor the nonnegative mode; negatives are served by parity")
        n = A.shape[0] // 3
        try:
            with _LAPACK_LOCK:
                lu = sla.lu_factor(A)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"mode {m}: singular system ({exc})") from exc
        return cls(m=m, lu=lu, parity=parity_signs(n))

    @classmethod
    def assemble(cls, assembler: BoundaryAssembler, m: int) -> "ModalSystem":
        return cls.from_matrix(m, assembler.matrix(abs(m)))


def solve_mode(system: ModalSystem, rhs: np.ndarray, m: int | None = None):
    """Solve for one signed mode; rhs may be (3n,) or (3n, k) stacked.

    Returns (solution, relative residual); the residual is formed from the
    factors so the assembled matrix need not be retained.
    """
    m = system.m if m is None else m
    if abs(m) != system.m:
        raise ValueError(f"system holds mode {system.m}, asked for {m}")
    b = rhs if m >= 0 else (system.parity * rhs.T).T
    with _LAPACK_LOCK:
        x = sla.lu_solve(system.lu, b)
    if not np.all(np.isfinite(x)):
        raise RuntimeError(f"mode {m}: singular system (non-finite solution)")
    den = np.linalg.norm(b)
    res = np.linalg.norm(_apply_factored(*system.lu, x) - b) / den if den > 0 else 0.0
    if res > RESIDUAL_FAIL:
        raise RuntimeError(f"mode {m}: solve residual {res:.2e} (near-singular system)")
    if m < 0:
        x = (system.parity * x.T).T
    return x, res


@dataclass(frozen=True)
class SurfaceDensityModes:
    """Solved density modes; arrays are (2 m_max + 1, n_nodes), row m + m_max."""

    mesh: PanelMesh
    kappa_p: float
    kappa_s: float
    m_max: int
    sigma: np.ndarray
    j_t: np.ndarray
    j_q: np.ndarray

    def mode(self, m: int):
        if abs(m) > self.m_max:
            raise ValueError("mode exceeds the stored range")
        j = m + self.m_max
        return self.sigma[j], self.j_t[j], self.j_q[j]


@dataclass
class SolveReport:
    """Run metrics mirroring the benchmark table columns."""

    n_f: int
    n_pts: int
    t_matgen: float
    t_solve: float
    t_syn: float = 0.0
    residuals: dict[int, float] = dataclass_field(default_factory=dict)
    condition_estimates: dict[int, float] | None = None


class ScatteringSolver:
    """Assembles once per (mesh, wavenumbers, mode range); solves many fields."""

    def __init__(
        self,
        mesh: PanelMesh,
        kappa_p: float,
        kappa_s: float,
        *,
        kernel_tol: float = 1e-12,
        threshold: float = 1e-12,
        m_cap: int = 200,
        workers: int = 1,
        log_table=None,
    ):
        if workers < 1:
            raise ValueError("workers must be positive")
        self.mesh = mesh
        self.kappa_p = float(kappa_p)
        self.kappa_s = float(kappa_s)
        self.kernel_tol = float(kernel_tol)
        self.threshold = float(threshold)
        self.m_cap = int(m_cap)
        self.workers = int(workers)
        self.log_table = log_table
        self._assembler: BoundaryAssembler | None = None
        self._systems: dict[int, ModalSystem] = {}
        self._t_matgen = 0.0

    def _ensure_systems(self, m_max: int) -> None:
        if self._assembler is not None and self._assembler.n_modes >= m_max:
            missing = [m for m in range(m_max + 1) if m not in self._systems]
        else:
            t0 = time.perf_counter()
            self._assembler = BoundaryAssembler(
                self.mesh,
                self.kappa_p,
                self.kappa_s,
                m_max,
                kernel_tol=self.kernel_tol,
                log_table=self.log_table,
            )
            self._t_matgen = time.perf_counter() - t0
            self._systems.clear()
            missing = list(range(m_max + 1))
        if not missing:
            return
        t0 = time.perf_counter()
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            built = list(pool.map(lambda m: ModalSystem.assemble(self._assembler, m), missing))
        for sys_m in built:
            self._systems[sys_m.m] = sys_m
        self._t_matgen += time.perf_counter() - t0

    def solve(self, field: IncidentField) -> tuple[SurfaceDensityModes, SolveReport]:
        data = boundary_data(field, self.mesh, self.threshold, self.m_cap)
        return self.solve_data(data)

    def solve_data(self, data: BoundaryDataModes) -> tuple[SurfaceDensityModes, SolveReport]:
        m_max = data.m_max
        self._ensure_systems(m_max)
        matgen = self._t_matgen
        self._t_matgen = 0.0  # charged to the first report only

        n = self.mesh.n_nodes
        modes = list(range(-m_max, m_max + 1))
        t0 = time.perf_counter()

        def run(m: int):
            x, res = solve_mode(self._systems[abs(m)], data.rhs(m), m)
            return m, x, res

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            results = list(pool.map(run, modes))
        t_solve = time.perf_counter() - t0

        sigma = np.empty((2 * m_max + 1, n), complex)
        j_t = np.empty_like(sigma)
        j_q = np.empty_like(sigma)
        residuals: dict[int, float] = {}
        for m, x, res in sorted(results):
            j = m + m_max
            sigma[j], j_t[j], j_q[j] = x[:n], x[n : 2 * n], x[2 * n :]
            residuals[m] = res
        densities = SurfaceDensityModes(
            mesh=self.mesh,
            kappa_p=self.kappa_p,
            kappa_s=self.kappa_s,
            m_max=m_max,
            sigma=sigma,
            j_t=j_t,
            j_q=j_q,
        )
        report = SolveReport(
            n_f=m_max,
            n_pts=n,
            t_matgen=matgen,
            t_solve=t_solve,
            residuals=residuals,
        )
        return densities, report


def solve_all(
    mesh: PanelMesh, field: IncidentField, **kwargs
) -> tuple[SurfaceDensityModes, SolveReport]:
    """One-shot assembly and solve; see ScatteringSolver for reuse."""
    solver = ScatteringSolver(mesh, field.kappa_p, field.kappa_s, **kwargs)
    return solver.solve(field)


def synthesize(
    densities: SurfaceDensityModes, n_theta: int, report: SolveReport | None = None
):
    """Density values on the (node, azimuth) grid by inverse FFT per circle.

    Returns (sigma, j_t, j_q) arrays of shape (n_nodes, n_theta); the grid
    angles are 2 pi k / n_theta.  Records T_syn on the report when given.
    """
    m_max = densities.m_max
    if n_theta < 2 * m_max + 1:
        raise ValueError(f"need at least {2 * m_max + 1} azimuthal samples")
    t0 = time.perf_counter()
    out = []
    for modes in (densities.sigma, densities.j_t, densities.j_q):
        buf = np.zeros((densities.mesh.n_nodes, n_theta), complex)
        for m in range(-m_max, m_max + 1):
            buf[:, m % n_theta] = modes[m + m_max]
        out.append(np.fft.ifft(buf, axis=1) * n_theta)
    if report is not None:
        report.t_syn = time.perf_counter() - t0
    return tuple(out)
