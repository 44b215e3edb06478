"""
Solver Module

This module provides a 2D incompressible Navier-Stokes solver for cylinder
wakes. It uses a projection method on a uniform staggered (MAC) grid:

    1. explicit momentum predictor (advection + diffusion),
    2. direct forcing of the immersed cylinders (velocity zero in the solid),
    3. pressure Poisson equation solved by red-black SOR,
    4. projection of the velocity onto the discretely divergence-free space.

Arrays carry one ghost layer and are indexed [row, column] = [y, x]:
    u[j, i]  right face of cell (j, i)      shape (ny + 2, nx + 2)
    v[j, i]  top face of cell (j, i)        shape (ny + 2, nx + 2)
    p[j, i]  center of cell (j, i)          shape (ny + 2, nx + 2)
Interior cells are j = 1..ny, i = 1..nx.
"""

import math
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Get the package logger
logger = logging.getLogger(__name__)

BOUNDARY_MODES = ("channel", "periodic")
INITIAL_CONDITIONS = ("uniform", "taylor_green")

# SOR iterations between residual evaluations
RESIDUAL_CHECK_INTERVAL = 10

# (row, column) parity of the two strided sub-lattices of each colour
RED_LATTICES = ((0, 0), (1, 1))
BLACK_LATTICES = ((0, 1), (1, 0))


class PoissonConvergenceError(RuntimeError):
    """Raised when the pressure solve misses its tolerance within the iteration cap."""

    def __init__(self, residual: float, iterations: int, step_index: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index
        where = f" at step {step_index}" if step_index is not None else ""
        super().__init__(f"Pressure Poisson solve did not converge{where}: "
                         f"residual {residual:.3e} after {iterations} iterations")


class SimulationDivergedError(RuntimeError):
    """Raised when the flow state stops being finite."""

    def __init__(self, step_index: int):
        self.step_index = step_index
        super().__init__(f"Non-finite values in flow state at step {step_index}")


class NoSheddingError(ValueError):
    """Raised when a lift signal has no dominant oscillation."""


@dataclass
class SolverConfig:
    """
    Complete solver configuration.

    Attributes:
        nx, ny: Grid cells along x and y
        domain_width, domain_height: Domain size (m)
        inlet_velocity: Inflow speed U (m/s); velocity scale for periodic runs
        density: Fluid density (kg/m^3)
        dynamic_viscosity: Dynamic viscosity (kg/(m s))
        dt: Time step (s)
        n_steps: Number of time steps
        cylinders: (center_x, center_y, diameter) per cylinder (m)
        poisson_tolerance: Target for the dimensionless divergence residual
        sample_interval: Snapshot spacing (s), an integer multiple of dt
        boundary: 'channel' (inlet/outlet/free-slip walls) or 'periodic'
        initial_condition: 'uniform' or 'taylor_green'
        advection_blend: Donor-cell weight in [0, 1]; None picks it from the CFL number
        initial_perturbation: Transverse kick (fraction of U) seeded behind the first cylinder
        sor_omega: Over-relaxation factor; None uses 2 / (1 + sin(pi / max(nx, ny)))
        max_poisson_iterations: SOR iteration cap
        transient_fraction: Leading share of simulated time treated as transient
    """
    nx: int = 256
    ny: int = 128
    domain_width: float = 0.32
    domain_height: float = 0.16
    inlet_velocity: float = 0.3
    density: float = 1.0
    dynamic_viscosity: float = 1.5e-5
    dt: float = 0.001
    n_steps: int = 20000
    cylinders: List[Tuple[float, float, float]] = field(default_factory=lambda: [(0.08, 0.08, 0.01)])
    poisson_tolerance: float = 1e-5
    sample_interval: float = 0.02
    boundary: str = "channel"
    initial_condition: str = "uniform"
    advection_blend: Optional[float] = None
    initial_perturbation: float = 0.05
    sor_omega: Optional[float] = None
    max_poisson_iterations: int = 10000
    transient_fraction: float = 0.25

    @property
    def dx(self) -> float:
        return self.domain_width / self.nx

    @property
    def dy(self) -> float:
        return self.domain_height / self.ny

    @property
    def kinematic_viscosity(self) -> float:
        return self.dynamic_viscosity / self.density

    @property
    def reynolds_number(self) -> float:
        """Re = rho U D / mu of the first cylinder (nan without cylinders)."""
        if not self.cylinders:
            return float("nan")
        return self.density * self.inlet_velocity * self.cylinders[0][2] / self.dynamic_viscosity

    @property
    def cfl_number(self) -> float:
        return self.inlet_velocity * self.dt / min(self.dx, self.dy)

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.sample_interval / self.dt))

    @property
    def omega(self) -> float:
        if self.sor_omega is not None:
            return self.sor_omega
        return 2.0 / (1.0 + math.sin(math.pi / max(self.nx, self.ny)))

    def validate(self) -> "SolverConfig":
        """
        Check the configuration.

        Returns:
            self, for chaining

        Raises:
            ValueError: On any invalid field
        """
        problems = []
        if self.nx < 4 or self.ny < 4:
            problems.append(f"grid must be at least 4x4 (got {self.nx}x{self.ny})")
        for name in ("domain_width", "domain_height", "inlet_velocity", "density",
                     "dynamic_viscosity", "dt", "sample_interval", "poisson_tolerance"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.n_steps < 0:
            problems.append("n_steps must be >= 0")
        if self.boundary not in BOUNDARY_MODES:
            problems.append(f"boundary must be one of {BOUNDARY_MODES}")
        if self.initial_condition not in INITIAL_CONDITIONS:
            problems.append(f"initial_condition must be one of {INITIAL_CONDITIONS}")
        if self.advection_blend is not None and not 0.0 <= self.advection_blend <= 1.0:
            problems.append("advection_blend must lie in [0, 1]")
        if self.sor_omega is not None and not 0.0 < self.sor_omega < 2.0:
            problems.append("sor_omega must lie in (0, 2)")
        if self.max_poisson_iterations < 1:
            problems.append("max_poisson_iterations must be >= 1")
        if not 0.0 <= self.transient_fraction < 1.0:
            problems.append("transient_fraction must lie in [0, 1)")

        if not problems:
            if not self.cfl_number < 1.0:
                problems.append(f"CFL condition violated: U*dt/dx = {self.cfl_number:.3f} >= 1")
            ratio = self.sample_interval / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                problems.append(f"sample_interval {self.sample_interval} is not an integer multiple of dt {self.dt}")
            for index, (cx, cy, diameter) in enumerate(self.cylinders):
                radius = diameter / 2.0
                if diameter <= 0:
                    problems.append(f"cylinder {index} needs a positive diameter")
                elif not (radius < cx < self.domain_width - radius and radius < cy < self.domain_height - radius):
                    problems.append(f"cylinder {index} does not fit inside the domain")

        if problems:
            message = "; ".join(problems)
            logger.error(f"Invalid solver configuration: {message}")
            raise ValueError(f"Invalid solver configuration: {message}")
        return self

    def to_mapping(self) -> Dict[str, object]:
        """Flat mapping of every field, for manifests."""
        entries: Dict[str, object] = {}
        for item in fields(self):
            value = getattr(self, item.name)
            if item.name == "cylinders":
                value = "; ".join(f"{cx!r}:{cy!r}:{d!r}" for cx, cy, d in value)
            entries[item.name] = value
        return entries


def tandem_cylinders(spacing_in_diameters: float, diameter: float = 0.01,
                     upstream: Tuple[float, float] = (0.08, 0.08)) -> List[Tuple[float, float, float]]:
    """
    Two in-line cylinders with center spacing L = spacing_in_diameters * D.

    Args:
        spacing_in_diameters: L / D (2, 3 or 4 in the reference study)
        diameter: Cylinder diameter D (m)
        upstream: Center of the upstream cylinder (m)

    Returns:
        Cylinder list for SolverConfig.cylinders
    """
    if spacing_in_diameters <= 1.0:
        raise ValueError("Cylinder spacing must exceed one diameter")
    cx, cy = upstream
    return [(cx, cy, diameter), (cx + spacing_in_diameters * diameter, cy, diameter)]


@dataclass
class FlowState:
    """Staggered solver state (with ghost layers)."""
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    t: float = 0.0
    step_index: int = 0

    def copy(self) -> "FlowState":
        return replace(self, u=self.u.copy(), v=self.v.copy(), p=self.p.copy())


@dataclass
class FlowSnapshot:
    """Cell-centered fields on the (ny, nx) grid; row 0 is the bottom of the domain."""
    t: float
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray


@dataclass
class ForceRecord:
    """Drag and lift coefficients of every cylinder at one time step."""
    t: float
    drag: Tuple[float, ...]
    lift: Tuple[float, ...]

    def rows(self) -> List[Tuple[float, int, float, float]]:
        return [(self.t, index, cd, cl) for index, (cd, cl) in enumerate(zip(self.drag, self.lift))]


class FlowSolver:
    """
    Projection-method solver bound to one configuration.

    The solver precomputes the immersed-boundary masks and the Poisson stencil
    coefficients once; ``step`` is then a pure function of the state.
    """

    def __init__(self, cfg: SolverConfig):
        """
        Initialize the FlowSolver.

        Args:
            cfg: Solver configuration (validated here)
        """
        self.cfg = cfg.validate()
        self.periodic = cfg.boundary == "periodic"
        self.last_forces: Optional[ForceRecord] = None
        self.last_poisson_iterations = 0
        self._build_geometry()
        logger.debug(f"FlowSolver ready: {cfg.nx}x{cfg.ny}, Re={cfg.reynolds_number:.1f}, "
                     f"CFL={cfg.cfl_number:.3f}, omega={cfg.omega:.4f}")

    # ------------------------------------------------------------------
    # Geometry
    # ------------------------------------------------------------------

    def _build_geometry(self) -> None:
        cfg = self.cfg
        nx, ny, dx, dy = cfg.nx, cfg.ny, cfg.dx, cfg.dy
        shape = (ny + 2, nx + 2)

        jj, ii = np.meshgrid(np.arange(ny + 2), np.arange(nx + 2), indexing="ij")
        self.x_center = (ii - 0.5) * dx
        self.y_center = (jj - 0.5) * dy
        self.x_uface, self.y_uface = ii * dx, (jj - 0.5) * dy
        self.x_vface, self.y_vface = (ii - 0.5) * dx, jj * dy

        interior = np.zeros(shape, dtype=bool)
        interior[1:-1, 1:-1] = True
        self.interior = interior

        # -1 marks fluid; otherwise the index of the cylinder covering the cell
        label = np.full(shape, -1, dtype=np.int64)
        for index, (cx, cy, diameter) in enumerate(cfg.cylinders):
            inside = (self.x_center - cx) ** 2 + (self.y_center - cy) ** 2 <= (diameter / 2.0) ** 2
            label[inside & interior & (label < 0)] = index
        self.solid_label = label
        self.solid = label >= 0
        self.fluid = interior & ~self.solid

        # Faces touching a solid cell are held at zero velocity
        u_solid = np.zeros(shape, dtype=bool)
        u_solid[:, :-1] = self.solid[:, :-1] | self.solid[:, 1:]
        v_solid = np.zeros(shape, dtype=bool)
        v_solid[:-1, :] = self.solid[:-1, :] | self.solid[1:, :]
        self.u_solid, self.v_solid = u_solid, v_solid

        # Faces corrected by the projection
        u_free = np.zeros(shape, dtype=bool)
        u_free[1:-1, 1:nx + 1] = True
        v_free = np.zeros(shape, dtype=bool)
        if self.periodic:
            v_free[1:ny + 1, 1:-1] = True
        else:
            v_free[1:ny, 1:-1] = True
        u_free &= ~u_solid
        v_free &= ~v_solid
        if self.periodic:
            u_free[:, 0] = u_free[:, nx]
            v_free[0, :] = v_free[ny, :]
        self.u_free, self.v_free = u_free, v_free

        # Poisson stencil on interior cells
        c_east = u_free[1:-1, 1:-1].astype(float) / dx ** 2
        c_west = u_free[1:-1, :-2].astype(float) / dx ** 2
        c_north = v_free[1:-1, 1:-1].astype(float) / dy ** 2
        c_south = v_free[:-2, 1:-1].astype(float) / dy ** 2
        outlet = np.zeros((ny, nx))
        if not self.periodic:
            # Outlet face: p = 0 on the boundary, half a cell from the center
            outlet[:, -1] = 2.0 * c_east[:, -1]
            c_east[:, -1] = 0.0
        self.c_east, self.c_west, self.c_north, self.c_south = c_east, c_west, c_north, c_south
        diag = c_east + c_west + c_north + c_south + outlet
        self.diag = diag
        active = diag > 0
        self.active = active
        # zero on solid cells, so their pressure never moves off 0
        self.inv_diag = np.where(active, 1.0 / np.where(active, diag, 1.0), 0.0)
        self._coefficients = [[self._sublattice_coefficients(row, col) for row, col in lattices]
                              for lattices in (RED_LATTICES, BLACK_LATTICES)]

    # ------------------------------------------------------------------
    # State construction
    # ------------------------------------------------------------------

    def initial_state(self) -> FlowState:
        """Build the t = 0 state from the configured initial condition."""
        cfg = self.cfg
        shape = (cfg.ny + 2, cfg.nx + 2)
        u = np.zeros(shape)
        v = np.zeros(shape)
        p = np.zeros(shape)
        U = cfg.inlet_velocity

        if cfg.initial_condition == "taylor_green":
            kx = 2.0 * np.pi / cfg.domain_width
            ky = 2.0 * np.pi / cfg.domain_height
            u[:] = U * np.sin(kx * self.x_uface) * np.cos(ky * self.y_uface)
            v[:] = -U * (kx / ky) * np.cos(kx * self.x_vface) * np.sin(ky * self.y_vface)
        else:
            u[:] = U
            if cfg.initial_perturbation and cfg.cylinders:
                cx, cy, diameter = cfg.cylinders[0]
                blob = np.exp(-((self.x_vface - cx - 1.5 * diameter) ** 2
                                + (self.y_vface - cy - 0.5 * diameter) ** 2) / diameter ** 2)
                v[:] = cfg.initial_perturbation * U * blob

        self._apply_velocity_bc(u, v)
        return FlowState(u=u, v=v, p=p, t=0.0, step_index=0)

    def _apply_velocity_bc(self, u: np.ndarray, v: np.ndarray) -> None:
        cfg = self.cfg
        nx, ny = cfg.nx, cfg.ny
        if self.periodic:
            for a in (u, v):
                a[:, 0] = a[:, nx]
                a[:, nx + 1] = a[:, 1]
                a[0, :] = a[ny, :]
                a[ny + 1, :] = a[1, :]
        else:
            # Velocity inlet, zero-gradient outlet
            u[:, 0] = cfg.inlet_velocity
            u[:, nx + 1] = u[:, nx]
            v[:, 0] = -v[:, 1]
            v[:, nx + 1] = v[:, nx]
            # Free-slip top and bottom
            v[0, :] = 0.0
            v[ny, :] = 0.0
            v[ny + 1, :] = 0.0
            u[0, :] = u[1, :]
            u[ny + 1, :] = u[ny, :]
        u[self.u_solid] = 0.0
        v[self.v_solid] = 0.0

    def _apply_pressure_bc(self, p: np.ndarray) -> None:
        nx, ny = self.cfg.nx, self.cfg.ny
        if self.periodic:
            p[:, 0] = p[:, nx]
            p[:, nx + 1] = p[:, 1]
            p[0, :] = p[ny, :]
            p[ny + 1, :] = p[1, :]
        else:
            p[:, 0] = p[:, 1]
            p[:, nx + 1] = -p[:, nx]
            p[0, :] = p[1, :]
            p[ny + 1, :] = p[ny, :]

    # ------------------------------------------------------------------
    # Time stepping
    # ------------------------------------------------------------------

    def blend_factor(self, u: np.ndarray, v: np.ndarray) -> float:
        """Donor-cell weight for the convective terms."""
        if self.cfg.advection_blend is not None:
            return self.cfg.advection_blend
        cfl = max(np.max(np.abs(u)) * self.cfg.dt / self.cfg.dx,
                  np.max(np.abs(v)) * self.cfg.dt / self.cfg.dy)
        return float(min(1.0, 1.2 * cfl))

    def _momentum(self, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Explicit predictor F, G on every interior face (ghosts left untouched)."""
        cfg = self.cfg
        dx, dy, dt, nu = cfg.dx, cfg.dy, cfg.dt, cfg.kinematic_viscosity
        gamma = self.blend_factor(u, v)

        # u-momentum
        c, e, w = u[1:-1, 1:-1], u[1:-1, 2:], u[1:-1, :-2]
        n, s = u[2:, 1:-1], u[:-2, 1:-1]
        lap = (e - 2.0 * c + w) / dx ** 2 + (n - 2.0 * c + s) / dy ** 2
        du2dx = (((c + e) ** 2 - (w + c) ** 2)
                 + gamma * (np.abs(c + e) * (c - e) - np.abs(w + c) * (w - c))) / (4.0 * dx)
        v_top = v[1:-1, 1:-1] + v[1:-1, 2:]
        v_bottom = v[:-2, 1:-1] + v[:-2, 2:]
        duvdy = ((v_top * (c + n) - v_bottom * (s + c))
                 + gamma * (np.abs(v_top) * (c - n) - np.abs(v_bottom) * (s - c))) / (4.0 * dy)
        F = u.copy()
        F[1:-1, 1:-1] = c + dt * (nu * lap - du2dx - duvdy)

        # v-momentum
        c, e, w = v[1:-1, 1:-1], v[1:-1, 2:], v[1:-1, :-2]
        n, s = v[2:, 1:-1], v[:-2, 1:-1]
        lap = (e - 2.0 * c + w) / dx ** 2 + (n - 2.0 * c + s) / dy ** 2
        dv2dy = (((c + n) ** 2 - (s + c) ** 2)
                 + gamma * (np.abs(c + n) * (c - n) - np.abs(s + c) * (s - c))) / (4.0 * dy)
        u_right = u[1:-1, 1:-1] + u[2:, 1:-1]
        u_left = u[1:-1, :-2] + u[2:, :-2]
        duvdx = ((u_right * (c + e) - u_left * (w + c))
                 + gamma * (np.abs(u_right) * (c - e) - np.abs(u_left) * (w - c))) / (4.0 * dx)
        G = v.copy()
        G[1:-1, 1:-1] = c + dt * (nu * lap - duvdx - dv2dy)
        return F, G

    def divergence(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Discrete divergence on interior cells, shape (ny, nx)."""
        dx, dy = self.cfg.dx, self.cfg.dy
        return (u[1:-1, 1:-1] - u[1:-1, :-2]) / dx + (v[1:-1, 1:-1] - v[:-2, 1:-1]) / dy

    def divergence_norm(self, state: FlowState) -> float:
        """Max |div u| * dx / U over fluid cells (dimensionless)."""
        div = self.divergence(state.u, state.v)[self.fluid[1:-1, 1:-1]]
        if div.size == 0:
            return 0.0
        return float(np.max(np.abs(div)) * self.cfg.dx / self.cfg.inlet_velocity)

    def _fill_periodic_ghosts(self, padded: np.ndarray) -> None:
        nx, ny = self.cfg.nx, self.cfg.ny
        padded[1:-1, 0] = padded[1:-1, nx]
        padded[1:-1, nx + 1] = padded[1:-1, 1]
        padded[0, 1:-1] = padded[ny, 1:-1]
        padded[ny + 1, 1:-1] = padded[1, 1:-1]

    def _laplacian(self, padded: np.ndarray) -> np.ndarray:
        """L(p) on the interior cells of a ghost-padded (ny + 2, nx + 2) pressure."""
        return (self.c_east * padded[1:-1, 2:] + self.c_west * padded[1:-1, :-2]
                + self.c_north * padded[2:, 1:-1] + self.c_south * padded[:-2, 1:-1]
                - self.diag * padded[1:-1, 1:-1])

    def _sublattice_coefficients(self, row: int, col: int):
        """Neighbour weights and rhs weight of one sub-lattice, pre-scaled by omega / diag."""
        inner = (slice(row, None, 2), slice(col, None, 2))
        weight = self.cfg.omega * self.inv_diag[inner]
        neighbours = tuple(np.ascontiguousarray(weight * c[inner])
                           for c in (self.c_east, self.c_west, self.c_north, self.c_south))
        return neighbours, np.ascontiguousarray(weight)

    def _sublattice_views(self, padded: np.ndarray, row: int, col: int):
        """
        Views of one strided sub-lattice: every cell (j, i) with j % 2 == row and i % 2 == col.

        The views alias ``padded``, so updating the center view updates the
        solution in place. Neighbours are returned east, west, north, south.
        """
        nx, ny = self.cfg.nx, self.cfg.ny
        rows, cols = slice(1 + row, ny + 1, 2), slice(1 + col, nx + 1, 2)
        neighbours = (
            padded[rows, slice(2 + col, nx + 2, 2)],
            padded[rows, slice(col, nx, 2)],
            padded[slice(2 + row, ny + 2, 2), cols],
            padded[slice(row, ny, 2), cols],
        )
        return padded[rows, cols], neighbours

    def solve_pressure(self, rhs: np.ndarray, p_guess: np.ndarray,
                       step_index: Optional[int] = None) -> Tuple[np.ndarray, float, int]:
        """
        Red-black SOR for L(p) = rhs on the interior cells.

        Each colour is two strided sub-lattices whose neighbours all carry the
        other colour, so a half-sweep is a fixed set of in-place slice
        operations. The residual is evaluated every RESIDUAL_CHECK_INTERVAL
        iterations.

        Args:
            rhs: (rho / dt) * div(F, G), shape (ny, nx)
            p_guess: Starting pressure, shape (ny, nx)
            step_index: Step number for error context

        Returns:
            Tuple of (pressure, dimensionless residual, iterations)

        Raises:
            PoissonConvergenceError: If the residual stays above tolerance
        """
        cfg = self.cfg
        relax = 1.0 - cfg.omega
        # residual of the Poisson equation expressed as a dimensionless divergence
        scale = cfg.dt / cfg.density * cfg.dx / cfg.inlet_velocity
        active = self.active
        rhs = np.where(active, rhs, 0.0)
        padded = np.zeros((cfg.ny + 2, cfg.nx + 2))
        interior = padded[1:-1, 1:-1]
        interior[...] = np.where(active, p_guess, 0.0)

        colours = []
        for lattices, coefficients in zip((RED_LATTICES, BLACK_LATTICES), self._coefficients):
            colour = []
            for (row, col), (weights, rhs_weight) in zip(lattices, coefficients):
                center, neighbours = self._sublattice_views(padded, row, col)
                forcing = rhs_weight * rhs[row::2, col::2]
                colour.append((center, tuple(zip(weights, neighbours)), forcing,
                               np.empty_like(forcing)))
            colours.append(colour)

        def residual() -> float:
            if self.periodic:
                self._fill_periodic_ghosts(padded)
            r = (rhs - self._laplacian(padded))[active]
            return float(np.max(np.abs(r)) * scale) if r.size else 0.0

        res = residual()
        iterations = 0
        while not res <= cfg.poisson_tolerance:
            if iterations >= cfg.max_poisson_iterations:
                logger.error(f"Poisson solve failed at step {step_index}: residual {res:.3e}")
                raise PoissonConvergenceError(res, iterations, step_index)
            for colour in colours:
                if self.periodic:
                    self._fill_periodic_ghosts(padded)
                # p <- (1 - omega) p + omega * (sum(c_k p_k) - rhs) / diag
                for center, terms, forcing, scratch in colour:
                    center *= relax
                    for weight, value in terms:
                        np.multiply(weight, value, out=scratch)
                        center += scratch
                    center -= forcing
            if self.periodic:
                interior[active] -= interior[active].mean()
            iterations += 1
            if iterations % RESIDUAL_CHECK_INTERVAL == 0 or iterations >= cfg.max_poisson_iterations:
                res = residual()
        return interior.copy(), res, iterations

    def step(self, state: FlowState) -> FlowState:
        """
        Advance the state by one time step.

        Args:
            state: Current state (not modified)

        Returns:
            New state at t + dt

        Raises:
            PoissonConvergenceError: If the pressure solve fails
            SimulationDivergedError: If the new state is not finite
        """
        cfg = self.cfg
        step_index = state.step_index + 1
        u = state.u.copy()
        v = state.v.copy()
        self._apply_velocity_bc(u, v)

        F, G = self._momentum(u, v)
        F_raw, G_raw = F.copy(), G.copy()
        self._apply_velocity_bc(F, G)

        rhs = cfg.density / cfg.dt * self.divergence(F, G)
        if not np.isfinite(rhs).all():
            logger.error(f"Simulation diverged at step {step_index}")
            raise SimulationDivergedError(step_index)
        p_interior, residual, iterations = self.solve_pressure(rhs, state.p[1:-1, 1:-1], step_index)
        self.last_poisson_iterations = iterations
        p = np.zeros_like(state.p)
        p[1:-1, 1:-1] = p_interior
        self._apply_pressure_bc(p)

        factor = cfg.dt / cfg.density
        u_new = F.copy()
        v_new = G.copy()
        grad_x = np.zeros_like(F)
        grad_x[:, :-1] = (p[:, 1:] - p[:, :-1]) / cfg.dx
        grad_y = np.zeros_like(G)
        grad_y[:-1, :] = (p[1:, :] - p[:-1, :]) / cfg.dy
        u_new[self.u_free] -= factor * grad_x[self.u_free]
        v_new[self.v_free] -= factor * grad_y[self.v_free]
        self._apply_velocity_bc(u_new, v_new)

        if not (np.isfinite(u_new).all() and np.isfinite(v_new).all() and np.isfinite(p).all()):
            logger.error(f"Simulation diverged at step {step_index}")
            raise SimulationDivergedError(step_index)

        new_state = FlowState(u=u_new, v=v_new, p=p, t=step_index * cfg.dt, step_index=step_index)
        if cfg.cylinders:
            self.last_forces = self._forces(F_raw, G_raw, p, new_state.t)
        logger.debug(f"step {step_index}: poisson iterations={iterations}, residual={residual:.2e}")
        return new_state

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    def _forces(self, F_raw: np.ndarray, G_raw: np.ndarray, p: np.ndarray, t: float) -> ForceRecord:
        """
        Drag and lift per cylinder.

        Momentum removed by the direct forcing on solid-touching faces gives the
        viscous and convective part; pressure acts on every fluid/solid face.
        """
        cfg = self.cfg
        dx, dy, dt, rho = cfg.dx, cfg.dy, cfg.dt, cfg.density
        label = self.solid_label
        count = len(cfg.cylinders)
        fx = np.zeros(count)
        fy = np.zeros(count)

        # Forcing term on faces touching a solid cell
        u_owner = np.maximum(label, np.roll(label, -1, axis=1))
        v_owner = np.maximum(label, np.roll(label, -1, axis=0))
        for index in range(count):
            u_mask = self.u_solid & (u_owner == index)
            v_mask = self.v_solid & (v_owner == index)
            fx[index] += rho * np.sum(F_raw[u_mask]) * dx * dy / dt
            fy[index] += rho * np.sum(G_raw[v_mask]) * dx * dy / dt

        # Pressure on fluid/solid interfaces
        fluid = self.fluid
        east_solid = np.roll(label, -1, axis=1)
        west_solid = np.roll(label, 1, axis=1)
        north_solid = np.roll(label, -1, axis=0)
        south_solid = np.roll(label, 1, axis=0)
        for index in range(count):
            fx[index] += dy * (np.sum(p[fluid & (east_solid == index)]) - np.sum(p[fluid & (west_solid == index)]))
            fy[index] += dx * (np.sum(p[fluid & (north_solid == index)]) - np.sum(p[fluid & (south_solid == index)]))

        drag, lift = [], []
        for index, (_, _, diameter) in enumerate(cfg.cylinders):
            dynamic = 0.5 * rho * cfg.inlet_velocity ** 2 * diameter
            drag.append(float(fx[index] / dynamic))
            lift.append(float(fy[index] / dynamic))
        return ForceRecord(t=t, drag=tuple(drag), lift=tuple(lift))

    def kinetic_energy(self, state: FlowState) -> float:
        """Total kinetic energy per unit depth."""
        cfg = self.cfg
        u = state.u[1:-1, 1:-1]
        v = state.v[1:-1, 1:-1]
        return float(0.5 * cfg.density * (np.sum(u ** 2) + np.sum(v ** 2)) * cfg.dx * cfg.dy)

    def snapshot(self, state: FlowState) -> FlowSnapshot:
        """Interpolate the staggered state to cell centers."""
        u = 0.5 * (state.u[1:-1, 1:-1] + state.u[1:-1, :-2])
        v = 0.5 * (state.v[1:-1, 1:-1] + state.v[:-2, 1:-1])
        p = np.where(self.solid[1:-1, 1:-1], 0.0, state.p[1:-1, 1:-1])
        return FlowSnapshot(t=state.t, u=u, v=v, p=p)


def step(state: FlowState, cfg: SolverConfig) -> FlowState:
    """Advance one time step with a solver built for ``cfg``."""
    return FlowSolver(cfg).step(state)


def run_simulation(cfg: SolverConfig,
                   on_snapshot: Optional[Callable[[FlowSnapshot], None]] = None,
                   on_forces: Optional[Callable[[ForceRecord], None]] = None
                   ) -> Tuple[List[FlowSnapshot], List[ForceRecord]]:
    """
    Run the configured number of steps.

    Snapshots are taken at t = k * sample_interval (k >= 1); a force record is
    emitted every step. When a callback is given the corresponding stream is
    handed to it instead of being collected.

    Args:
        cfg: Solver configuration
        on_snapshot: Optional sink for snapshots
        on_forces: Optional sink for force records

    Returns:
        Tuple of (snapshots, force records) that were not passed to sinks
    """
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    snapshots: List[FlowSnapshot] = []
    records: List[ForceRecord] = []
    every = cfg.steps_per_sample
    report_every = max(1, cfg.n_steps // 10)

    logger.info(f"Starting simulation: {cfg.n_steps} steps, dt={cfg.dt}, grid {cfg.nx}x{cfg.ny}, "
                f"Re={cfg.reynolds_number:.1f}")
    for _ in range(cfg.n_steps):
        try:
            state = solver.step(state)
        except (PoissonConvergenceError, SimulationDivergedError) as e:
            logger.error(f"Simulation stopped at t={state.t:.4f}s: {e}")
            raise

        if solver.last_forces is not None:
            if on_forces is not None:
                on_forces(solver.last_forces)
            else:
                records.append(solver.last_forces)

        if state.step_index % every == 0:
            snap = solver.snapshot(state)
            if on_snapshot is not None:
                on_snapshot(snap)
            else:
                snapshots.append(snap)

        if state.step_index % report_every == 0:
            logger.info(f"t={state.t:.3f}s ({state.step_index}/{cfg.n_steps}), "
                        f"divergence={solver.divergence_norm(state):.2e}")

    logger.info(f"Simulation finished at t={state.t:.3f}s")
    return snapshots, records


def strouhal(records: Sequence[ForceRecord], cfg: SolverConfig, cylinder: int = 0,
             transient_fraction: Optional[float] = None) -> float:
    """
    Strouhal number St = f D / U from the dominant lift frequency.

    Args:
        records: Force records, one per time step
        cfg: Configuration providing D and U
        cylinder: Which cylinder's lift to analyse
        transient_fraction: Leading share of time to discard (cfg value by default)

    Returns:
        Strouhal number

    Raises:
        NoSheddingError: If the signal has no dominant peak
    """
    if transient_fraction is None:
        transient_fraction = cfg.transient_fraction
    if not records:
        raise NoSheddingError("no shedding detected (empty lift signal)")

    t = np.array([record.t for record in records])
    lift = np.array([record.lift[cylinder] for record in records])
    keep = t >= transient_fraction * t[-1]
    t, lift = t[keep], lift[keep]
    if lift.size < 8:
        raise NoSheddingError("no shedding detected (signal too short)")

    sample_dt = float(np.median(np.diff(t)))
    signal = lift - lift.mean()
    if np.std(signal) <= 1e-12 * max(1.0, abs(lift.mean())):
        logger.error("Lift signal is constant; no shedding detected")
        raise NoSheddingError("no shedding detected")

    spectrum = np.abs(np.fft.rfft(signal * np.hanning(signal.size)))
    power = spectrum[1:] ** 2
    peak = int(np.argmax(power)) + 1
    noise_floor = float(np.median(power))
    if power[peak - 1] < 10.0 * noise_floor:
        logger.error("Lift spectrum has no dominant peak above the noise floor")
        raise NoSheddingError("no shedding detected")

    # Parabolic refinement of the peak on the log spectrum
    offset = 0.0
    if 1 <= peak < spectrum.size - 1:
        a, b, c = np.log(spectrum[peak - 1: peak + 2] + 1e-300)
        denominator = a - 2.0 * b + c
        if denominator != 0.0:
            offset = 0.5 * (a - c) / denominator
    frequency = (peak + offset) / (signal.size * sample_dt)

    periods = frequency * signal.size * sample_dt
    if periods < 10:
        logger.warning(f"Lift signal covers only {periods:.1f} shedding periods after the transient")

    diameter = cfg.cylinders[cylinder][2] if cfg.cylinders else 1.0
    st = frequency * diameter / cfg.inlet_velocity
    logger.info(f"Dominant lift frequency {frequency:.4f} Hz, St={st:.4f}")
    return float(st)
