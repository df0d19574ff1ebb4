"""The four physics problems: residual operators, domains, IC/BC sets, references.

Each problem is a ``ProblemSpec`` bundling the PDE residual (written against
the forward-mode dual machinery so second input derivatives are exact), the
initial/boundary condition samplers, the reference-solution oracle, and the
domain geometry used for input normalization and collocation sampling.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import autodiff as ad
from .errors import ConfigurationError

Array = np.ndarray

# hard cap on any single sampled point set; guards accidental paper-scale
# requests on desk machines
MAX_SAMPLE_POINTS = 2**21


@dataclass(frozen=True)
class IcBcSet:
    """One initial- or boundary-condition constraint set.

    ``sample(n, rng)`` returns (coords, context, targets). ``kind`` is
    "value" for Dirichlet-style targets on the network output, or
    "derivative" for targets on d(output)/d(coord ``deriv_dim``).
    """

    name: str
    sample: Callable[[int, np.random.Generator], tuple[Array, Array, Array]]
    kind: str = "value"
    deriv_dim: int | None = None


@dataclass(frozen=True)
class ProblemSpec:
    """One physics problem: geometry, residual operator, IC/BC, reference."""

    name: str
    coord_names: tuple[str, ...]
    bounds: Array  # (d, 2) per-coordinate (low, high)
    context_names: tuple[str, ...]
    context_bounds: Array  # (c, 2)
    residual: Callable  # (fwd, coords (n,d), context (n,c)) -> (n,) payload
    ic_bc: tuple[IcBcSet, ...]
    reference: Callable | None  # (coords, context) -> (n,)
    data_region: Array  # (d, 2) sub-box where noisy observations live
    output_norm: tuple[float, float] = (0.0, 1.0)
    focus_region: Array | None = None  # sub-box for the "focus" sampling strategy
    warmstart: Callable | None = None  # (coords, context) -> rough field for net seeding
    meta: dict = field(default_factory=dict)

    @property
    def n_coords(self) -> int:
        return len(self.coord_names)

    @property
    def n_context(self) -> int:
        return len(self.context_names)

    def input_norm(self) -> tuple[Array, Array]:
        """Affine (shift, scale) mapping domain+context roughly onto [-1, 1]."""
        lo = np.concatenate([self.bounds[:, 0], self.context_bounds[:, 0]])
        hi = np.concatenate([self.bounds[:, 1], self.context_bounds[:, 1]])
        shift = 0.5 * (lo + hi)
        scale = 0.5 * (hi - lo)
        scale[scale == 0] = 1.0
        return shift, scale

    def sample_unit(self, u: Array) -> tuple[Array, Array]:
        """Map unit-cube rows (n, d+c) to physical (coords, context)."""
        d = self.n_coords
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        coords = lo + u[:, :d] * (hi - lo)
        if self.n_context:
            clo, chi = self.context_bounds[:, 0], self.context_bounds[:, 1]
            context = clo + u[:, d:] * (chi - clo)
        else:
            context = np.zeros((u.shape[0], 0))
        return coords, context


def _sobol(d: int, n: int) -> Array:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # scipy warns when n is not a power of 2
        return qmc.Sobol(d=d, scramble=False).random(n)


def sobol_unit(d: int, n: int) -> Array:
    """First n points of the unscrambled d-dimensional Sobol sequence."""
    if n > MAX_SAMPLE_POINTS:
        raise ConfigurationError(
            f"requested {n} points exceeds budget {MAX_SAMPLE_POINTS}"
        )
    return _sobol(d, n)


def sample_collocation(
    problem: ProblemSpec,
    n: int,
    strategy: str = "sobol",
    seed: int = 0,
    f_sph: float = 0.5,
) -> tuple[Array, Array]:
    """Sample interior collocation points; deterministic given the seed.

    "sobol" draws the first n Sobol points over the full space-time (and
    context) box. "laser-ball" (LPBF only) draws a fraction ``f_sph``
    uniformly inside balls of radius 3r centered on the instantaneous laser
    position at uniformly drawn scan progress, remainder Sobol.
    """
    if n < 1:
        raise ConfigurationError("need at least one collocation point")
    if n > MAX_SAMPLE_POINTS:
        raise ConfigurationError(
            f"requested {n} points exceeds budget {MAX_SAMPLE_POINTS}"
        )
    if strategy == "sobol":
        u = sobol_unit(problem.n_coords + problem.n_context, n)
        return problem.sample_unit(u)
    if strategy == "focus":
        # half the points over the full box, half over the focus sub-box
        # (drawn from the continuation of the same Sobol stream)
        if problem.focus_region is None:
            raise ConfigurationError(f"problem '{problem.name}' has no focus region")
        n_full = n // 2
        u = sobol_unit(problem.n_coords + problem.n_context, n)
        coords, context = problem.sample_unit(u[:n_full])
        lo, hi = problem.focus_region[:, 0], problem.focus_region[:, 1]
        coords_f = lo + u[n_full:, : problem.n_coords] * (hi - lo)
        return np.concatenate([coords, coords_f]), np.concatenate(
            [context, np.zeros((n - n_full, problem.n_context))]
        )
    if strategy == "laser-ball":
        if problem.name != "lpbf":
            raise ConfigurationError("laser-ball sampling is specific to lpbf")
        return _sample_lpbf_laser_ball(problem, n, seed, f_sph)
    raise ConfigurationError(f"unknown collocation strategy '{strategy}'")


# ---------------------------------------------------------------------------
# Simple harmonic oscillator: x'' + x = 0, x(0)=1, x'(0)=0
# ---------------------------------------------------------------------------


def _as_fwd(net):
    """Accept an Mlp or any callable mapping a column list to a payload."""
    if hasattr(net, "forward_cols"):
        return lambda cols: net.forward_cols(cols)
    return net


def sho_reference(t) -> Array:
    return np.cos(np.asarray(t, dtype=np.float64))


def sho_residual(net, t, params=None):
    """x''(t) + x(t) for the network's x(t)."""
    fwd = _as_fwd(net)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = ad.dual2_eval(fwd, [t], seeds=[0])
    return out.hess[0] + out.val


def make_sho_problem(t_max: float = 2.0 * np.pi) -> ProblemSpec:
    bounds = np.array([[0.0, t_max]])

    def residual(fwd, coords, context):
        out = ad.dual2_eval(fwd, [coords[:, 0]], seeds=[0])
        return out.hess[0] + out.val

    def ic_value(n, rng):
        return np.array([[0.0]]), np.zeros((1, 0)), np.array([1.0])

    def ic_deriv(n, rng):
        return np.array([[0.0]]), np.zeros((1, 0)), np.array([0.0])

    return ProblemSpec(
        name="sho",
        coord_names=("t",),
        bounds=bounds,
        context_names=(),
        context_bounds=np.zeros((0, 2)),
        residual=residual,
        ic_bc=(
            IcBcSet("ic_position", ic_value),
            IcBcSet("ic_velocity", ic_deriv, kind="derivative", deriv_dim=0),
        ),
        reference=lambda coords, context=None: sho_reference(coords[:, 0]),
        data_region=bounds.copy(),
    )


# ---------------------------------------------------------------------------
# Burgers: u_t + u u_x = nu u_xx on [-1,1] x [0,1], u(x,0) = -sin(pi x)
# ---------------------------------------------------------------------------

BURGERS_NU = 0.01 / np.pi


def burgers_reference(x, t, nu: float = BURGERS_NU, quad_nodes: int = 64) -> Array:
    """Cole-Hopf integral solution evaluated by Gauss-Hermite quadrature.

    At t = 0 the quadrature degenerates and the initial condition is
    returned directly.
    """
    if nu <= 0:
        raise ConfigurationError("viscosity must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    x, t = np.broadcast_arrays(x, t)
    out = np.empty(x.shape)
    at0 = t == 0.0
    out[at0] = -np.sin(np.pi * x[at0])
    live = ~at0
    if np.any(live):
        qx, qw = np.polynomial.hermite.hermgauss(quad_nodes)
        xl = x[live][:, None]
        cl = 2.0 * np.sqrt(nu * t[live])[:, None]
        arg = np.pi * (xl - cl * qx[None, :])
        w = qw[None, :] * np.exp(-np.cos(arg) / (2.0 * np.pi * nu))
        out[live] = -np.sum(w * np.sin(arg), axis=1) / np.sum(w, axis=1)
    return out


def burgers_residual(net, x, t, nu: float = BURGERS_NU):
    """u_t + u u_x - nu u_xx for the network's u(x, t)."""
    fwd = _as_fwd(net)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = ad.dual2_eval(fwd, [x, t], seeds=[0, 1])
    return out.grad[1] + out.val * out.grad[0] - nu * out.hess[0]


def make_burgers_problem(nu: float = BURGERS_NU) -> ProblemSpec:
    bounds = np.array([[-1.0, 1.0], [0.0, 1.0]])

    def residual(fwd, coords, context):
        out = ad.dual2_eval(fwd, [coords[:, 0], coords[:, 1]], seeds=[0, 1])
        return out.grad[1] + out.val * out.grad[0] - nu * out.hess[0]

    def ic(n, rng):
        xs = rng.uniform(-1.0, 1.0, size=n)
        coords = np.column_stack([xs, np.zeros(n)])
        return coords, np.zeros((n, 0)), -np.sin(np.pi * xs)

    def bc(n, rng):
        ts = rng.uniform(0.0, 1.0, size=n)
        sides = np.where(np.arange(n) % 2 == 0, -1.0, 1.0)
        coords = np.column_stack([sides, ts])
        return coords, np.zeros((n, 0)), np.zeros(n)

    return ProblemSpec(
        name="burgers",
        coord_names=("x", "t"),
        bounds=bounds,
        context_names=(),
        context_bounds=np.zeros((0, 2)),
        residual=residual,
        ic_bc=(IcBcSet("ic", ic), IcBcSet("bc_dirichlet", bc)),
        reference=lambda coords, context=None: burgers_reference(
            coords[:, 0], coords[:, 1], nu
        ),
        data_region=bounds.copy(),
        meta={"nu": nu},
    )


# ---------------------------------------------------------------------------
# Laplace with concentrated source on [0,10]^2, homogeneous Dirichlet BC
# ---------------------------------------------------------------------------


def laplace_source(x, y) -> Array:
    """Source b(x, y): two mirrored Gaussian-bump terms centered at (5, 5)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gx = np.exp(-10.0 * (x - 5.0) ** 2)
    gy = np.exp(-10.0 * (y - 5.0) ** 2)
    tail = np.exp(-250.0)
    return (20.0 - 400.0 * (x - 5.0) ** 2) * gx * (gy - tail) + (gx - tail) * (
        20.0 - 400.0 * (y - 5.0) ** 2
    ) * gy


def laplace_reference(x, y) -> Array:
    """u_true(x, y) = (e^{-10(x-5)^2} - e^{-250})(e^{-10(y-5)^2} - e^{-250})."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tail = np.exp(-250.0)
    return (np.exp(-10.0 * (x - 5.0) ** 2) - tail) * (
        np.exp(-10.0 * (y - 5.0) ** 2) - tail
    )


def laplace_residual(net, x, y):
    """Laplacian of the network plus the source: u_xx + u_yy + b."""
    fwd = _as_fwd(net)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out = ad.dual2_eval(fwd, [x, y], seeds=[0, 1])
    return out.hess[0] + out.hess[1] + laplace_source(x, y)


def make_laplace_problem() -> ProblemSpec:
    bounds = np.array([[0.0, 10.0], [0.0, 10.0]])

    def residual(fwd, coords, context):
        out = ad.dual2_eval(fwd, [coords[:, 0], coords[:, 1]], seeds=[0, 1])
        return out.hess[0] + out.hess[1] + laplace_source(coords[:, 0], coords[:, 1])

    def bc(n, rng):
        # n points spread round-robin over the four edges
        s = rng.uniform(0.0, 10.0, size=n)
        edge = np.arange(n) % 4
        xs = np.where(edge == 0, 0.0, np.where(edge == 1, 10.0, s))
        ys = np.where(edge == 2, 0.0, np.where(edge == 3, 10.0, s))
        coords = np.column_stack([xs, ys])
        return coords, np.zeros((n, 0)), np.zeros(n)

    return ProblemSpec(
        name="laplace",
        coord_names=("x", "y"),
        bounds=bounds,
        context_names=(),
        context_bounds=np.zeros((0, 2)),
        residual=residual,
        ic_bc=(IcBcSet("bc_dirichlet", bc),),
        reference=lambda coords, context=None: laplace_reference(
            coords[:, 0], coords[:, 1]
        ),
        data_region=np.array([[4.0, 6.0], [4.0, 6.0]]),
        focus_region=np.array([[3.0, 7.0], [3.0, 7.0]]),
    )


# ---------------------------------------------------------------------------
# LPBF transient conduction with a moving semi-ellipsoidal Gaussian source
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeatSourceParams:
    """Laser parameters for the volumetric heat source (SI units)."""

    power: float  # P, W
    absorption: float  # alpha, dimensionless
    radius: float = 50e-6  # r, m (beam radius; not stated by the data source)
    penetration: float = 30e-6  # c, m (penetration depth)
    speed: float = 1.5  # v, m/s

    def __post_init__(self):
        if self.power <= 0:
            raise ConfigurationError("laser power must be positive")
        if not 0 < self.absorption <= 1:
            raise ConfigurationError("absorption must be in (0, 1]")
        if self.radius <= 0 or self.penetration <= 0 or self.speed <= 0:
            raise ConfigurationError("radius, penetration, speed must be positive")


@dataclass(frozen=True)
class MaterialParams:
    """Material constants (SI units, temperature in degrees C)."""

    rho0: float = 8352.0  # reference density, kg/m^3
    cp_app: float = 605.0  # apparent specific heat, J/(kg K)
    k: float = 208.0  # effective conductivity, W/(m K)
    t0: float = 25.0  # initial temperature, C

    def __post_init__(self):
        if self.rho0 <= 0 or self.cp_app <= 0 or self.k <= 0:
            raise ConfigurationError("material constants must be strictly positive")

    @property
    def rho_cp(self) -> float:
        return self.rho0 * self.cp_app


def lpbf_heat_source(x, y, z, t, hs: HeatSourceParams):
    """Volumetric heat input q_vol (W/m^3) of the moving laser.

    Semi-ellipsoidal Gaussian centered at (x, y) = (-v t, 0) on the top
    surface, decaying into the material along z with depth scale c. Accepts
    dual payloads for the coordinates.
    """
    peak = hs.absorption * 6.0 * np.sqrt(3.0) * hs.power / (
        np.pi * np.sqrt(np.pi) * hs.radius**3
    )
    xl = x + hs.speed * t
    radial = (xl * xl + y * y) * (-3.0 / hs.radius**2)
    depth = z * z * (-3.0 / hs.penetration**2)
    return peak * ad.exp(radial) * ad.exp(depth)


def lpbf_residual(
    net,
    x,
    y,
    z,
    t,
    hs: HeatSourceParams,
    mat: MaterialParams,
    residual_scale: float = 1.0,
):
    """Conduction residual rho0 Cp T_t - k (T_xx+T_yy+T_zz) - q_vol, scaled.

    The network takes the eight inputs (x, y, z, t, P*alpha, v, k, rho0*Cp);
    conductivity and heat capacity are spatially constant per run, so the
    divergence term reduces to k times the Laplacian.
    """
    fwd = _as_fwd(net)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    n = x.size
    pa = np.full(n, hs.power * hs.absorption)
    v = np.full(n, hs.speed)
    kcol = np.full(n, mat.k)
    rc = np.full(n, mat.rho_cp)

    def f(cols):
        return fwd(cols + [pa, v, kcol, rc])

    out = ad.dual2_eval(f, [x, y, z, t], seeds=[0, 1, 2, 3])
    q = lpbf_heat_source(x, y, z, t, hs)
    res = mat.rho_cp * out.grad[3] - mat.k * (
        out.hess[0] + out.hess[1] + out.hess[2]
    ) - q
    return res * (1.0 / residual_scale)


@dataclass(frozen=True)
class LpbfConfig:
    """Geometry, material, and process-parameter ranges for the LPBF problem.

    The box is 2.8 x 2.0 x 1.03 mm^3 with z positive downward into the
    substrate; the laser travels along x on the top surface z=0 over a
    1.5 mm track starting at the origin.
    """

    x_bounds: tuple[float, float] = (-2.15e-3, 0.65e-3)
    y_bounds: tuple[float, float] = (-1.0e-3, 1.0e-3)
    z_bounds: tuple[float, float] = (0.0, 1.03e-3)
    track_length: float = 1.5e-3
    radius: float = 50e-6
    penetration: float = 30e-6
    pa_range: tuple[float, float] = (96.0, 144.0)  # P*alpha, W
    v_range: tuple[float, float] = (1.464, 1.607)  # m/s
    k_range: tuple[float, float] = (207.0, 209.0)  # W/(m K)
    rho_cp_range: tuple[float, float] = (5.054e6, 5.113e6)  # J/(m^3 K)
    t0: float = 25.0
    t_melt: float = 1355.0

    @property
    def t_max(self) -> float:
        return self.track_length / self.v_range[0]

    @property
    def residual_scale(self) -> float:
        """Peak volumetric heat input at mid-range laser parameters.

        Scaling the residual by the source peak keeps the cost of ignoring
        the laser at O(1); scaling by the slower bulk-heating rate
        rho Cp dT/t_scan leaves the source term orders of magnitude below
        the network's own curvature noise and the trivial ambient field
        wins.
        """
        pa_ref = 0.5 * (self.pa_range[0] + self.pa_range[1])
        return 6.0 * np.sqrt(3.0) * pa_ref / (np.pi * np.sqrt(np.pi) * self.radius**3)


def lpbf_transient_field(
    coords: Array, context: Array, cfg: "LpbfConfig", quad_nodes: int = 48
) -> Array:
    """Transient conduction solution for the moving Gaussian source.

    Green's-function quadrature: the volumetric Gaussian source convolved
    with the heat kernel stays Gaussian, leaving a single time integral,
    evaluated here with Gauss-Legendre nodes per point. The field satisfies
    the ambient initial condition exactly and, being even in z, the
    insulated top surface too; the far-field boundaries hold to the decay
    of the source. Exact up to the finite domain and quadrature error.
    """
    x, y, z, t = (coords[:, i] for i in range(4))
    pa, v, k, rho_cp = (context[:, i] for i in range(4))
    a = k / rho_cp
    # source variances per axis: exp(-3 u^2 / w^2) = exp(-u^2 / (2 w^2 / 6))
    sx2 = cfg.radius**2 / 6.0
    sz2 = cfg.penetration**2 / 6.0
    amp = 6.0 * np.sqrt(3.0) * pa / (np.pi * np.sqrt(np.pi) * cfg.radius**3)
    # integral over emission time tau in [0, t]
    nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
    tau = 0.5 * t[:, None] * (nodes[None, :] + 1.0)
    w = 0.5 * t[:, None] * weights[None, :]
    delta = t[:, None] - tau
    vx2 = sx2 + 2.0 * a[:, None] * delta
    vz2 = sz2 + 2.0 * a[:, None] * delta
    gauss = np.exp(
        -((x[:, None] + v[:, None] * tau) ** 2 + y[:, None] ** 2) / (2.0 * vx2)
        - z[:, None] ** 2 / (2.0 * vz2)
    )
    prefac = (sx2 / vx2) * np.sqrt(sz2 / vz2)
    rise = (amp / rho_cp)[:, None] * prefac * gauss
    return cfg.t0 + np.sum(w * rise, axis=1)


def make_lpbf_problem(cfg: LpbfConfig | None = None) -> ProblemSpec:
    cfg = cfg or LpbfConfig()
    bounds = np.array(
        [cfg.x_bounds, cfg.y_bounds, cfg.z_bounds, (0.0, cfg.t_max)]
    )
    context_bounds = np.array(
        [cfg.pa_range, cfg.v_range, cfg.k_range, cfg.rho_cp_range]
    )
    scale = cfg.residual_scale

    def residual(fwd, coords, context):
        x, y, z, t = (coords[:, i] for i in range(4))
        pa, v, k, rc = (context[:, i] for i in range(4))

        def f(cols):
            return fwd(cols + [pa, v, k, rc])

        out = ad.dual2_eval(f, [x, y, z, t], seeds=[0, 1, 2, 3])
        peak = 6.0 * np.sqrt(3.0) * pa / (np.pi * np.sqrt(np.pi) * cfg.radius**3)
        xl = x + v * t
        q = peak * np.exp(-3.0 * (xl * xl + y * y) / cfg.radius**2) * np.exp(
            -3.0 * z * z / cfg.penetration**2
        )
        res = rc * out.grad[3] - k * (out.hess[0] + out.hess[1] + out.hess[2]) - q
        return res * (1.0 / scale)

    def _context(n, rng):
        lo, hi = context_bounds[:, 0], context_bounds[:, 1]
        return lo + rng.random((n, 4)) * (hi - lo)

    def ic(n, rng):
        lo = bounds[:3, 0]
        hi = bounds[:3, 1]
        xyz = lo + rng.random((n, 3)) * (hi - lo)
        coords = np.column_stack([xyz, np.zeros(n)])
        return coords, _context(n, rng), np.full(n, cfg.t0)

    def bc_dirichlet(n, rng):
        # five Dirichlet faces: x low/high, y low/high, z deep
        coords = np.empty((n, 4))
        ctx = _context(n, rng)
        u = rng.random((n, 3))
        coords[:, 0] = bounds[0, 0] + u[:, 0] * (bounds[0, 1] - bounds[0, 0])
        coords[:, 1] = bounds[1, 0] + u[:, 1] * (bounds[1, 1] - bounds[1, 0])
        coords[:, 2] = bounds[2, 0] + u[:, 2] * (bounds[2, 1] - bounds[2, 0])
        coords[:, 3] = rng.random(n) * cfg.track_length / ctx[:, 1]
        face = np.arange(n) % 5
        coords[face == 0, 0] = bounds[0, 0]
        coords[face == 1, 0] = bounds[0, 1]
        coords[face == 2, 1] = bounds[1, 0]
        coords[face == 3, 1] = bounds[1, 1]
        coords[face == 4, 2] = bounds[2, 1]
        return coords, ctx, np.full(n, cfg.t0)

    def bc_top_insulated(n, rng):
        ctx = _context(n, rng)
        u = rng.random((n, 2))
        coords = np.empty((n, 4))
        coords[:, 0] = bounds[0, 0] + u[:, 0] * (bounds[0, 1] - bounds[0, 0])
        coords[:, 1] = bounds[1, 0] + u[:, 1] * (bounds[1, 1] - bounds[1, 0])
        coords[:, 2] = 0.0
        coords[:, 3] = rng.random(n) * cfg.track_length / ctx[:, 1]
        return coords, ctx, np.zeros(n)

    return ProblemSpec(
        name="lpbf",
        coord_names=("x", "y", "z", "t"),
        bounds=bounds,
        context_names=("pa", "v", "k", "rho_cp"),
        context_bounds=context_bounds,
        residual=residual,
        ic_bc=(
            IcBcSet("ic_ambient", ic),
            IcBcSet("bc_far_field", bc_dirichlet),
            IcBcSet("bc_top_insulated", bc_top_insulated, kind="derivative", deriv_dim=2),
        ),
        reference=None,
        data_region=bounds.copy(),
        output_norm=(cfg.t0, cfg.t_melt - cfg.t0),
        warmstart=lambda coords, context: lpbf_transient_field(coords, context, cfg),
        meta={"config": cfg},
    )


def _sample_lpbf_laser_ball(problem: ProblemSpec, n, seed, f_sph):
    cfg: LpbfConfig = problem.meta["config"]
    rng = np.random.default_rng(seed)
    n_sph = int(round(f_sph * n))
    n_sob = n - n_sph
    parts_coords, parts_ctx = [], []
    if n_sob:
        u = sobol_unit(8, n_sob)
        # dimension 3 is scan progress; convert to time per-row below
        coords, ctx = problem.sample_unit(u)
        coords[:, 3] = u[:, 3] * cfg.track_length / ctx[:, 1]
        parts_coords.append(coords)
        parts_ctx.append(ctx)
    if n_sph:
        clo, chi = problem.context_bounds[:, 0], problem.context_bounds[:, 1]
        ctx = clo + rng.random((n_sph, 4)) * (chi - clo)
        t = rng.random(n_sph) * cfg.track_length / ctx[:, 1]
        center = np.column_stack(
            [-ctx[:, 1] * t, np.zeros(n_sph), np.zeros(n_sph)]
        )
        dirs = rng.normal(size=(n_sph, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = 3.0 * cfg.radius * rng.random(n_sph) ** (1.0 / 3.0)
        # a slice of the ball points sits on the beam axis itself, where the
        # field varies fastest and the melt-pool signal is read
        on_axis = rng.random(n_sph) < 0.15
        radii[on_axis] = 0.0
        offset = dirs * radii[:, None]
        pts = center + offset
        pts[:, 2] = np.abs(pts[:, 2])  # reflect into the substrate
        coords = np.column_stack([pts, t])
        parts_coords.append(coords)
        parts_ctx.append(ctx)
    return np.concatenate(parts_coords), np.concatenate(parts_ctx)


def make_problem(name: str, **kw) -> ProblemSpec:
    makers = {
        "sho": make_sho_problem,
        "burgers": make_burgers_problem,
        "laplace": make_laplace_problem,
        "lpbf": make_lpbf_problem,
    }
    if name not in makers:
        raise ConfigurationError(f"unknown problem '{name}'")
    return makers[name](**kw)
