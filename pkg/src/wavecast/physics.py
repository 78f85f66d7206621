"""Frequency-domain wave-farm power model.

For a farm of N bodies with 3 modes each (surge, sway, heave), the complex
motion amplitudes at wave frequency omega and heading beta solve

    [-omega^2 (M + A(omega)) + i omega (B(omega) + B_pto) + K_pto] x = F_e(omega, beta)

Mean absorbed power in a regular wave is the Hermitian form
P = (omega^2 / 2) x^H B_pto x (real and nonnegative for PSD B_pto).  In
irregular seas described by a Bretschneider spectrum S(omega),

    P_sea = 2 * integral S(omega) P(omega, beta) d omega          (trapezoid)
    P_annual = sum_i P_sea(state_i) * occurrence_i

Hydrodynamic coefficients are user-supplied callables; ``synthetic_farm``
builds a self-contained provider from isolated-sphere constants (added mass =
half displaced mass) plus an optional distance-decay radiation-coupling
kernel, which is what the landscape demos and the bundled dataset generator
use.  It is a qualitative stand-in, not a potential-flow solution.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81
WATER_DENSITY = 1025.0
FARM_BOUNDS = (0.0, 566.0)
SAFE_DISTANCE = 50.0
DEFAULT_OMEGA_GRID = np.logspace(np.log10(0.1), np.log10(6.3), 50)


class SingularSystemError(RuntimeError):
    """The frequency-domain system matrix is singular or ill-conditioned."""

    def __init__(self, omega, cond):
        super().__init__(f"system matrix singular or ill-conditioned at "
                         f"omega={omega:.6g} rad/s (condition estimate {cond:.3g})")
        self.omega = omega
        self.cond = cond


class LayoutError(ValueError):
    """A farm layout violates bounds or the safe-distance constraint."""


class NoFeasibleCellError(ValueError):
    """Every landscape cell violates the safe-distance constraint."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeaState:
    hs: float          # significant wave height, m
    tp: float          # peak period, s
    beta: float        # wave heading, rad
    occurrence: float  # probability weight within a climate

    def __post_init__(self):
        if not self.hs > 0:
            raise ValueError(f"sea state needs hs > 0, got {self.hs}")
        if not self.tp > 0:
            raise ValueError(f"sea state needs tp > 0, got {self.tp}")
        if not 0.0 <= self.occurrence <= 1.0:
            raise ValueError(f"occurrence must be in [0, 1], got {self.occurrence}")


def check_climate(climate):
    climate = list(climate)
    if not climate:
        raise ValueError("climate table is empty")
    total = math.fsum(s.occurrence for s in climate)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"climate occurrences must sum to 1 (got {total!r})")
    return climate


@dataclass(frozen=True)
class FarmLayout:
    """N buoy positions in metres on the [0, 566]^2 farm plot."""

    coords: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise LayoutError(f"coords must be [N, 2], got shape {arr.shape}")
        object.__setattr__(self, "coords", arr)

    @property
    def n(self):
        return self.coords.shape[0]

    def violations(self, bounds=FARM_BOUNDS, min_dist=SAFE_DISTANCE):
        out = []
        lo, hi = bounds
        for i, (x, y) in enumerate(self.coords):
            if not (lo <= x <= hi and lo <= y <= hi):
                out.append(f"buoy {i}: position ({x:g}, {y:g}) outside [{lo:g}, {hi:g}]^2")
        d = pairwise_distances(self.coords)
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if d[i, j] < min_dist:
                    out.append(f"buoys {i} and {j}: distance {d[i, j]:.3f} m "
                               f"< safe distance {min_dist:g} m")
        return out

    def validate(self, bounds=FARM_BOUNDS, min_dist=SAFE_DISTANCE):
        bad = self.violations(bounds, min_dist)
        if bad:
            raise LayoutError("; ".join(bad))
        return self


def pairwise_distances(coords):
    c = np.asarray(coords, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


@dataclass
class FarmState:
    """Everything Eq.-1-shaped solvers need, coefficients as callables.

    mass, k_pto, b_pto: [3N, 3N] constant matrices.
    added_mass(omega), radiation_damping(omega): [3N, 3N].
    excitation(omega, beta): complex [3N].
    """

    n_wec: int
    mass: np.ndarray
    k_pto: np.ndarray
    b_pto: np.ndarray
    added_mass: object
    radiation_damping: object
    excitation: object

    def __post_init__(self):
        dim = 3 * self.n_wec
        for name in ("mass", "k_pto", "b_pto"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != (dim, dim):
                raise ValueError(f"{name} must be [{dim}, {dim}], got {m.shape}")
            setattr(self, name, m)
        if np.any(np.diag(self.mass) <= 0) or np.any(self.mass != np.diag(np.diag(self.mass))):
            raise ValueError("mass must be diagonal positive")
        if not np.allclose(self.b_pto, self.b_pto.T, atol=1e-12):
            raise ValueError("b_pto must be symmetric")
        if np.any(np.linalg.eigvalsh(self.b_pto) < -1e-9):
            raise ValueError("b_pto must be positive semidefinite")

    @property
    def dim(self):
        return 3 * self.n_wec


# ---------------------------------------------------------------------------
# core solves
# ---------------------------------------------------------------------------

def system_matrix(fs, omega):
    return (-omega**2 * (fs.mass + np.asarray(fs.added_mass(omega), dtype=np.float64))
            + 1j * omega * (np.asarray(fs.radiation_damping(omega), dtype=np.float64)
                            + fs.b_pto)
            + fs.k_pto)


def solve_motion(fs, omega, beta):
    """Complex motion amplitudes x at (omega, beta).

    Checks the condition estimate (error above 1e12, naming omega) and the
    residual ||Sx - F|| / ||F|| < 1e-10.
    """
    if not omega > 0:
        raise ValueError(f"omega must be > 0, got {omega}")
    s = system_matrix(fs, omega)
    f = np.asarray(fs.excitation(omega, beta), dtype=np.complex128)
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystemError(omega, cond)
    x = np.linalg.solve(s, f)
    fn = np.linalg.norm(f)
    resid = np.linalg.norm(s @ x - f)
    if resid > 1e-10 * max(fn, 1e-300):
        raise SingularSystemError(omega, cond)
    return x


def _solve_batch(fs, omegas, beta):
    """Stacked solve over a frequency grid -> x [K, 3N] complex.

    Same math as solve_motion; screening here is finiteness plus the residual
    (the full condition estimate runs in the scalar API and on failure).
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    k = omegas.size
    dim = fs.dim
    s = np.empty((k, dim, dim), dtype=np.complex128)
    f = np.empty((k, dim), dtype=np.complex128)
    for i, w in enumerate(omegas):
        s[i] = system_matrix(fs, w)
        f[i] = fs.excitation(w, beta)
    try:
        x = np.linalg.solve(s, f[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i, w in enumerate(omegas):  # find and name the offender
            solve_motion(fs, w, beta)
        raise
    resid = np.linalg.norm(np.einsum("kij,kj->ki", s, x) - f, axis=1)
    bad = resid > 1e-10 * np.maximum(np.linalg.norm(f, axis=1), 1e-300)
    if np.any(bad) or not np.all(np.isfinite(x)):
        i = int(np.argmax(bad)) if np.any(bad) else 0
        raise SingularSystemError(float(omegas[i]), np.linalg.cond(s[i]))
    return x


def mean_power_regular(fs, omega, beta):
    """Mean absorbed power (W) in a unit-amplitude regular wave.

    P = (omega^2 / 2) x^H B_pto x; the Hermitian form keeps it real, and PSD
    B_pto keeps it nonnegative.
    """
    x = solve_motion(fs, omega, beta)
    p = 0.5 * omega**2 * np.real(np.conj(x) @ fs.b_pto @ x)
    return float(max(p, 0.0))


def mean_power_per_wec(fs, omega, beta):
    """Per-body power split [N]; uses the diagonal 3x3 blocks of B_pto."""
    x = solve_motion(fs, omega, beta)
    return _per_wec_power(fs, x[None, :], np.array([omega]))[0]


def _per_wec_power(fs, x, omegas):
    n = fs.n_wec
    xb = x.reshape(x.shape[0], n, 3)
    out = np.empty((x.shape[0], n))
    for i in range(n):
        blk = fs.b_pto[3 * i:3 * i + 3, 3 * i:3 * i + 3]
        q = np.einsum("km,mn,kn->k", np.conj(xb[:, i, :]), blk, xb[:, i, :])
        out[:, i] = np.real(q)
    return 0.5 * omegas[:, None] ** 2 * np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# spectra and sea-state powers
# ---------------------------------------------------------------------------

def bretschneider(hs, tp, omega):
    """Two-parameter Bretschneider density S(omega) [m^2 s/rad].

    S = (5/16) Hs^2 wp^4 / w^5 * exp(-1.25 (wp/w)^4), wp = 2 pi / Tp.
    Zeroth moment integrates to Hs^2 / 16.
    """
    if not hs > 0 or not tp > 0:
        raise ValueError(f"bretschneider needs hs > 0 and tp > 0, got hs={hs}, tp={tp}")
    w = np.asarray(omega, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("bretschneider needs omega > 0")
    wp = 2.0 * math.pi / tp
    ratio4 = (wp / w) ** 4
    return 0.3125 * hs**2 * ratio4 / w * np.exp(-1.25 * ratio4)


@dataclass
class PowerResult:
    watts: float
    per_wec: np.ndarray | None
    refinement_change: float | None
    converged: bool


def irregular_power(fs, sea, omega_grid=None, refine_check=True, power_fn=None,
                    per_wec=False):
    """Sea-state power P = 2 * integral S(w) P(w, beta) dw by trapezoid.

    omega_grid defaults to 50 log-spaced points on [0.1, 6.3] rad/s.  With
    ``refine_check`` the integral is recomputed on a doubled grid; a relative
    change above 1% clears ``converged`` (warning flag, not an error).
    ``power_fn`` overrides the regular-wave power curve (testing hook).
    """
    grid = np.asarray(omega_grid if omega_grid is not None else DEFAULT_OMEGA_GRID,
                      dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("omega grid must be strictly increasing with >= 2 points")

    def total_on(g):
        s_w = bretschneider(sea.hs, sea.tp, g)
        if power_fn is not None:
            p_w = np.array([float(power_fn(w)) for w in g])
            per = None
        else:
            x = _solve_batch(fs, g, sea.beta)
            per_w = _per_wec_power(fs, x, g)       # [K, N]
            per = 2.0 * np.trapezoid(s_w[:, None] * per_w, g, axis=0)
            p_w = per_w.sum(axis=1)
        return 2.0 * float(np.trapezoid(s_w * p_w, g)), per

    watts, per = total_on(grid)
    change = None
    converged = True
    if refine_check:
        fine = _double_grid(grid)
        watts_fine, _ = total_on(fine)
        denom = max(abs(watts_fine), 1e-300)
        change = abs(watts_fine - watts) / denom
        converged = change <= 0.01
    return PowerResult(watts=watts, per_wec=(per if per_wec else None),
                       refinement_change=change, converged=converged)


def _double_grid(grid):
    mids = 0.5 * (grid[:-1] + grid[1:])
    return np.sort(np.concatenate([grid, mids]))


def annual_average_power(fs, climate, omega_grid=None, power_fn=None,
                         state_power_fn=None):
    """Occurrence-weighted mean of per-state powers.

    ``state_power_fn(sea_state) -> watts`` short-circuits the spectral
    integral per state (testing hook); ``power_fn`` is passed through to
    irregular_power.
    """
    climate = check_climate(climate)
    if state_power_fn is not None:
        powers = [float(state_power_fn(s)) for s in climate]
    else:
        powers = [irregular_power(fs, s, omega_grid=omega_grid, refine_check=False,
                                  power_fn=power_fn).watts for s in climate]
    return float(math.fsum(p * s.occurrence for p, s in zip(powers, climate)))


def annual_average_power_per_wec(fs, climate, omega_grid=None):
    """Per-body annual average [N]; sums exactly to the farm total it implies."""
    climate = check_climate(climate)
    acc = np.zeros(fs.n_wec)
    for s in climate:
        r = irregular_power(fs, s, omega_grid=omega_grid, refine_check=False,
                            per_wec=True)
        acc += s.occurrence * r.per_wec
    return acc


# ---------------------------------------------------------------------------
# synthetic coefficient provider
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SincKernel:
    """Radiation-coupling factor q(d) = 1 + amplitude*sinc(d/length)*falloff.

    sinc here is the unnormalised sin(x)/x.  ``decay`` adds an exponential
    envelope exp(-d/decay) so far-apart buoys decouple.  q(d) - 1 scales the
    off-diagonal radiation-damping blocks.
    """

    amplitude: float = 0.1
    length: float = 20.0
    decay: float | None = None

    def __call__(self, d):
        d = np.asarray(d, dtype=np.float64)
        x = d / self.length
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(x == 0.0, 1.0, np.sin(x) / np.where(x == 0.0, 1.0, x))
        q = 1.0 + self.amplitude * s
        if self.decay is not None:
            q = 1.0 + (q - 1.0) * np.exp(-d / self.decay)
        return q


DEFAULT_KERNEL = SincKernel(amplitude=0.4, length=40.0, decay=300.0)


def wake_shadow(coords, beta, along, across):
    """Per-buoy shadowing exposure from upwave neighbours.

    Projects positions onto the wave direction (u along, v across) and sums
    exp(-du/along - (dv/across)^2) over neighbours strictly upwave.  Sharp in
    the along-wave gap: only near-upwave buoys shade appreciably.
    """
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    u = c[:, 0] * math.cos(beta) + c[:, 1] * math.sin(beta)
    v = -c[:, 0] * math.sin(beta) + c[:, 1] * math.cos(beta)
    du = u[:, None] - u[None, :]          # du[i, j] > 0 when j is upwave of i
    dv = v[:, None] - v[None, :]
    with np.errstate(over="ignore"):
        w = np.where(du > 0, np.exp(-du / along - (dv / across) ** 2), 0.0)
    np.fill_diagonal(w, 0.0)
    return w.sum(axis=1)


@dataclass(frozen=True)
class _SyntheticCoeffs:
    """Picklable callables backing a synthetic FarmState."""

    coords: tuple
    radius: float
    rho: float
    added: float
    coupling: tuple  # flattened [N, N] q(d)-1 factors, 0 on the diagonal
    gradient: tuple = (0.0, 0.0)  # site gain slope per axis across the plot
    wake: tuple | None = None     # (strength, along_m, across_m) shadowing

    def _coupling_matrix(self):
        n = len(self.coords)
        return np.asarray(self.coupling, dtype=np.float64).reshape(n, n)

    def b_iso(self, omega):
        vol = 4.0 / 3.0 * math.pi * self.radius**3
        return self.rho * vol * omega * math.exp(-omega**2 * self.radius / GRAVITY)

    def added_mass(self, omega):
        n = len(self.coords)
        return self.added * np.eye(3 * n)

    def radiation_damping(self, omega):
        n = len(self.coords)
        c = np.eye(n) + self._coupling_matrix()
        return self.b_iso(omega) * np.kron(c, np.eye(3))

    def excitation(self, omega, beta):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        k = omega**2 / GRAVITY
        f0 = self.rho * GRAVITY * math.pi * self.radius**2 * math.exp(-k * self.radius)
        phase = np.exp(1j * k * (coords[:, 0] * math.cos(beta)
                                 + coords[:, 1] * math.sin(beta)))
        # smooth incident-amplitude gain across the plot (sheltering stand-in)
        gx, gy = self.gradient
        mid = 0.5 * (FARM_BOUNDS[0] + FARM_BOUNDS[1])
        span = FARM_BOUNDS[1] - FARM_BOUNDS[0]
        gain = 1.0 + gx * (coords[:, 0] - mid) / span + gy * (coords[:, 1] - mid) / span
        if self.wake is not None:
            strength, along, across = self.wake
            gain = gain * np.exp(-strength * wake_shadow(coords, beta, along, across))
        per_body = np.array([0.6j * math.cos(beta), 0.6j * math.sin(beta), 1.0],
                            dtype=np.complex128) * f0
        return ((gain * phase)[:, None] * per_body[None, :]).reshape(-1)


DEFAULT_SITE_GRADIENT = (0.22, 0.14)
DEFAULT_WAKE = (0.45, 30.0, 45.0)


def synthetic_farm(coords, kernel=DEFAULT_KERNEL, radius=5.0, rho=WATER_DENSITY,
                   resonance_omega=1.1, site_gradient=DEFAULT_SITE_GRADIENT,
                   wake=DEFAULT_WAKE):
    """A self-contained FarmState for demos, tests and dataset generation.

    Semi-submerged spheres of the given radius: mass = rho*V/2, constant added
    mass = half the displaced mass, radiation damping b(w) = rho*V*w*
    exp(-w^2 r / g) shared by all modes, and PTO constants tuned to resonate
    near ``resonance_omega``.  ``kernel`` (q(d), picklable) couples the
    same-mode radiation damping of body pairs by q(d)-1; ``kernel=None``
    decouples the bodies entirely.  ``site_gradient`` tilts the incident
    amplitude linearly across the plot; (0, 0) makes it uniform.  ``wake``
    = (strength, along_m, across_m) shades the excitation of buoys sitting
    close behind an upwave neighbour; None disables shadowing.  With
    kernel=None, site_gradient=(0, 0) and wake=None, farm power is layout-
    independent.
    """
    layout = coords if isinstance(coords, FarmLayout) else FarmLayout(coords)
    c = layout.coords
    n = layout.n
    vol = 4.0 / 3.0 * math.pi * radius**3
    m = 0.5 * rho * vol
    added = 0.5 * m
    d = pairwise_distances(c)
    if kernel is None:
        coupling = np.zeros((n, n))
    else:
        coupling = np.asarray(kernel(d), dtype=np.float64) - 1.0
        np.fill_diagonal(coupling, 0.0)
    coeffs = _SyntheticCoeffs(coords=tuple(map(tuple, c.tolist())), radius=radius,
                              rho=rho, added=added,
                              coupling=tuple(coupling.reshape(-1).tolist()),
                              gradient=tuple(site_gradient),
                              wake=None if wake is None else tuple(wake))
    k_pto = resonance_omega**2 * (m + added)
    b_pto = coeffs.b_iso(resonance_omega)
    eye = np.eye(3 * n)
    return FarmState(n_wec=n, mass=m * eye, k_pto=k_pto * eye, b_pto=b_pto * eye,
                     added_mass=coeffs.added_mass,
                     radiation_damping=coeffs.radiation_damping,
                     excitation=coeffs.excitation)


# ---------------------------------------------------------------------------
# site climates (demo stand-ins; real scatter tables are user-supplied)
# ---------------------------------------------------------------------------

SITE_CLIMATES = {
    # (hs m, tp s, beta rad, occurrence); broad SE seas, hs < 3
    "Sydney": (SeaState(1.2, 7.5, 2.0, 0.35), SeaState(1.8, 8.5, 2.4, 0.30),
               SeaState(2.4, 9.5, 2.7, 0.20), SeaState(2.8, 11.0, 2.2, 0.15)),
    # narrow energetic SW swell
    "Adelaide": (SeaState(1.8, 9.5, 3.85, 0.30), SeaState(2.6, 11.0, 3.9, 0.30),
                 SeaState(3.4, 12.0, 3.95, 0.25), SeaState(4.2, 13.0, 3.9, 0.15)),
    "Perth": (SeaState(1.6, 9.0, 3.7, 0.30), SeaState(2.2, 10.5, 3.8, 0.30),
              SeaState(3.0, 12.0, 3.9, 0.25), SeaState(3.8, 13.5, 3.75, 0.15)),
    # most energetic site
    "Tasmania": (SeaState(2.2, 10.0, 3.6, 0.25), SeaState(3.2, 11.5, 3.7, 0.30),
                 SeaState(4.2, 12.5, 3.8, 0.30), SeaState(5.0, 14.0, 3.7, 0.15)),
}

SITES = tuple(SITE_CLIMATES)


# ---------------------------------------------------------------------------
# landscape scan
# ---------------------------------------------------------------------------

@dataclass
class Landscape:
    xs: np.ndarray        # candidate x coordinates [nx]
    ys: np.ndarray        # candidate y coordinates [ny]
    power: np.ndarray     # [ny, nx], NaN on infeasible cells
    feasible: np.ndarray  # [ny, nx] bool
    best_xy: tuple
    best_power: float

    def rows(self):
        """Flat (x, y, power, feasible) records in row-major scan order."""
        for iy, y in enumerate(self.ys):
            for ix, x in enumerate(self.xs):
                yield (float(x), float(y),
                       float(self.power[iy, ix]), bool(self.feasible[iy, ix]))


def _scan_cell(args):
    fixed, x, y, climate, builder, omega_grid = args
    coords = np.vstack([fixed, [x, y]]) if len(fixed) else np.array([[x, y]])
    fs = builder(coords)
    return annual_average_power(fs, climate, omega_grid=omega_grid)


def landscape_scan(fixed, climate, grid_step, farm_builder=synthetic_farm,
                   bounds=FARM_BOUNDS, safe_distance=SAFE_DISTANCE,
                   omega_grid=None, jobs=1):
    """Sweep the last buoy over the farm grid and map annual average power.

    fixed: [N-1, 2] already-placed buoys (may be empty).  Cells closer than
    ``safe_distance`` to any fixed buoy are masked (NaN power).  Ties for the
    maximum resolve to the first cell in row-major (y outer, x inner) order.
    ``jobs > 1`` fans cells out to worker processes; ``farm_builder`` must
    then be picklable (the default is).
    """
    fixed = np.asarray(fixed, dtype=np.float64).reshape(-1, 2)
    if fixed.size:
        FarmLayout(fixed).validate(bounds=bounds, min_dist=safe_distance)
    climate = check_climate(climate)
    if not grid_step > 0:
        raise ValueError(f"grid step must be > 0, got {grid_step}")
    lo, hi = bounds
    xs = np.arange(lo, hi + 1e-9, grid_step)
    ys = np.arange(lo, hi + 1e-9, grid_step)
    feasible = np.ones((ys.size, xs.size), dtype=bool)
    if fixed.size:
        gx, gy = np.meshgrid(xs, ys)
        for bx, by in fixed:
            feasible &= np.hypot(gx - bx, gy - by) >= safe_distance
    if not feasible.any():
        raise NoFeasibleCellError(
            f"no feasible cell on the {xs.size}x{ys.size} grid at step {grid_step}")

    cells = [(iy, ix) for iy in range(ys.size) for ix in range(xs.size)
             if feasible[iy, ix]]
    tasks = [(fixed, float(xs[ix]), float(ys[iy]), climate, farm_builder, omega_grid)
             for iy, ix in cells]
    power = np.full((ys.size, xs.size), np.nan)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_scan_cell, tasks, chunksize=8))
    else:
        values = [_scan_cell(t) for t in tasks]
    for (iy, ix), v in zip(cells, values):
        power[iy, ix] = v
    flat_best = None
    for iy, ix in cells:  # row-major order makes ties deterministic
        if flat_best is None or power[iy, ix] > power[flat_best]:
            flat_best = (iy, ix)
    by, bx = flat_best
    return Landscape(xs=xs, ys=ys, power=power, feasible=feasible,
                     best_xy=(float(xs[bx]), float(ys[by])),
                     best_power=float(power[by, bx]))


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def sample_layout(n_wec, rng, bounds=FARM_BOUNDS, min_dist=SAFE_DISTANCE,
                  max_tries=20000):
    """Rejection-sample a feasible layout (uniform positions, 50 m spacing)."""
    lo, hi = bounds
    coords = np.empty((n_wec, 2))
    placed = 0
    for _ in range(max_tries):
        cand = rng.uniform(lo, hi, size=2)
        if placed and np.min(np.hypot(*(coords[:placed] - cand).T)) < min_dist:
            continue
        coords[placed] = cand
        placed += 1
        if placed == n_wec:
            return FarmLayout(coords.copy())
    raise LayoutError(f"could not place {n_wec} buoys with {min_dist} m spacing "
                      f"in {max_tries} tries")


def generate_dataset(site, n_rows, seed, n_wec=16, omega_grid=None,
                     farm_builder=synthetic_farm):
    """Rows of the 49-column layout/power table from the synthetic farm model.

    Each row: a random feasible layout, its per-WEC annual average powers for
    the site climate, and their total (so the sum invariant holds exactly).
    Columns: X1, Y1, ..., X16, Y16, P1, ..., P16, total.  Buoys are indexed
    in downwave order along the site's prevailing (occurrence-weighted)
    heading, so neighbouring columns are spatial neighbours along the wave
    path; files from other sources keep whatever order they ship with.
    """
    if site not in SITE_CLIMATES:
        raise ValueError(f"unknown site {site!r}; choose from {SITES}")
    if n_wec < 1:
        raise ValueError("n_wec must be >= 1")
    climate = SITE_CLIMATES[site]
    grid = omega_grid if omega_grid is not None else DEFAULT_OMEGA_GRID
    rng = np.random.default_rng([seed, SITES.index(site)])
    beta_bar = math.fsum(s.beta * s.occurrence for s in climate)
    cb, sb = math.cos(beta_bar), math.sin(beta_bar)
    out = np.empty((n_rows, 3 * n_wec + 1))
    for r in range(n_rows):
        layout = sample_layout(n_wec, rng)
        c = layout.coords
        u = c[:, 0] * cb + c[:, 1] * sb
        v = -c[:, 0] * sb + c[:, 1] * cb
        c = c[np.lexsort((v, u))]
        fs = farm_builder(c)
        per = annual_average_power_per_wec(fs, climate, omega_grid=grid)
        out[r, :2 * n_wec] = c.reshape(-1)
        out[r, 2 * n_wec:3 * n_wec] = per
        out[r, 3 * n_wec] = per.sum()
    return out


def dataset_columns(n_wec=16):
    cols = []
    for i in range(1, n_wec + 1):
        cols += [f"X{i}", f"Y{i}"]
    cols += [f"P{i}" for i in range(1, n_wec + 1)]
    cols.append("total_power")
    return cols
