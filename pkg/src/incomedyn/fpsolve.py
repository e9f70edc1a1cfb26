"""Fokker-Planck evolution of the income density and analytic eigenmodes.

The density obeys the flux-form equation

    df/dt = d/dy { [(M+2) y - C(t)] f + y^2 df/dy }

discretized here as a conservative finite volume scheme on a log-spaced
grid with Chang-Cooper (exponentially fitted) edge fluxes and implicit
(backward Euler) time stepping.  Zero-flux boundaries conserve the
trapezoidal mass exactly, the scheme preserves positivity, and its discrete
steady state matches the closed-form stationary law to O(h^2).

The transient eigenmodes are combinations of confluent hypergeometric
(Kummer M) functions; this module evaluates them and reports the residual
of the spatial operator applied to a mode, but does not attempt to project
arbitrary initial data onto the mode basis (the expansion coefficients are
left to the caller).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import distlib
from .errors import DataError, DomainError, NumericalError, TimeStepError

KUMMER_TOL = 1e-12
KUMMER_MAX_TERMS = 2000
# exp(z) overflows near 709; cap the transformed argument below that
KUMMER_MAX_ARG = 700.0


def _kummer_series(a: float, b: float, x) -> np.ndarray:
    """Power series sum_k (a)_k / (b)_k x^k / k! for x >= 0 (array)."""
    x = np.asarray(x, dtype=float)
    term = np.ones_like(x)
    total = np.ones_like(x)
    small_streak = np.zeros(x.shape, dtype=int)
    for k in range(KUMMER_MAX_TERMS):
        term = term * ((a + k) / ((b + k) * (k + 1.0))) * x
        total += term
        if not np.isfinite(total).all():
            raise NumericalError(f"Kummer series overflow at a={a}, b={b}")
        # Pochhammer factors can pass through zero when a < 0; require two
        # consecutive small terms before declaring convergence.
        small = np.abs(term) <= KUMMER_TOL * np.abs(total)
        small_streak = np.where(small, small_streak + 1, 0)
        if (small_streak >= 2).all():
            return total
    raise NumericalError(f"Kummer series did not converge for a={a}, b={b}")


def kummer_m(a: float, b: float, z):
    """Confluent hypergeometric function M(a, b, z) (Kummer's function).

    Negative arguments are routed through the Kummer transformation
    M(a, b, z) = exp(z) M(b - a, b, -z) so the series is only ever summed
    at nonnegative argument.  ``b`` must not be a nonpositive integer, and
    the post-transformation argument must not exceed 700 (the series partial
    sums overflow beyond that).  Accepts scalar or ndarray ``z``.
    """
    if b <= 0.0 and float(b).is_integer():
        raise DomainError(f"M(a, b, z) has a pole at nonpositive integer b={b}")
    scalar = np.isscalar(z) or np.ndim(z) == 0
    arr = np.asarray(z, dtype=float)
    if np.isnan(arr).any():
        raise DomainError("Kummer argument must not be NaN")
    if (np.abs(arr) > KUMMER_MAX_ARG).any():
        raise NumericalError(f"|z| > {KUMMER_MAX_ARG:g} would overflow the Kummer series")
    out = np.empty_like(arr)
    neg = arr < 0.0
    if neg.any():
        # a' = b - a analytically zero collapses the series to 1 (the
        # exp-identity case); snap roundoff-sized a' to zero, since at large
        # |z| a one-ulp a' would be amplified by roughly exp(|z|)
        a2 = b - a
        if abs(a2) < 1e-13 * max(1.0, abs(a), abs(b)):
            a2 = 0.0
        out[neg] = np.exp(arr[neg]) * _kummer_series(a2, b, -arr[neg])
    if (~neg).any():
        out[~neg] = _kummer_series(a, b, arr[~neg])
    return float(out) if scalar else out


@dataclass(frozen=True)
class EigenMode:
    """One transient mode: two Kummer branches with decay rate omega_n = 2*pi*n.

    alpha_pm = (3 + M +/- s) / 2 and beta_pm = 1 +/- s with
    s = sqrt((1 + M)^2 + 4 omega_n).  ``beta_minus_pole`` flags parameter
    combinations where the minus branch hits a series pole.
    """

    n: int
    omega_n: float
    alpha_plus: float
    alpha_minus: float
    beta_plus: float
    beta_minus: float
    A1: float
    A2: float
    c: float
    beta_minus_pole: bool


def eigenmode_params(n: int, M: float, A1: float = 0.0, A2: float = 1.0,
                     c: float = 1.0) -> EigenMode:
    """Mode skeleton for index n: exponents from (M, omega_n), coefficients as given."""
    if n < 0 or not isinstance(n, (int, np.integer)):
        raise DomainError(f"mode index must be a nonnegative integer, got {n}")
    if not M > 0.0:
        raise DomainError(f"M must be > 0, got {M}")
    if not c > 0.0:
        raise DomainError(f"scale c must be > 0, got {c}")
    omega = 2.0 * math.pi * n
    if n == 0:
        # s = 1 + M exactly; use the algebraic simplifications so that
        # alpha_plus == beta_plus bitwise (the stationary-mode identity)
        alpha_plus, alpha_minus = M + 2.0, 1.0
        beta_plus, beta_minus = M + 2.0, -M
    else:
        s = math.sqrt((1.0 + M) ** 2 + 4.0 * omega)
        alpha_plus, alpha_minus = (3.0 + M + s) / 2.0, (3.0 + M - s) / 2.0
        beta_plus, beta_minus = 1.0 + s, 1.0 - s
    pole = beta_minus <= 0.0 and float(beta_minus).is_integer()
    return EigenMode(
        n=int(n), omega_n=omega,
        alpha_plus=alpha_plus, alpha_minus=alpha_minus,
        beta_plus=beta_plus, beta_minus=beta_minus,
        A1=A1, A2=A2, c=c, beta_minus_pole=pole,
    )


def steady_state_mode(M: float, C0: float) -> EigenMode:
    """The n = 0 plus-branch mode normalized to equal the stationary density.

    With alpha_plus = beta_plus = M + 2 the Kummer factor collapses to
    exp(-c/y), so A2 = 1 / (C0 Gamma(M+1)) reproduces the closed form.
    """
    mode = eigenmode_params(0, M, A1=0.0, A2=0.0, c=C0)
    a2 = 1.0 / (C0 * math.gamma(M + 1.0)) if M < 170 else math.exp(
        -math.log(C0) - math.lgamma(M + 1.0))
    return replace(mode, A2=a2)


def eigenmode_eval(mode: EigenMode, y):
    """Evaluate g_n(y) = A1 (c/y)^a- M(a-, b-, -c/y) + A2 (c/y)^a+ M(a+, b+, -c/y)."""
    scalar = np.isscalar(y) or np.ndim(y) == 0
    arr = np.asarray(y, dtype=float)
    if not (arr > 0.0).all():
        raise DomainError("eigenmode argument must be positive income")
    if mode.A1 != 0.0 and mode.beta_minus_pole:
        raise DomainError(
            f"minus branch has a series pole (beta_- = {mode.beta_minus}); "
            "set A1 = 0 or choose different (n, M)")
    x = mode.c / arr
    out = np.zeros_like(arr)
    if mode.A1 != 0.0:
        out += mode.A1 * x ** mode.alpha_minus * kummer_m(
            mode.alpha_minus, mode.beta_minus, -x)
    if mode.A2 != 0.0:
        out += mode.A2 * x ** mode.alpha_plus * kummer_m(
            mode.alpha_plus, mode.beta_plus, -x)
    return float(out) if scalar else out


def _central_diff(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (y[2:] - y[:-2])
    out[0] = (f[1] - f[0]) / (y[1] - y[0])
    out[-1] = (f[-1] - f[-2]) / (y[-1] - y[-2])
    return out


def eigenmode_operator_residual(mode: EigenMode, M: float, grid: np.ndarray) -> float:
    """Relative residual of L[g] = omega * g on the grid, L the spatial operator.

    L[g] = d/dy{ [(M+2) y - c] g + y^2 g' } is discretized with central
    differences; the returned value is max |L[g] - omega g| over the interior,
    normalized by the largest of the operator's component magnitudes.  Reported
    rather than asserted: the mode family satisfies the relation analytically,
    so this measures the discretization error of the check itself.
    """
    y = np.asarray(grid, dtype=float)
    if y.size < 16:
        raise DomainError("residual grid needs at least 16 points")
    g = eigenmode_eval(mode, y)
    adv = ((M + 2.0) * y - mode.c) * g
    dif = y ** 2 * _central_diff(g, y)
    t1 = _central_diff(adv, y)
    t2 = _central_diff(dif, y)
    lg = t1 + t2
    core = slice(2, -2)
    resid = np.abs(lg[core] - mode.omega_n * g[core])
    scale = max(np.abs(t1[core]).max(), np.abs(t2[core]).max(),
                np.abs(mode.omega_n * g[core]).max())
    if scale == 0.0:
        return 0.0
    return float(resid.max() / scale)


# ---------------------------------------------------------------------------
# grid densities and the finite volume evolver
# ---------------------------------------------------------------------------

@dataclass
class GridDensity:
    """Density values on a strictly increasing positive grid at one time.

    Cell widths are chosen so the conserved cell-sum mass coincides with the
    trapezoidal rule on the nodes.
    """

    grid: np.ndarray
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 8:
            raise DataError("grid must be 1-D with at least 8 nodes")
        if not (self.grid[0] > 0.0 and (np.diff(self.grid) > 0.0).all()):
            raise DataError("grid must be strictly increasing and positive")
        if self.values.shape != self.grid.shape:
            raise DataError("values and grid shapes differ")
        if (self.values < -1e-12).any():
            raise DataError("density values must be nonnegative")
        self.values = np.maximum(self.values, 0.0)

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.values, self.grid))

    def normalized(self) -> "GridDensity":
        m = self.mass()
        if m <= 0.0:
            raise DataError("cannot normalize a zero-mass density")
        return GridDensity(self.grid, self.values / m, self.time)


def log_grid(M: float, C0: float, n_cells: int = 2000,
             span: tuple = (1e-3, 1e3)) -> np.ndarray:
    """Log-spaced grid spanning ``span`` times the mean income C0/M."""
    scale = C0 / M
    return np.geomspace(span[0] * scale, span[1] * scale, n_cells)


def density_on_grid(dist: distlib.SteadyStateIPDF, grid: np.ndarray,
                    normalize: bool = True) -> GridDensity:
    """Sample the closed-form stationary density onto a grid."""
    f = distlib.ipdf_density(dist, grid)
    gd = GridDensity(np.asarray(grid, dtype=float), f, 0.0)
    return gd.normalized() if normalize else gd


def bump_density(grid: np.ndarray, center: float, rel_width: float = 0.1) -> GridDensity:
    """Normalized Gaussian bump in log income, for transient experiments."""
    y = np.asarray(grid, dtype=float)
    if not center > 0.0:
        raise DomainError("bump center must be positive")
    f = np.exp(-0.5 * ((np.log(y) - math.log(center)) / rel_width) ** 2)
    return GridDensity(y, f, 0.0).normalized()


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise DataError("L1 distance requires identical grids")
    return float(np.trapezoid(np.abs(a.values - b.values), a.grid))


def _bernoulli(w: np.ndarray) -> np.ndarray:
    """B(w) = w / (exp(w) - 1), the exponential-fitting weight; B(0) = 1."""
    out = np.empty_like(w)
    small = np.abs(w) < 1e-12
    out[small] = 1.0 - 0.5 * w[small]
    ws = w[~small]
    out[~small] = ws / np.expm1(ws)
    return out


class _FluxOperator:
    """Tridiagonal Chang-Cooper operator for fixed grid and labour rate C."""

    def __init__(self, grid: np.ndarray, M: float, c_value: float):
        y = grid
        n = y.size
        edges = np.empty(n + 1)
        edges[0] = y[0]
        edges[1:-1] = 0.5 * (y[:-1] + y[1:])
        edges[-1] = y[-1]
        widths = np.diff(edges)          # cell widths; sum == trapezoid weights
        h = np.diff(y)                   # node spacing
        e_in = edges[1:-1]               # interior edge positions
        d_edge = e_in ** 2
        a_edge = (M + 2.0) * e_in - c_value
        w = a_edge * h / d_edge
        g = d_edge / h
        b_plus = _bernoulli(w)           # weight on the left node
        b_minus = _bernoulli(-w)         # weight on the right node
        # flux at interior edge j (between nodes j-1, j):
        #   J_j = g_j * (b_minus_j * f_j - b_plus_j * f_{j-1})
        self.widths = widths
        self.g = g
        self.b_plus = b_plus
        self.b_minus = b_minus
        lo = np.zeros(n)
        di = np.zeros(n)
        up = np.zeros(n)
        gp = g * b_plus                  # weight on the edge's left node
        gm = g * b_minus                 # weight on the edge's right node
        # (Lf)_i = (J_right - J_left) / width_i with J_j = gm_j f_right - gp_j f_left
        up[:-1] += gm / widths[:-1]
        di[:-1] -= gp / widths[:-1]
        di[1:] -= gm / widths[1:]
        lo[1:] += gp / widths[1:]
        self.lower, self.diag, self.upper = lo, di, up
        self.n = n

    def implicit_matrix(self, dt: float) -> np.ndarray:
        """Banded (I - dt L) in solve_banded layout."""
        ab = np.zeros((3, self.n))
        ab[0, 1:] = -dt * self.upper[:-1]
        ab[1, :] = 1.0 - dt * self.diag
        ab[2, :-1] = -dt * self.lower[1:]
        return ab

    def edge_fluxes(self, f: np.ndarray) -> np.ndarray:
        return self.g * (self.b_minus * f[1:] - self.b_plus * f[:-1])


def _resolve_rate(c_of_t) -> Callable[[float], float]:
    if callable(c_of_t):
        return c_of_t
    value = float(c_of_t)
    return lambda t: value


def evolve(f0: GridDensity, M: float, C_of_t, t_end: float, dt: float = None,
           snapshot_times: Sequence[float] = ()) -> tuple:
    """Evolve a density to t_end; returns (final, snapshots at requested times).

    Backward Euler steps of the Chang-Cooper operator; the labour rate may be
    a constant or a callable of time.  Zero-flux boundaries conserve mass to
    solver roundoff.  A time step above 0.5 / (M + 2) under-resolves the
    fastest drift scale and is refused with a suggestion.
    """
    if not M > 0.0:
        raise DomainError(f"M must be > 0, got {M}")
    if not t_end > f0.time:
        raise DomainError("t_end must exceed the initial time")
    dt_max = 0.5 / (M + 2.0)
    if dt is None:
        dt = 0.1 / (M + 2.0)
    if not 0.0 < dt <= dt_max:
        raise TimeStepError(
            f"dt={dt:g} exceeds the transient-resolution bound {dt_max:g} "
            f"for M={M:g}", suggested_dt=0.25 / (M + 2.0))
    rate = _resolve_rate(C_of_t)
    constant_rate = not callable(C_of_t)
    snap_times = sorted(float(t) for t in snapshot_times)
    if snap_times and (snap_times[0] < f0.time or snap_times[-1] > t_end):
        raise DomainError("snapshot times must lie within (time, t_end]")

    y = f0.grid
    f = f0.values.copy()
    t = f0.time
    op = None
    ab = None
    snapshots = []
    pending = list(snap_times)

    def mk_operator(at_time):
        c_val = rate(at_time)
        if not c_val > 0.0:
            raise DomainError(f"labour rate must stay positive, got C({at_time})={c_val}")
        return _FluxOperator(y, M, c_val)

    while t < t_end - 1e-12:
        target = pending[0] if pending else t_end
        step = min(dt, target - t)
        if constant_rate and ab is not None and step == dt:
            mat = ab
        else:
            op = mk_operator(t + step)
            mat = op.implicit_matrix(step)
            if constant_rate and step == dt:
                ab = mat
        f = solve_banded((1, 1), mat, f, overwrite_ab=False, overwrite_b=False)
        fmin = f.min()
        if fmin < -1e-12:
            raise NumericalError(f"negative density {fmin:g} at t={t + step:g}")
        if fmin < 0.0:
            np.maximum(f, 0.0, out=f)
        t += step
        if pending and t >= pending[0] - 1e-12:
            pending.pop(0)
            snapshots.append(GridDensity(y, f.copy(), t))
    return GridDensity(y, f, t), snapshots


def steady_state_residual(M: float, C0: float, grid: np.ndarray = None) -> float:
    """Sup-norm of the scheme's edge fluxes on the closed-form stationary density.

    Normalized by the largest single-sided flux magnitude, so a correct
    density gives an O(h^2)-small value while a wrong power law gives O(1).
    """
    if grid is None:
        grid = log_grid(M, C0)
    y = np.asarray(grid, dtype=float)
    dist = distlib.SteadyStateIPDF(M, C0)
    f = distlib.ipdf_density(dist, y)
    op = _FluxOperator(y, M, C0)
    flux = op.edge_fluxes(f)
    scale = op.g * (op.b_minus * f[1:] + op.b_plus * f[:-1])
    return float(np.abs(flux).max() / scale.max())


def write_snapshots_csv(path, snapshots: Sequence[GridDensity]) -> None:
    """Dump snapshots as CSV with columns t, y, f."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,y,f\n")
        for snap in snapshots:
            for yi, fi in zip(snap.grid, snap.values):
                fh.write(f"{snap.time:.12g},{yi:.12g},{fi:.12g}\n")
