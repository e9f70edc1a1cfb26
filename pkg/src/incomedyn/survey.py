"""Banded household-survey rounds: loading, deflation, rescaling, synthesis.

A survey round is an ordered list of expenditure classes (bands), each with
a population share and per-band mean total / cereal expenditure.  The last
band may be open-ended.  Monetary values are handled by two linear maps:
CPI deflation to a reference year and rescaling to a common mean (the data
collapse).  Empirical CDFs/densities interpolate linearly inside bands
(uniform density per band); the open band gets an effective width from a
power-law fit to the last two closed bands.  The same conventions are used
by the poverty module so banded indices stay self-consistent.

CSV schemas
-----------
rounds:    round_id,year,band_lower,band_upper,population_share,
           mean_total_expenditure,mean_cereal_expenditure
           (band_upper is ``inf`` for the open band; empty cereal cells are
           allowed and mark the column as unavailable for that band)
deflators: year,cpi
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import distlib
from .errors import DataError, DomainError

SHARE_SILENT_TOL = 1e-6   # renormalize quietly
SHARE_WARN_TOL = 1e-3     # renormalize with a warning; reject beyond
EDGE_REL_TOL = 1e-9
MODEL_INCOME_EPS = 1e-6


@dataclass(frozen=True)
class Band:
    lower: float
    upper: float                      # math.inf for the open band
    population_share: float
    mean_total_expenditure: Optional[float]
    mean_cereal_expenditure: Optional[float]

    @property
    def is_open(self) -> bool:
        return math.isinf(self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class BandedDistribution:
    """One survey round as contiguous expenditure classes."""

    round_id: str
    year: float
    bands: tuple
    currency_note: str = ""
    population_count: Optional[int] = None

    def __post_init__(self):
        bands = tuple(self.bands)
        object.__setattr__(self, "bands", bands)
        if len(bands) < 1:
            raise DataError(f"round {self.round_id}: no bands")
        problems = []
        for i, b in enumerate(bands):
            if b.lower < 0.0 or not b.upper > b.lower:
                problems.append(f"row {i}: edges ({b.lower}, {b.upper}) not increasing")
            if b.is_open and i != len(bands) - 1:
                problems.append(f"row {i}: only the last band may be open-ended")
            if not 0.0 <= b.population_share <= 1.0:
                problems.append(f"row {i}: share {b.population_share} outside [0, 1]")
            if b.mean_total_expenditure is not None and not b.mean_total_expenditure > 0.0:
                problems.append(f"row {i}: mean expenditure must be positive")
            if b.mean_cereal_expenditure is not None:
                if b.mean_cereal_expenditure < 0.0:
                    problems.append(f"row {i}: cereal expenditure must be nonnegative")
                elif (b.mean_total_expenditure is not None
                      and b.mean_cereal_expenditure > b.mean_total_expenditure * (1 + 1e-12)):
                    problems.append(f"row {i}: cereal exceeds total expenditure")
        for i in range(len(bands) - 1):
            lo_next, up = bands[i + 1].lower, bands[i].upper
            tol = EDGE_REL_TOL * max(1.0, abs(up))
            if lo_next < up - tol:
                problems.append(f"rows {i}/{i + 1}: bands overlap ({up} > {lo_next})")
            elif lo_next > up + tol:
                problems.append(f"rows {i}/{i + 1}: gap between bands ({up} < {lo_next})")
        total = sum(b.population_share for b in bands)
        if abs(total - 1.0) > 1e-9:
            problems.append(f"population shares sum to {total!r}, not 1")
        if problems:
            raise DataError(f"round {self.round_id}: " + "; ".join(problems))

    @property
    def shares(self) -> np.ndarray:
        return np.array([b.population_share for b in self.bands])

    @property
    def edges(self) -> np.ndarray:
        return np.array([self.bands[0].lower] + [b.upper for b in self.bands])

    @property
    def has_open_band(self) -> bool:
        return self.bands[-1].is_open

    def representative_incomes(self) -> np.ndarray:
        """Per-band representative income: recorded mean when present, else the
        midpoint (closed bands) or the tail fit's conditional mean (open band)."""
        out = np.empty(len(self.bands))
        for i, b in enumerate(self.bands):
            if b.mean_total_expenditure is not None:
                out[i] = b.mean_total_expenditure
            elif not b.is_open:
                out[i] = 0.5 * (b.lower + b.upper)
            else:
                a, lo = _pareto_tail_fit(self)
                # conditional mean of a Pareto density exponent a above lo
                out[i] = lo * (a - 1.0) / (a - 2.0) if a > 2.0 else lo + open_band_width(self)
        return out

    def mean_income(self) -> float:
        return float(np.dot(self.shares, self.representative_incomes()))


def _pareto_tail_fit(rnd: BandedDistribution) -> tuple:
    """Density exponent fitted through the last two closed bands, and the
    open band's lower edge."""
    closed = [b for b in rnd.bands if not b.is_open]
    if len(closed) < 2:
        raise DataError(f"round {rnd.round_id}: tail fit needs two closed bands")
    b1, b2 = closed[-2], closed[-1]
    if b1.population_share <= 0.0 or b2.population_share <= 0.0:
        raise DataError(f"round {rnd.round_id}: tail fit needs positive shares")
    d1 = b1.population_share / b1.width
    d2 = b2.population_share / b2.width
    m1 = 0.5 * (b1.lower + b1.upper)
    m2 = 0.5 * (b2.lower + b2.upper)
    a = math.log(d1 / d2) / math.log(m2 / m1)
    lo = rnd.bands[-1].lower
    return a, lo


def open_band_width(rnd: BandedDistribution) -> float:
    """Effective width of the open band from the two-band power-law fit.

    A density proportional to y^(-a) above the lower edge L carries its mass
    within an equivalent uniform band of width L / (a - 1).  If the fit is
    too shallow (a <= 1.05) the last closed band's width is reused.
    """
    if not rnd.has_open_band:
        raise DataError(f"round {rnd.round_id} has no open band")
    a, lo = _pareto_tail_fit(rnd)
    if a <= 1.05:
        warnings.warn(
            f"round {rnd.round_id}: tail fit exponent {a:.3g} too shallow; "
            "falling back to the last closed band's width")
        return rnd.bands[-2].width
    return lo / (a - 1.0)


def band_widths(rnd: BandedDistribution) -> np.ndarray:
    """Band widths with the open band resolved to its effective width."""
    w = np.array([b.width for b in rnd.bands])
    if rnd.has_open_band:
        w[-1] = open_band_width(rnd)
    return w


# ---------------------------------------------------------------------------
# loading and saving
# ---------------------------------------------------------------------------

def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse number {text!r}") from None


_ROUND_HEADER = ["round_id", "year", "band_lower", "band_upper",
                 "population_share", "mean_total_expenditure",
                 "mean_cereal_expenditure"]


def _normalize_shares(round_id: str, bands: list) -> list:
    total = sum(b.population_share for b in bands)
    err = abs(total - 1.0)
    if err > SHARE_WARN_TOL:
        raise DataError(f"round {round_id}: population shares sum to {total:.6g}")
    if err > SHARE_SILENT_TOL:
        warnings.warn(f"round {round_id}: shares sum to {total:.6g}; renormalizing")
    if err > 0.0:
        bands = [replace(b, population_share=b.population_share / total) for b in bands]
    return bands


def load_rounds(path) -> list:
    """Load every round in a rounds CSV, in order of first appearance."""
    by_id = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _ROUND_HEADER:
            raise DataError(f"{path}: expected header {','.join(_ROUND_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(_ROUND_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(_ROUND_HEADER)} fields")
            where = f"{path}:{lineno}"
            rid = row[0].strip()
            year = _parse_float(row[1], where)
            band = Band(
                lower=_parse_float(row[2], where),
                upper=_parse_float(row[3], where),
                population_share=_parse_float(row[4], where),
                mean_total_expenditure=(
                    _parse_float(row[5], where) if row[5].strip() else None),
                mean_cereal_expenditure=(
                    _parse_float(row[6], where) if row[6].strip() else None),
            )
            by_id.setdefault(rid, (year, []))[1].append(band)
            if by_id[rid][0] != year:
                raise DataError(f"{where}: round {rid} has conflicting years")
    if not by_id:
        raise DataError(f"{path}: no data rows")
    rounds = []
    for rid, (year, bands) in by_id.items():
        bands = _normalize_shares(rid, bands)
        rounds.append(BandedDistribution(round_id=rid, year=year, bands=tuple(bands)))
    return rounds


def load_round(path, round_id: str = None) -> BandedDistribution:
    """Load a single round; ``round_id`` selects when the file holds several."""
    rounds = load_rounds(path)
    if round_id is None:
        if len(rounds) != 1:
            raise DataError(f"{path}: holds {len(rounds)} rounds; specify round_id")
        return rounds[0]
    for rnd in rounds:
        if rnd.round_id == round_id:
            return rnd
    raise DataError(f"{path}: no round named {round_id!r}")


def save_rounds(path, rounds: Sequence[BandedDistribution]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(_ROUND_HEADER) + "\n")
        for rnd in rounds:
            for b in rnd.bands:
                cereal = "" if b.mean_cereal_expenditure is None \
                    else f"{b.mean_cereal_expenditure:.12g}"
                total = "" if b.mean_total_expenditure is None \
                    else f"{b.mean_total_expenditure:.12g}"
                fh.write(f"{rnd.round_id},{rnd.year:.12g},{b.lower:.12g},"
                         f"{b.upper:.12g},{b.population_share:.12g},"
                         f"{total},{cereal}\n")


@dataclass(frozen=True)
class DeflatorTable:
    """CPI by year plus the reference frame used for deflation and collapse."""

    years: np.ndarray
    cpis: np.ndarray
    reference_year: float
    reference_mean_income: float

    def __post_init__(self):
        years = np.asarray(self.years, dtype=float)
        cpis = np.asarray(self.cpis, dtype=float)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "cpis", cpis)
        if years.size == 0 or years.size != cpis.size:
            raise DataError("deflator table needs matching year/cpi columns")
        if (np.diff(years) <= 0.0).any():
            raise DataError("deflator years must be strictly increasing")
        if not (cpis > 0.0).all():
            raise DataError("CPI values must be positive")
        if not (years[0] <= self.reference_year <= years[-1]):
            raise DataError(f"reference year {self.reference_year} outside the table")
        if not self.reference_mean_income > 0.0:
            raise DataError("reference mean income must be positive")

    def cpi(self, year: float) -> float:
        """CPI at a year, linearly interpolated between bracketing entries."""
        if not (self.years[0] <= year <= self.years[-1]):
            raise DataError(
                f"year {year} outside the deflator range "
                f"[{self.years[0]:g}, {self.years[-1]:g}]; no extrapolation")
        return float(np.interp(year, self.years, self.cpis))


def load_deflators(path, reference_year: float = 1974.0,
                   reference_mean_income: float = 64.84) -> DeflatorTable:
    years, cpis = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["year", "cpi"]:
            raise DataError(f"{path}: expected header year,cpi")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields")
            years.append(_parse_float(row[0], f"{path}:{lineno}"))
            cpis.append(_parse_float(row[1], f"{path}:{lineno}"))
    order = np.argsort(years)
    return DeflatorTable(np.asarray(years)[order], np.asarray(cpis)[order],
                         reference_year, reference_mean_income)


# ---------------------------------------------------------------------------
# monetary transforms
# ---------------------------------------------------------------------------

def _scale_monetary(rnd: BandedDistribution, factor: float) -> BandedDistribution:
    if not factor > 0.0:
        raise DomainError(f"scale factor must be positive, got {factor}")
    bands = tuple(
        replace(b, lower=b.lower * factor,
                upper=b.upper * factor if not b.is_open else math.inf,
                mean_total_expenditure=(
                    None if b.mean_total_expenditure is None
                    else b.mean_total_expenditure * factor),
                mean_cereal_expenditure=(
                    None if b.mean_cereal_expenditure is None
                    else b.mean_cereal_expenditure * factor))
        for b in rnd.bands)
    return replace(rnd, bands=bands)


def deflate(rnd: BandedDistribution, table: DeflatorTable) -> BandedDistribution:
    """Convert nominal values to the reference year's prices; shares untouched."""
    ratio = table.cpi(table.reference_year) / table.cpi(rnd.year)
    out = _scale_monetary(rnd, ratio)
    return replace(out, currency_note=f"deflated to {table.reference_year:g}")


def collapse_rescale(rnd: BandedDistribution, target_mean: float) -> BandedDistribution:
    """Rescale monetary values so the round's estimated mean equals target_mean."""
    if not target_mean > 0.0:
        raise DomainError(f"target mean must be positive, got {target_mean}")
    mean = rnd.mean_income()
    if not mean > 0.0:
        raise DataError(f"round {rnd.round_id}: estimated mean income is zero")
    out = _scale_monetary(rnd, target_mean / mean)
    return replace(out, currency_note=f"rescaled to mean {target_mean:g}")


def to_model_income(values, offset: float):
    """Shift observed incomes to model coordinates (income above starvation).

    Values at or below the offset are clamped to a small positive epsilon;
    returns (shifted array, number clamped).
    """
    arr = np.asarray(values, dtype=float) - offset
    clamped = int(np.count_nonzero(arr < MODEL_INCOME_EPS))
    return np.maximum(arr, MODEL_INCOME_EPS), clamped


# ---------------------------------------------------------------------------
# empirical distributions
# ---------------------------------------------------------------------------

class EmpiricalCDF:
    """Piecewise-linear CDF through the cumulative shares at band edges."""

    def __init__(self, rnd: BandedDistribution):
        if len(rnd.bands) < 2:
            raise DataError(f"round {rnd.round_id}: need at least 2 bands for a CDF")
        widths = band_widths(rnd)
        knots = [rnd.bands[0].lower]
        for b, w in zip(rnd.bands, widths):
            knots.append(b.lower + w)
        self.knots = np.asarray(knots)
        self.cum = np.concatenate([[0.0], np.cumsum(rnd.shares)])
        self.cum[-1] = 1.0

    def __call__(self, y):
        return np.interp(y, self.knots, self.cum, left=0.0, right=1.0)


class EmpiricalIPDF:
    """Piecewise-constant density: share / width per band."""

    def __init__(self, rnd: BandedDistribution):
        if len(rnd.bands) < 2:
            raise DataError(f"round {rnd.round_id}: need at least 2 bands for a density")
        widths = band_widths(rnd)
        self.lowers = np.array([b.lower for b in rnd.bands])
        self.uppers = self.lowers + widths
        self.densities = rnd.shares / widths

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.lowers, y, side="right") - 1
        idx = np.clip(idx, 0, len(self.densities) - 1)
        out = np.where((y >= self.lowers[idx]) & (y < self.uppers[idx]),
                       self.densities[idx], 0.0)
        return out if out.ndim else float(out)


def empirical_cdf(rnd: BandedDistribution) -> EmpiricalCDF:
    return EmpiricalCDF(rnd)


def empirical_ipdf(rnd: BandedDistribution) -> EmpiricalIPDF:
    return EmpiricalIPDF(rnd)


# ---------------------------------------------------------------------------
# synthetic rounds
# ---------------------------------------------------------------------------

def _band_probabilities(dist: distlib.SteadyStateIPDF, edges: np.ndarray) -> np.ndarray:
    """Exact raw band probabilities of observed income dist.offset + Y.

    Do not sum to one when the edges cover only part of the range; the
    synthesizer conditions the multinomial on the covered range.
    """
    shifted = edges - dist.offset_ymin
    cdf_vals = np.array([0.0 if e <= 0.0 else distlib.ipdf_cdf(dist, e)
                         for e in shifted])
    return np.diff(cdf_vals)


def _band_conditional_means(dist: distlib.SteadyStateIPDF, edges: np.ndarray,
                            probs: np.ndarray) -> np.ndarray:
    """Exact per-band conditional means of observed income, via the identity
    integral(y f dy, l..u) = C0/M * [Q(M, C0/u) - Q(M, C0/l)]."""
    m, c0, off = dist.shape_M, dist.scale_C0, dist.offset_ymin
    lo = np.maximum(edges[:-1] - off, 0.0)
    hi = edges[1:] - off

    def q_at(v):
        if v <= 0.0:
            return 0.0          # Q(M, inf) = 0 at the y -> 0 end
        if math.isinf(v):
            return 1.0
        return distlib.reg_upper_incomplete_gamma(m, c0 / v)

    out = np.empty(probs.size)
    for i in range(probs.size):
        if probs[i] <= 0.0:
            u = hi[i] if not math.isinf(hi[i]) else lo[i] * 2.0 + 1.0
            out[i] = off + 0.5 * (lo[i] + u)
            continue
        partial = (c0 / m) * (q_at(hi[i]) - q_at(lo[i]))
        out[i] = off + partial / probs[i]
    return out


def synth_round(dist: distlib.SteadyStateIPDF, band_edges, n_population: int,
                seed: int, monod: tuple, round_id: str = "synth",
                year: float = 2000.0) -> BandedDistribution:
    """Generate a survey round from the model law.

    Band counts are multinomial draws from the exact band probabilities;
    per-band mean expenditure is the exact conditional expectation; cereal
    expenditure follows the saturating consumption curve s = V y / (K + y)
    evaluated at the band mean, with (V, K) = ``monod``.
    """
    if n_population <= 0:
        raise DomainError(f"population must be positive, got {n_population}")
    edges = np.asarray(band_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 3:
        raise DataError("need at least 3 band edges (2 bands)")
    if (np.diff(edges) <= 0.0).any() or edges[0] < 0.0:
        raise DataError("band edges must be nonnegative and strictly increasing")
    v_sat, k_half = float(monod[0]), float(monod[1])
    if not (v_sat > 0.0 and k_half > 0.0):
        raise DomainError("Monod parameters must be positive")
    raw = _band_probabilities(dist, edges)
    total = raw.sum()
    if total <= 0.0:
        raise DataError("band edges carry no probability mass")
    means = _band_conditional_means(dist, edges, raw)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n_population, raw / total)
    shares = counts / n_population
    bands = tuple(
        Band(lower=edges[i], upper=edges[i + 1], population_share=shares[i],
             mean_total_expenditure=means[i],
             mean_cereal_expenditure=v_sat * means[i] / (k_half + means[i]))
        for i in range(len(raw)))
    return BandedDistribution(round_id=round_id, year=year, bands=bands,
                              currency_note="synthetic",
                              population_count=n_population)
