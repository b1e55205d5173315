"""Tail masses near band edges, Lifshitz exponent fits, and the edge inequalities."""

from __future__ import annotations

import csv
import enum
import functools
import io
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bands import build_sigma, classify_corner
from .config import ExperimentConfig
from .eigensolver import overlap_matrix
from .lattice import (
    BandStructure,
    BoxSpec,
    DistributionKind,
    PotentialDistribution,
    almost_sure_bands,
)
from .montecarlo import fsum_mean, realize, run_tasks
from .spectral import (
    Closed,
    EmpiricalMeasure1D,
    IlacCurve,
    ilac_curve,
    rho_estimate,
)

INEQUALITY_TOL = 1e-12
FLAT_ALPHA = 1e-6


class Side(str, enum.Enum):
    TWO_SIDED = "two_sided"
    RIGHT = "right"
    LEFT = "left"


@dataclass(frozen=True)
class TailProfile:
    edge: float
    deltas: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)
    side: Side = Side.TWO_SIDED

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if deltas.shape != masses.shape:
            raise ValueError("one mass per delta is required")
        if np.any(deltas <= 0) or np.any(np.diff(deltas) >= 0):
            raise ValueError("deltas must be positive and strictly decreasing")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "side", Side(self.side))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["delta", "mass", "log_delta", "loglog_mass"])
        for d, m in zip(self.deltas, self.masses):
            loglog = f"{math.log(-math.log(m)):.17g}" if 0.0 < m < 1.0 else ""
            writer.writerow([f"{d:.17g}", f"{m:.17g}", f"{math.log(d):.17g}", loglog])
        return buf.getvalue()

    def as_json(self) -> dict:
        return {
            "edge": self.edge,
            "side": self.side.value,
            "deltas": self.deltas.tolist(),
            "masses": self.masses.tolist(),
        }


@dataclass(frozen=True)
class LifshitzFit:
    alpha: float
    constant: float
    r_squared: float
    points_used: int
    valid: bool
    verdict: str
    excluded_zero: int = 0
    excluded_saturated: int = 0

    @property
    def is_lifshitz(self) -> bool:
        return self.valid and self.alpha > FLAT_ALPHA

    def as_json(self) -> dict:
        def num(x):
            return None if math.isnan(x) else x

        return {
            "alpha": num(self.alpha),
            "C": num(self.constant),
            "r_squared": num(self.r_squared),
            "points_used": self.points_used,
            "valid": self.valid,
            "verdict": self.verdict,
            "excluded_zero": self.excluded_zero,
            "excluded_saturated": self.excluded_saturated,
        }


def default_delta_grid(bandwidth: float, points: int = 8, hi: float = 0.5, lo: float = 0.05) -> np.ndarray:
    """Geometric grid from ``hi`` down to ``lo`` times the band width."""
    return np.geomspace(hi * float(bandwidth), lo * float(bandwidth), points)


def _window(measure, edge: float, delta: float, side: Side) -> float:
    if isinstance(measure, IlacCurve):
        if side is Side.TWO_SIDED:
            return measure.mass(edge - delta, edge + delta, Closed.RIGHT)
        if side is Side.RIGHT:
            return measure.mass(edge, edge + delta, Closed.BOTH)
        return measure.mass(edge - delta, edge, Closed.RIGHT)
    if side is Side.TWO_SIDED:
        return measure.mass(edge - delta, edge + delta, Closed.NEITHER)
    if side is Side.RIGHT:
        return measure.mass(edge, edge + delta, Closed.LEFT)
    return measure.mass(edge - delta, edge, Closed.RIGHT)


def tail_profile(
    measure: EmpiricalMeasure1D | IlacCurve,
    edge: float,
    delta_grid: Sequence[float],
    side: Side | str = Side.TWO_SIDED,
) -> TailProfile:
    """m(δ) = mass of the window of half-width δ at ``edge``.

    For a density of states the two-sided window is (E - δ, E + δ); for an
    ILAC curve it is (E - δ, E + δ], i.e. A(E + δ) - A(E - δ).
    """
    side = Side(side)
    deltas = np.asarray(delta_grid, dtype=float)
    masses = [_window(measure, float(edge), float(d), side) for d in deltas]
    return TailProfile(float(edge), deltas, np.array(masses), side)


def lifshitz_exponent_fit(profile: TailProfile) -> LifshitzFit:
    """Fit m(δ) ≈ exp(-C δ^(-α)) by regressing log(-log m) on log(1/δ).

    Samples with m = 0 or m >= 1 are left out; fewer than three usable
    samples give an invalid fit instead of an exception.
    """
    m = profile.masses
    zero = m <= 0.0
    saturated = m >= 1.0
    if saturated.any():
        warnings.warn(
            f"{int(saturated.sum())} tail samples have mass >= 1 and are excluded from the fit",
            stacklevel=2,
        )
    usable = ~zero & ~saturated
    n = int(usable.sum())
    counts = {"excluded_zero": int(zero.sum()), "excluded_saturated": int(saturated.sum())}
    if n < 3:
        verdict = "no tail mass resolved" if not usable.any() and zero.all() else "too few usable points"
        return LifshitzFit(math.nan, math.nan, math.nan, n, False, verdict, **counts)
    x = np.log(1.0 / profile.deltas[usable])
    y = np.log(-np.log(m[usable]))
    design = np.column_stack([x, np.ones_like(x)])
    (alpha, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([alpha, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else math.nan
    alpha = float(alpha)
    verdict = "lifshitz" if alpha > FLAT_ALPHA else "non-lifshitz"
    return LifshitzFit(alpha, math.exp(float(intercept)), r2, n, True, verdict, **counts)


def convexity_proxy(profile: TailProfile) -> dict:
    """Slopes of log m against log δ must grow as δ shrinks.

    Slopes are taken between consecutive positive-mass samples in profile
    order (δ decreasing); the check passes when all successive slope
    differences are nonnegative.
    """
    keep = profile.masses > 0
    x = np.log(profile.deltas[keep])
    y = np.log(profile.masses[keep])
    slopes = np.diff(y) / np.diff(x)
    second = np.diff(slopes)
    return {
        "slopes": slopes.tolist(),
        "second_differences": second.tolist(),
        "points": int(keep.sum()),
        "satisfied": bool(second.size > 0 and np.all(second >= 0.0)),
    }


def theorem21_verify(
    ilac: IlacCurve,
    dos_plus: EmpiricalMeasure1D,
    dos_minus: EmpiricalMeasure1D,
    e_plus: float,
    e_minus: float,
    a_grid: Sequence[float],
    e_plus_top: float | None = None,
    e_minus_top: float | None = None,
) -> list[dict]:
    """Edge inequality A(E₊+E₋+a) - A(E₊+E₋-a) <= min(n₊(W₊), n₋(W₋)).

    ``rhs`` uses the windows (E± - 2a, E± + 2a); ``rhs_tight`` uses the
    one-sided windows [E±, E± + 2a) at a lower edge and (E± - 2a, E±] at an
    upper edge, which already bound the increment when every eigenvalue
    sits on the correct side of the edge.
    """
    a_grid = [float(a) for a in a_grid]
    if not a_grid:
        raise ValueError("a_grid is empty")
    edges = [("lower", float(e_plus), float(e_minus))]
    if e_plus_top is not None and e_minus_top is not None:
        edges.append(("upper", float(e_plus_top), float(e_minus_top)))
    rows = []
    for name, ep, em in edges:
        energy = ep + em
        for a in a_grid:
            lhs = ilac.increment(energy, a)
            rhs_plus = dos_plus.mass(ep - 2 * a, ep + 2 * a, Closed.NEITHER)
            rhs_minus = dos_minus.mass(em - 2 * a, em + 2 * a, Closed.NEITHER)
            if name == "lower":
                tight_plus = dos_plus.mass(ep, ep + 2 * a, Closed.LEFT)
                tight_minus = dos_minus.mass(em, em + 2 * a, Closed.LEFT)
            else:
                tight_plus = dos_plus.mass(ep - 2 * a, ep, Closed.RIGHT)
                tight_minus = dos_minus.mass(em - 2 * a, em, Closed.RIGHT)
            rhs = min(rhs_plus, rhs_minus)
            rhs_tight = min(tight_plus, tight_minus)
            rows.append(
                {
                    "edge": name,
                    "energy": energy,
                    "a": a,
                    "lhs": lhs,
                    "rhs_plus": rhs_plus,
                    "rhs_minus": rhs_minus,
                    "rhs": rhs,
                    "holds": lhs <= rhs + INEQUALITY_TOL,
                    "rhs_tight": rhs_tight,
                    "holds_tight": lhs <= rhs_tight + INEQUALITY_TOL,
                }
            )
    return rows


# -- band-edge probing --------------------------------------------------------


def regularity_report(dist: PotentialDistribution) -> list[dict]:
    """μ((a, a+ε)) >= Cε and μ((b-ε, b)) >= Cε at every support edge (N = 1)."""
    out = []
    if dist.kind is DistributionKind.BERNOULLI:
        for lo, _ in dist.support():
            for side in ("left", "right"):
                out.append({"edge": lo, "side": side, "holds": False, "C": 0.0, "N": 1})
        return out
    if dist.kind is DistributionKind.TWO_INTERVAL:
        pieces = [(dist.a1, dist.b1, dist.p), (dist.a2, dist.b2, 1.0 - dist.p)]
    else:
        pieces = [(dist.a1, dist.b1, 1.0)]
    for lo, hi, weight in pieces:
        if weight == 0.0:
            continue
        density = weight / (hi - lo) if hi > lo else 0.0
        for edge, side in ((lo, "left"), (hi, "right")):
            out.append({"edge": edge, "side": side, "holds": density > 0.0, "C": density, "N": 1})
    return out


def probe_energies(bands_plus: BandStructure, bands_minus: BandStructure) -> dict[str, list[dict]]:
    """External and internal ILAC probe energies with their (λ⁺, λ⁻) corners."""
    bp, bm = bands_plus.bands, bands_minus.bands
    external = [("a1+a1", (bp[0][0], bm[0][0])), ("bN+bN", (bp[-1][1], bm[-1][1]))]
    internal = []
    if len(bp) == 2 and len(bm) == 2:
        (a1p, b1p), (a2p, b2p) = bp
        (a1m, b1m), (a2m, b2m) = bm
        internal = [
            ("b1+a1", (b1p, a1m)),
            ("a2+a1", (a2p, a1m)),
            ("b2+a1", (b2p, a1m)),
            ("a1+a2", (a1p, a2m)),
            ("b1+b2", (b1p, b2m)),
            ("a2+a2", (a2p, a2m)),
        ]

    def entries(items):
        return [{"label": lab, "corner": c, "energy": c[0] + c[1]} for lab, c in items]

    return {"external": entries(external), "internal": entries(internal)}


def _probe_task(
    box: BoxSpec,
    dist: PotentialDistribution,
    seed: int,
    energies: tuple[float, ...],
    deltas: tuple[float, ...],
    bands: tuple[tuple[tuple[float, float], ...], tuple[tuple[float, float], ...]],
    index: int,
) -> dict:
    real = realize(box, dist, seed, index)
    w = overlap_matrix(real.plus, real.minus)
    curve = ilac_curve(rho_estimate(real.plus, real.minus, w, box))
    inc = np.array([[curve.increment(e, d) for d in deltas] for e in energies])
    outside = 0
    for dec, bs in ((real.plus, bands[0]), (real.minus, bands[1])):
        inside = np.zeros(dec.size, dtype=bool)
        for lo, hi in bs:
            inside |= (dec.eigenvalues >= lo) & (dec.eigenvalues <= hi)
        outside += int((~inside).sum())
    return {"increments": inc, "outside": outside, "n": 2 * real.plus.size}


def theorem31_report(config: ExperimentConfig) -> dict:
    """Monte-Carlo tail profiles of the ILAC at external and internal band edges."""
    dist, box = config.distribution, config.box
    bands_plus = almost_sure_bands(dist, box.dimension, +1)
    bands_minus = almost_sure_bands(dist, box.dimension, -1)
    probes = probe_energies(bands_plus, bands_minus)
    gap = bands_plus.gap_condition_met and bands_minus.gap_condition_met
    if len(dist.support()) < 2:
        internal_note = "single-interval support: no internal band edges"
        probes["internal"] = []
    elif not gap:
        internal_note = "gap condition unmet: widened support intervals overlap, internal edges skipped"
        probes["internal"] = []
    else:
        internal_note = None
    width = float(min(band_width(bands_plus), band_width(bands_minus)))
    deltas = config.params.get("delta_grid") or default_delta_grid(width).tolist()
    probed = probes["external"] + probes["internal"]
    energies = tuple(float(p["energy"]) for p in probed)
    task = functools.partial(
        _probe_task,
        box,
        dist,
        config.master_seed,
        energies,
        tuple(float(d) for d in deltas),
        (tuple(bands_plus.as_floats()), tuple(bands_minus.as_floats())),
    )
    results = run_tasks(task, range(config.realizations), config.workers)
    ordered = [results[i] for i in sorted(results)]
    mean_inc = fsum_mean(r["increments"] for r in ordered)
    outside = sum(r["outside"] for r in ordered)
    total = sum(r["n"] for r in ordered)
    sigma = build_sigma(bands_plus, bands_minus)
    sections: dict[str, list] = {"external": [], "internal": []}
    for k, probe in enumerate(probed):
        section = "external" if k < len(probes["external"]) else "internal"
        profile = TailProfile(float(probe["energy"]), np.array(deltas), mean_inc[k], Side.TWO_SIDED)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = lifshitz_exponent_fit(profile)
        cert = classify_corner(sigma, probe["corner"])
        sections[section].append(
            {
                "label": probe["label"],
                "energy": float(probe["energy"]),
                "corner": [str(c) for c in probe["corner"]],
                "certificate": cert.as_json(),
                "profile": profile.as_json(),
                "fit": fit.as_json(),
            }
        )
    return {
        "bands_plus": [[str(lo), str(hi)] for lo, hi in bands_plus.bands],
        "bands_minus": [[str(lo), str(hi)] for lo, hi in bands_minus.bands],
        "gap_condition_met": gap,
        "regularity": regularity_report(dist),
        "external": sections["external"],
        "internal": sections["internal"],
        "internal_skipped": internal_note,
        "leakage_fraction": outside / total if total else 0.0,
        "realizations": len(ordered),
    }


def band_width(bands: BandStructure) -> Fraction:
    return min(hi - lo for lo, hi in bands.bands)
