"""Experiment runner: Monte-Carlo over realizations, analysis, file output.

Every data file is a pure function of the resolved config.  Timing and
worker count only appear in ``manifest.json``.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .bands import build_sigma, classify_corner, strip_cover, theorem22_bound, theorem23_predicate
from .config import ExperimentConfig, Kind
from .covariance import (
    TorusSpace,
    cor2_checks,
    prop1_identity_check,
    random_positive_recipe,
    random_recipe,
)
from .eigensolver import eig_symmetric, overlap_matrix
from .lattice import (
    BoxSpec,
    PotentialDistribution,
    almost_sure_bands,
    assemble_hamiltonians,
    sample_potential,
)
from .montecarlo import PartialResult, cached_laplacian, fsum_mean, merge_results, realize, run_tasks
from .spectral import (
    Closed,
    EmpiricalMeasure1D,
    EmpiricalMeasure2D,
    Estimator,
    IlacCurve,
    dos_estimate,
    ilac_curve,
    merge_measures,
    rho_estimate,
)
from .tails import (
    TailProfile,
    band_width,
    convexity_proxy,
    default_delta_grid,
    lifshitz_exponent_fit,
    tail_profile,
    theorem21_verify,
    theorem31_report,
)

log = logging.getLogger(__name__)

THEOREM22_TOL = 1e-9


class VerificationFailure(RuntimeError):
    """An inequality that should hold did not; carries the manifest."""

    def __init__(self, message: str, manifest: "RunManifest"):
        super().__init__(message)
        self.manifest = manifest


@dataclass
class RunManifest:
    config: dict
    config_ini: str
    code_version: str
    seeds: list
    timing: dict = field(default_factory=dict)
    leakage: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)

    def as_json(self) -> dict:
        return {
            "config": self.config,
            "config_ini": self.config_ini,
            "code_version": self.code_version,
            "seeds": self.seeds,
            "timing": self.timing,
            "leakage": self.leakage,
            "outputs": self.outputs,
            "verification": self.verification,
        }


class _Writer:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.digests: dict[str, str] = {}

    def text(self, name: str, content: str) -> None:
        path = self.out_dir / name
        data = content.encode("utf-8")
        try:
            path.write_bytes(data)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        self.digests[name] = hashlib.sha256(data).hexdigest()

    def json(self, name: str, payload) -> None:
        self.text(name, json.dumps(payload, indent=1, default=_json_default) + "\n")

    def csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        self.text(name, buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _in_bands(values: np.ndarray, bands: tuple[tuple[float, float], ...]) -> np.ndarray:
    inside = np.zeros(values.shape, dtype=bool)
    for lo, hi in bands:
        inside |= (values >= lo) & (values <= hi)
    return inside


# -- per-realization tasks (module level so they pickle) ---------------------


def _dos_task(box, dist, seed, estimator, index):
    real = realize(box, dist, seed, index, vectors=estimator == Estimator.LOCAL_AT_SITE.value)
    return (
        dos_estimate(real.plus, box, estimator),
        dos_estimate(real.minus, box, estimator),
    )


def _rho_task(box, dist, seed, index):
    real = realize(box, dist, seed, index)
    return rho_estimate(real.plus, real.minus, overlap_matrix(real.plus, real.minus), box)


def _ilac_task(box, dist, seed, index):
    return ilac_curve(_rho_task(box, dist, seed, index))


def _spectrum_task(box, dist, seed, sign, index):
    disorder = sample_potential(dist, box, seed, index)
    pair = assemble_hamiltonians(cached_laplacian(box), disorder, box)
    h = pair.h_plus if sign > 0 else pair.h_minus
    return eig_symmetric(h, compute_vectors=False).eigenvalues


def _verify21_task(box, dist, seed, edges, bands, a_grid, index):
    real = realize(box, dist, seed, index)
    w = overlap_matrix(real.plus, real.minus)
    curve = ilac_curve(rho_estimate(real.plus, real.minus, w, box))
    dp, dm = dos_estimate(real.plus, box), dos_estimate(real.minus, box)
    rows = theorem21_verify(curve, dp, dm, edges[0], edges[1], a_grid, edges[2], edges[3])
    in_band = bool(
        _in_bands(real.plus.eigenvalues, bands[0]).all()
        and _in_bands(real.minus.eigenvalues, bands[1]).all()
    )
    return {
        "lhs": np.array([r["lhs"] for r in rows]),
        "rhs_plus": np.array([r["rhs_plus"] for r in rows]),
        "rhs_minus": np.array([r["rhs_minus"] for r in rows]),
        "rhs_tight": np.array([r["rhs_tight"] for r in rows]),
        "in_band": in_band,
        "extremes": np.array(
            [real.plus.eigenvalues[0], real.minus.eigenvalues[0],
             real.plus.eigenvalues[-1], real.minus.eigenvalues[-1]]
        ),
    }


def _corners_task(box, dist, seed, bands, probes, a_grid, index):
    """In-band ILAC increments at each probed energy plus the in-band spectra."""
    real = realize(box, dist, seed, index)
    w = overlap_matrix(real.plus, real.minus)
    ip = _in_bands(real.plus.eigenvalues, bands[0])
    im = _in_bands(real.minus.eigenvalues, bands[1])
    n = real.plus.size
    sums = real.plus.eigenvalues[ip][:, None] + real.minus.eigenvalues[im][None, :]
    curve = IlacCurve(sums, w[np.ix_(ip, im)] / n)
    inc = np.array([[curve.increment(e, a) for a in a_grid] for e in probes])
    return {
        "increments": inc,
        "plus": real.plus.eigenvalues[ip],
        "minus": real.minus.eigenvalues[im],
        "n": n,
        "outside": int((~ip).sum() + (~im).sum()),
    }


# -- kinds ----------------------------------------------------------------------


def _collect(config: ExperimentConfig, task) -> list:
    results = run_tasks(task, range(config.realizations), config.workers)
    partial = merge_results([PartialResult(config.digest(), results)])
    return partial.ordered()


def _bands(config):
    d = config.box.dimension
    return almost_sure_bands(config.distribution, d, +1), almost_sure_bands(config.distribution, d, -1)


def _histogram_rows(measures, bins, lo, hi):
    edges = np.linspace(lo, hi, bins + 1)
    cols = [m.histogram(edges) for m in measures]
    for k in range(bins):
        yield [float(edges[k]), float(edges[k + 1])] + [float(c[k]) for c in cols]


def _run_dos(config, out: _Writer, manifest: RunManifest):
    box, dist = config.box, config.distribution
    estimator = Estimator(config.params["estimator"]).value
    parts = _collect(config, functools.partial(_dos_task, box, dist, config.master_seed, estimator))
    plus = merge_measures([p for p, _ in parts])
    minus = merge_measures([m for _, m in parts])
    bp, bm = _bands(config)
    for name, m, bs in (("dos_plus", plus, bp), ("dos_minus", minus, bm)):
        out.text(f"{name}.csv", m.to_csv())
        out.json(
            f"{name}.meta.json",
            {"estimator": m.estimator, "total_mass": m.total_mass, "atoms": len(m),
             "realizations": config.realizations, "bands": bs.as_floats()},
        )
    manifest.leakage = _leakage([(plus.positions, bp), (minus.positions, bm)])
    if config.params["bins"] > 0:
        lo = float(min(bp.inf, bm.inf))
        hi = float(max(bp.sup, bm.sup))
        out.csv("dos_hist.csv", ["bin_lo", "bin_hi", "n_plus", "n_minus"],
                _histogram_rows([plus, minus], config.params["bins"], lo, hi))


def _leakage(pairs) -> dict:
    out = {}
    for label, (values, bands) in zip(("plus", "minus"), pairs):
        inside = bands.contains(values)
        out[label] = {"outside": int((~inside).sum()), "fraction": float((~inside).mean())}
    return out


def _run_rho(config, out, manifest):
    box, dist = config.box, config.distribution
    rho = merge_measures(_collect(config, functools.partial(_rho_task, box, dist, config.master_seed)))
    out.text("rho.csv", rho.to_csv())
    bp, bm = _bands(config)
    manifest.leakage = _leakage([(rho.marginal(0).positions, bp), (rho.marginal(1).positions, bm)])
    out.json("rho.meta.json", {"estimator": rho.estimator, "total_mass": rho.total_mass,
                                "atoms": len(rho), "realizations": config.realizations})
    if config.params["bins"] > 0:
        bins = config.params["bins"]
        xe = np.linspace(float(bp.inf), float(bp.sup), bins + 1)
        ye = np.linspace(float(bm.inf), float(bm.sup), bins + 1)
        rows = []
        for i in range(bins):
            for j in range(bins):
                mass = rho.mass((xe[i], xe[i + 1]), (ye[j], ye[j + 1]))
                rows.append([xe[i], xe[i + 1], ye[j], ye[j + 1], mass])
        out.csv("rho_hist.csv", ["x_lo", "x_hi", "y_lo", "y_hi", "mass"], rows)


def _run_ilac(config, out, manifest):
    box, dist = config.box, config.distribution
    curve = merge_measures(_collect(config, functools.partial(_ilac_task, box, dist, config.master_seed)))
    out.text("ilac.csv", curve.to_csv())
    out.json("ilac.meta.json", {"total_mass": curve.total_mass, "atoms": int(curve.sums.size),
                                 "realizations": config.realizations})
    if config.params["bins"] > 0:
        bp, bm = _bands(config)
        lo, hi = float(bp.inf + bm.inf), float(bp.sup + bm.sup)
        edges = np.linspace(lo, hi, config.params["bins"] + 1)
        out.csv("ilac_hist.csv", ["bin_lo", "bin_hi", "mass"],
                ([edges[k], edges[k + 1], curve.mass(edges[k], edges[k + 1])]
                 for k in range(len(edges) - 1)))


def _run_tails(config, out, manifest):
    box, dist = config.box, config.distribution
    sign = 1 if config.params["sign"] >= 0 else -1
    bands = almost_sure_bands(dist, box.dimension, sign)
    spectra = _collect(config, functools.partial(_spectrum_task, box, dist, config.master_seed, sign))
    n = box.n_sites
    dos = merge_measures([EmpiricalMeasure1D(s, np.full(n, 1.0 / n)) for s in spectra])
    edge = float(bands.inf if config.params["edge"] == "lower" else bands.sup)
    grid = config.params["delta_grid"] or default_delta_grid(float(band_width(bands))).tolist()
    profile = tail_profile(dos, edge, grid, config.params["side"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = lifshitz_exponent_fit(profile)
    out.text("tail_profile.csv", profile.to_csv())
    out.json("tail_fit.json", {"profile": profile.as_json(), "fit": fit.as_json(),
                                "convexity": convexity_proxy(profile),
                                "bands": bands.as_floats(), "sign": sign})
    manifest.leakage = _leakage([(dos.positions, bands)])


def _run_verify21(config, out, manifest):
    box, dist = config.box, config.distribution
    bp, bm = _bands(config)
    edges = (float(bp.inf), float(bm.inf), float(bp.sup), float(bm.sup))
    a_grid = tuple(float(a) for a in config.params["a_grid"])
    band_floats = (tuple(bp.as_floats()), tuple(bm.as_floats()))
    task = functools.partial(_verify21_task, box, dist, config.master_seed, edges, band_floats, a_grid)
    results = _collect(config, task)
    kept = [r for r in results if r["in_band"]]
    excluded = len(results) - len(kept)
    fraction = excluded / len(results)
    labels = [("lower", a) for a in a_grid] + [("upper", a) for a in a_grid]
    violations = np.zeros(len(labels), dtype=int)
    tight_violations = np.zeros(len(labels), dtype=int)
    for r in kept:
        rhs = np.minimum(r["rhs_plus"], r["rhs_minus"])
        violations += r["lhs"] > rhs + 1e-12
        tight_violations += r["lhs"] > r["rhs_tight"] + 1e-12
    rows = []
    if kept:
        lhs = fsum_mean(r["lhs"] for r in kept)
        rp = fsum_mean(r["rhs_plus"] for r in kept)
        rm = fsum_mean(r["rhs_minus"] for r in kept)
        rt = fsum_mean(r["rhs_tight"] for r in kept)
        for k, (edge, a) in enumerate(labels):
            rhs = min(rp[k], rm[k])
            rows.append([edge, a, lhs[k], rp[k], rm[k], rhs, bool(lhs[k] <= rhs + 1e-12),
                         rt[k], int(violations[k]), int(tight_violations[k])])
    out.csv("verify21.csv",
            ["edge", "a", "lhs", "rhs_plus", "rhs_minus", "rhs", "holds", "rhs_tight",
             "realization_violations", "realization_violations_tight"], rows)
    extremes = np.array([r["extremes"] for r in results])
    summary = {
        "realizations": len(results),
        "excluded": excluded,
        "exclusion_fraction": fraction,
        "max_exclusion": config.params["max_exclusion"],
        "edges": {"E_plus": edges[0], "E_minus": edges[1], "E_plus_top": edges[2], "E_minus_top": edges[3]},
        "observed": {
            "min_eig_plus": float(extremes[:, 0].min()),
            "min_eig_minus": float(extremes[:, 1].min()),
            "max_eig_plus": float(extremes[:, 2].max()),
            "max_eig_minus": float(extremes[:, 3].max()),
        },
        "realization_violations": int(violations.sum()),
        "realization_violations_tight": int(tight_violations.sum()),
        "merged_holds": all(row[6] for row in rows) if rows else False,
    }
    summary["passed"] = bool(
        kept and summary["realization_violations"] == 0 and summary["merged_holds"]
        and fraction < config.params["max_exclusion"]
    )
    out.json("verify21.json", summary)
    manifest.leakage = {"excluded_realizations": excluded, "fraction": fraction}
    manifest.verification = {"passed": summary["passed"]}


def _run_corners(config, out, manifest):
    box, dist = config.box, config.distribution
    bp, bm = _bands(config)
    sigma = build_sigma(bp, bm)
    reports = [classify_corner(sigma, c) for c in sigma.corners()]
    out.json("corners.json", [r.as_json() for r in reports])
    if len(bp) == 2 and len(bm) == 2:
        t23 = theorem23_predicate(bp, bm)
        out.json("theorem23.json", {
            "chain": t23["chain"],
            "ordering_holds": t23["ordering_holds"],
            "good_corners": t23["good_corners"],
            "symmetric_extras": t23["symmetric_extras"],
            "refuted": t23["refuted"],
            "cross_validated": t23["cross_validated"],
        })
    good = [r for r in reports if r.is_good]
    a_grid = tuple(float(a) for a in config.params["a_grid"])
    covers = []
    for r in good:
        for a in a_grid:
            cover = strip_cover(sigma, r.corner, Fraction(a))
            covers.append({"corner": r.corner, "a": a, "contained": cover.contained,
                           "counterexample": cover.counterexample,
                           "squares": [[q.x_lo, q.y_lo, q.side] for q in cover.squares]})
    out.json("strip_cover.json", covers)
    probes = tuple(float(r.corner[0] + r.corner[1]) for r in good)
    band_floats = (tuple(bp.as_floats()), tuple(bm.as_floats()))
    task = functools.partial(_corners_task, box, dist, config.master_seed, band_floats, probes, a_grid)
    results = _collect(config, task)
    R = len(results)
    n = box.n_sites
    dos_plus = merge_measures([EmpiricalMeasure1D(r["plus"], np.full(r["plus"].size, 1.0 / n)) for r in results])
    dos_minus = merge_measures([EmpiricalMeasure1D(r["minus"], np.full(r["minus"].size, 1.0 / n)) for r in results])
    outside = sum(r["outside"] for r in results)
    leakage = outside / (2 * n * R)
    rows = []
    all_hold = True
    if good:
        increments = fsum_mean(r["increments"] for r in results)
        cover_ok = {(c["corner"], c["a"]): c["contained"] for c in covers}
        for k, r in enumerate(good):
            for j, a in enumerate(a_grid):
                bound = theorem22_bound(r.k_set, dos_plus, dos_minus, a)
                holds = bool(increments[k, j] <= bound + THEOREM22_TOL)
                if cover_ok[(r.corner, a)]:
                    all_hold &= holds
                label = f"({r.corner[0]},{r.corner[1]})"
                rows.append([label, a, increments[k, j], bound, holds])
    out.csv("theorem22_bounds.csv", ["corner", "a", "ilac_increment", "bound", "holds"], rows)
    manifest.leakage = {"outside": outside, "fraction": leakage, "meaningful": leakage < 0.05}
    manifest.verification = {"passed": bool(all_hold or leakage >= 0.05)}


def _run_verify31(config, out, manifest):
    report = theorem31_report(config)
    out.json("verify31.json", report)
    for section in ("external", "internal"):
        for probe in report[section]:
            prof = probe["profile"]
            profile = TailProfile(prof["edge"], prof["deltas"], prof["masses"], prof["side"])
            out.text(f"verify31_{probe['label']}.csv", profile.to_csv())
    manifest.leakage = {"fraction": report["leakage_fraction"]}


def _run_covariance(config, out, manifest):
    p = config.params
    torus = TorusSpace(p["torus_dimension"], p["torus_size"])
    rng = np.random.Generator(np.random.Philox(key=np.array([config.master_seed, 0], dtype=np.uint64)))
    omega = rng.random(torus.n_sites)
    first, second = torus.partition_sums()
    eye = np.eye(torus.n_sites)
    checks = [{
        "identity": "partition of unity",
        "lhs": float(np.abs(first - eye).max()),
        "rhs": float(np.abs(second - eye).max()),
        "max_abs_diff": 0.0,
        "pass": bool(np.array_equal(first, eye) and np.array_equal(second, eye)),
    }]
    for _ in range(p["families"]):
        a, b = random_recipe(rng, torus), random_recipe(rng, torus)
        checks.append(prop1_identity_check(a, b, torus, omega).as_json())
    for _ in range(p["families"]):
        a, b = random_positive_recipe(rng, torus), random_positive_recipe(rng, torus)
        c = random_recipe(rng, torus)
        res = cor2_checks(a, b, c, torus, omega)
        checks.append(res["cyclic"].as_json())
        checks.append(res["positivity"].as_json())
    out.json("covariance.json", checks)
    passed = all(c["pass"] for c in checks)
    manifest.verification = {"passed": passed, "checks": len(checks)}


_RUNNERS = {
    Kind.DOS: _run_dos,
    Kind.RHO: _run_rho,
    Kind.ILAC: _run_ilac,
    Kind.TAILS: _run_tails,
    Kind.VERIFY21: _run_verify21,
    Kind.CORNERS: _run_corners,
    Kind.VERIFY31: _run_verify31,
    Kind.COVARIANCE: _run_covariance,
}

_MC_KINDS = {Kind.DOS, Kind.RHO, Kind.ILAC, Kind.TAILS, Kind.VERIFY21, Kind.CORNERS, Kind.VERIFY31}


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunManifest:
    """Run one experiment and write its data files plus ``manifest.json``.

    Raises ``VerificationFailure`` (after writing everything) when a check
    that should hold does not.
    """
    out_path = Path(out_dir if out_dir is not None else config.out_dir)
    try:
        out_path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_path}: {exc}") from exc
    seeds = (
        [[config.master_seed, i] for i in range(config.realizations)]
        if config.kind in _MC_KINDS
        else [[config.master_seed, 0]]
    )
    manifest = RunManifest(config.as_dict(), config.to_ini(), __version__, seeds)
    writer = _Writer(out_path)
    start = time.perf_counter()
    _RUNNERS[config.kind](config, writer, manifest)
    manifest.timing = {"wall_seconds": time.perf_counter() - start, "workers": config.workers}
    manifest.outputs = dict(sorted(writer.digests.items()))
    (out_path / "manifest.json").write_text(
        json.dumps(manifest.as_json(), indent=1, default=_json_default) + "\n", encoding="utf-8"
    )
    log.info("wrote %d files to %s", len(manifest.outputs), out_path)
    if manifest.verification and not manifest.verification.get("passed", True):
        raise VerificationFailure(f"{config.kind.value}: verification failed", manifest)
    return manifest
