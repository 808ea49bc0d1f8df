"""End-to-end experiments: synthetic data, reconstruction and convergence/stability fits.

Each experiment returns an :class:`~qpat_py.models.ExperimentReport` whose rows carry
the config hash and seed. Errors are relative discrete sup and C¹ norms over mask nodes
at least two steps from the outside.
"""

from __future__ import annotations

import logging
import platform
import time
from collections.abc import Sequence
from typing import Literal, NamedTuple, Optional

import numpy as np

from qpat_py.cgo import (
    CGOParams,
    CGOSolution,
    assemble_cgo,
    born_series_psi,
    build_cgo,
    envelope,
    extend_for_config,
    multi_rho_set,
    perturb_illumination,
    solve_psi,
)
from qpat_py.elliptic import solve_diffusion
from qpat_py.errors import QpatError
from qpat_py.grid import (
    ComplexField,
    DomainMask,
    ScalarField,
    VectorField,
    boundary_trace,
    discrete_c1_norm,
    relative_c1_error,
    relative_sup_error,
)
from qpat_py.internal_data import (
    InternalData,
    add_noise,
    forward_measurements,
    forward_measurements_schrodinger,
    synthesize,
)
from qpat_py.models import ExperimentReport, RunConfig
from qpat_py.phantom import Phantom, make_phantom, make_potential
from qpat_py.pipeline import (
    LiouvilleResult,
    ReconResult,
    liouville_forward,
    mu_from_gamma_poisson,
    run_multi_data,
    run_two_data,
)
from qpat_py.recon_fields import (
    GradientCoefficient,
    assemble_gamma,
    beta_gamma_multi,
    beta_gamma_two,
    flatness_gap,
    flatness_remainder,
)
from qpat_py.transport import exit_tangency_diagnostic, sweep_characteristics

logger = logging.getLogger(__name__)

Route = Literal["two-data", "multi-data"]
QUANTITIES = ("mu", "q", "D", "sigma_a")
ROUNDTRIP_TOLERANCES = {"mu": 0.02, "q": 0.05, "D": 0.03, "sigma_a": 0.03}
ERROR_RIM = 2


class SyntheticCase(NamedTuple):
    """A phantom, its Liouville transform and the internal data it produces."""

    phantom: Phantom
    truth: LiouvilleResult
    data: InternalData
    solutions: list[CGOSolution]

    @property
    def mask(self) -> DomainMask:
        return self.phantom.mask


# ============================================================================
# Building blocks
# ============================================================================


def _with_resolution(cfg: RunConfig, n: int) -> RunConfig:
    phantom = cfg.phantom.model_copy(update={"resolution": n})
    potential = cfg.potential.model_copy(update={"resolution": n})
    return cfg.model_copy(update={"phantom": phantom, "potential": potential})


def _new_report(name: str, cfg: RunConfig, mask: Optional[DomainMask] = None) -> ExperimentReport:
    return ExperimentReport(
        name=name,
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        r0=bool(mask.satisfies_r0) if mask is not None else cfg.phantom.mask.shape == "disk",
        platform=platform.platform(),
    )


def frequencies(mask: DomainMask, kmag: float, route: Route) -> list[CGOParams]:
    """CGO frequencies of a route at domain-scaled magnitude ``kmag``."""
    if route == "two-data":
        return [CGOParams.for_mask(kmag, mask)]
    return list(multi_rho_set(kmag / mask.half_width).params)


def synthesize_case(
    cfg: RunConfig,
    route: Optional[Route] = None,
    kmag: Optional[float] = None,
    eps: float = 0.0,
    phantom: Optional[Phantom] = None,
) -> SyntheticCase:
    """Phantom → CGO illuminations → clean internal data.

    ``eps > 0`` perturbs each illumination trace by a smooth boundary field of C¹ norm
    ``eps`` (seeded by ``cfg.seed``).
    """
    route = route or cfg.route
    kmag = kmag or cfg.cgo.kmag
    phantom = phantom or make_phantom(cfg.phantom)
    mask = phantom.mask
    truth = liouville_forward(phantom.D, phantom.sigma_a)
    solver = cfg.recon.solver
    items = []
    solutions = []
    for k, p in enumerate(frequencies(mask, kmag, route)):
        sol = build_cgo(truth.q, mask, p, cfg.cgo)
        solutions.append(sol)
        g = perturb_illumination(sol.trace, eps, mask, seed=cfg.seed + k) if eps else sol.trace
        if cfg.forward_model == "schrodinger":
            items.append(forward_measurements_schrodinger(truth.q, truth.mu, g, mask, solver, p))
        else:
            items.append(forward_measurements(phantom.D, phantom.sigma_a, g, mask, solver, p))
    data = InternalData.concat(items)
    return SyntheticCase(phantom=phantom, truth=truth, data=data, solutions=solutions)


def reconstruct(
    case: SyntheticCase,
    cfg: RunConfig,
    data: Optional[InternalData] = None,
    route: Optional[Route] = None,
) -> ReconResult:
    """Run the route on the case's data (or ``data``) with the exact boundary √D."""
    route = route or cfg.route
    data = case.data if data is None else data
    sqrtD_b = boundary_trace(case.truth.sqrtD, case.mask)
    if route == "two-data":
        return run_two_data(data, sqrtD_b, case.mask, cfg.recon)
    return run_multi_data(data, sqrtD_b, case.mask, cfg.recon)


def reconstruction_errors(
    result: ReconResult, case: SyntheticCase, rim: int = ERROR_RIM
) -> dict[str, tuple[float, float]]:
    """Relative ``(sup, c1)`` errors of μ, q, D and σ_a against the phantom."""
    where = case.mask.valid(rim)
    grid = case.mask.grid
    exact = {
        "mu": case.truth.mu.values,
        "q": case.truth.q.values,
        "D": case.phantom.D.values,
        "sigma_a": case.phantom.sigma_a.values,
    }
    got = result.fields()
    return {
        name: (
            relative_sup_error(got[name].values, exact[name], where),
            relative_c1_error(got[name].values, exact[name], grid, where),
        )
        for name in QUANTITIES
    }


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Slope and intercept of ``log y`` against ``log x`` over finite positive pairs."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    ok = np.isfinite(xa) & np.isfinite(ya) & (xa > 0) & (ya > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(xa[ok]), np.log(ya[ok]), 1)
    return float(slope), float(intercept)


def perturbation_norm(
    clean: InternalData, noisy: InternalData, where: np.ndarray, weighting: str = "absolute"
) -> float:
    """Largest discrete C¹ norm of ``d̃_k - d_k`` (in the centred frame for ``envelope``)."""
    norms = []
    for k, (a, b) in enumerate(zip(clean.data, noisy.data)):
        diff = b.values - a.values
        p = clean.params[k] if clean.params else None
        if weighting == "envelope" and p is not None and clean.center is not None:
            diff = diff / np.abs(envelope(clean.grid, p, clean.center, limit=np.inf))
        norms.append(discrete_c1_norm(diff, clean.grid, where))
    return float(max(norms))


def _finish(report: ExperimentReport, t0: float) -> ExperimentReport:
    report.runtime_s = time.perf_counter() - t0
    status = "PASS" if report.passed else "FAIL"
    logger.info(f"{report.name}: {status} in {report.runtime_s:.1f}s, fits {report.fits}")
    return report


# ============================================================================
# Experiments
# ============================================================================


def roundtrip_experiment(
    cfg: RunConfig,
    resolutions: Optional[Sequence[int]] = None,
    kmag: Optional[float] = None,
    route: Optional[Route] = None,
) -> ExperimentReport:
    """Clean round trip per resolution with fitted convergence orders.

    The tolerance checks apply at the finest resolution when it is at least 257 nodes
    per side. On the gradient route the path mode is also run on the finest grid and
    compared with the Poisson mode.
    """
    t0 = time.perf_counter()
    resolutions = list(resolutions or cfg.sweep.resolutions)
    route = route or cfg.route
    kmag = kmag or cfg.cgo.kmag
    report = _new_report("roundtrip", cfg)
    logger.info("=" * 80)
    logger.info(f"Round trip ({route}, |κ|={kmag:g}) over resolutions {resolutions}")
    logger.info("=" * 80)

    hs: list[float] = []
    sup: dict[str, list[float]] = {name: [] for name in QUANTITIES}
    last: Optional[tuple[SyntheticCase, ReconResult, RunConfig]] = None
    for i, n in enumerate(resolutions, 1):
        logger.info(f"[{i}/{len(resolutions)}] Resolution {n}x{n}")
        cfg_n = _with_resolution(cfg, n)
        case = synthesize_case(cfg_n, route, kmag)
        report.r0 = case.mask.satisfies_r0
        result = reconstruct(case, cfg_n, route=route)
        hs.append(case.mask.grid.h)
        for name, (e_sup, e_c1) in reconstruction_errors(result, case).items():
            sup[name].append(e_sup)
            report.add(name, e_sup, norm="sup", resolution=n, kmag=kmag, label=route)
            report.add(name, e_c1, norm="c1", resolution=n, kmag=kmag, label=route)
        report.add("u_min_rel", result.diagnostics.u_min_rel or 0.0, norm="value",
                   resolution=n, kmag=kmag, label=route)
        report.notes.extend(result.warnings)
        if route == "two-data":
            coeffs = beta_gamma_two(case.data, case.mask)
            sweep = sweep_characteristics(coeffs, case.mask, cfg_n.recon.transport)
            exit_diag = exit_tangency_diagnostic(sweep, coeffs, case.mask)
            report.add("exit_spearman", exit_diag.spearman, norm="value", resolution=n,
                       kmag=kmag, label=case.mask.shape)
            if exit_diag.alignment_min is not None:
                report.add("alignment_min", exit_diag.alignment_min, norm="value",
                           resolution=n, kmag=kmag, label=case.mask.shape)
        last = (case, result, cfg_n)

    if len(resolutions) >= 2:
        for name in QUANTITIES:
            report.fits[f"order_{name}"] = fit_loglog(hs, sup[name])[0]
        report.acceptance["order_mu_ge_1"] = report.fits["order_mu"] >= 1.0
    if resolutions[-1] >= 257:
        for name, tol in ROUNDTRIP_TOLERANCES.items():
            report.acceptance[f"{name}_sup_le_{tol:g}"] = sup[name][-1] <= tol

    if route == "multi-data" and last is not None:
        case, result, cfg_n = last
        logger.info("Comparing the path and Poisson μ solves on the finest grid")
        path_cfg = cfg_n.model_copy(
            update={"recon": cfg_n.recon.model_copy(update={"mu_mode": "path"})}
        )
        other = reconstruct(case, path_cfg, route=route)
        where = case.mask.valid(ERROR_RIM)
        gap = relative_sup_error(other.mu.values, result.mu.values, where)
        err_path = relative_sup_error(other.mu.values, case.truth.mu.values, where)
        n = resolutions[-1]
        report.add("mu", err_path, norm="sup", resolution=n, kmag=kmag, label="path")
        report.add("mu_mode_gap", gap, norm="sup", resolution=n, kmag=kmag, label=route)
        report.acceptance["modes_agree"] = gap <= 3 * max(err_path, sup["mu"][-1])
    return _finish(report, t0)


def stability_sweep(
    cfg: RunConfig,
    levels: Optional[Sequence[float]] = None,
    seeds: Optional[int] = None,
    route: Optional[Route] = None,
) -> ExperimentReport:
    """Reconstruction deviation from the clean run against the data perturbation norm.

    Fits the log-log slope of the median μ deviation against the median measured
    perturbation; ``exp(intercept)`` is the empirical Lipschitz constant. Also reports
    ``‖√D - √D̃‖∞ / (‖q - q̃‖∞ + ‖μ - μ̃‖∞)`` per cell.
    """
    t0 = time.perf_counter()
    levels = sorted(levels or cfg.sweep.levels)
    seeds = seeds or cfg.sweep.seeds
    route = route or cfg.route
    report = _new_report("stability", cfg)
    logger.info("=" * 80)
    logger.info(f"Stability sweep ({route}): levels {levels}, {seeds} seeds")
    logger.info("=" * 80)

    case = synthesize_case(cfg, route)
    mask = case.mask
    report.r0 = mask.satisfies_r0
    clean = reconstruct(case, cfg, route=route)
    n = mask.grid.nx
    kmag = cfg.cgo.kmag
    for name, (e_sup, e_c1) in reconstruction_errors(clean, case).items():
        report.add(name, e_sup, norm="sup", resolution=n, kmag=kmag, level=0.0, label="clean")
        report.add(name, e_c1, norm="c1", resolution=n, kmag=kmag, level=0.0, label="clean")

    where = mask.valid(ERROR_RIM)
    weighting = cfg.noise.weighting
    medians_dev: list[float] = []
    medians_norm: list[float] = []
    total = len(levels) * seeds
    cell = 0
    for level in levels:
        devs: list[float] = []
        norms: list[float] = []
        for s in range(seeds):
            cell += 1
            seed = cfg.seed + s
            logger.info(f"[{cell}/{total}] level {level:.1e}, seed {seed}")
            noisy = add_noise(
                case.data,
                level,
                cfg.noise.corr_width_cells * mask.grid.h,
                seed=seed,
                where=mask.inside,
                weighting=weighting,
            )
            measured = perturbation_norm(case.data, noisy, mask.inside, weighting)
            norms.append(measured)
            report.add("data", measured, norm="c1", seed=seed, resolution=n, kmag=kmag,
                       level=level, label=route)
            try:
                result = reconstruct(case, cfg, data=noisy, route=route)
            except QpatError as e:
                report.notes.append(f"level {level:g} seed {seed}: {e}")
                devs.append(float("nan"))
                continue
            got, ref = result.fields(), clean.fields()
            for name in QUANTITIES:
                dev = relative_sup_error(got[name].values, ref[name].values, where)
                report.add(f"{name}_dev", dev, norm="sup", seed=seed, resolution=n,
                           kmag=kmag, level=level, label=route)
                if name == "mu":
                    devs.append(dev)
            dq = np.abs(result.q.values - clean.q.values)[where].max()
            dmu = np.abs(result.mu.values - clean.mu.values)[where].max()
            ds = np.abs(result.sqrtD.values - clean.sqrtD.values)[where].max()
            ratio = float(ds / (dq + dmu)) if dq + dmu > 0 else 0.0
            report.add("sqrtD_ratio", ratio, norm="value", seed=seed, resolution=n,
                       kmag=kmag, level=level, label=route)
        medians_dev.append(float(np.nanmedian(devs)) if np.isfinite(devs).any() else np.nan)
        medians_norm.append(float(np.median(norms)))

    slope, intercept = fit_loglog(medians_norm, medians_dev)
    report.fits["slope_mu"] = slope
    report.fits["lipschitz_mu"] = float(np.exp(intercept)) if np.isfinite(intercept) else intercept
    finite = [m for m in medians_dev if np.isfinite(m)]
    report.acceptance["slope_mu_in_band"] = bool(np.isfinite(slope) and 0.8 <= slope <= 1.2)
    report.acceptance["medians_monotone"] = len(finite) == len(medians_dev) and all(
        b >= a for a, b in zip(finite, finite[1:])
    )
    return _finish(report, t0)


def psi_decay_experiment(
    cfg: RunConfig,
    kmags: Optional[Sequence[float]] = None,
    method: Literal["direct", "born"] = "direct",
) -> ExperimentReport:
    """``‖ψ‖∞`` over X and ``|κ|·‖ψ‖∞`` for a list of frequencies."""
    t0 = time.perf_counter()
    kmags = sorted(kmags or cfg.sweep.kmags)
    q, mask = make_potential(cfg.potential)
    report = _new_report("psi_decay", cfg, mask)
    logger.info("=" * 80)
    logger.info(f"ψ decay ({method}) for |κ| in {kmags}")
    logger.info("=" * 80)

    qp = extend_for_config(q, mask, cfg.cgo)
    n = mask.grid.nx
    norms: list[float] = []
    for i, k in enumerate(kmags, 1):
        logger.info(f"[{i}/{len(kmags)}] |κ| = {k:g}")
        p = CGOParams.for_mask(k, mask)
        if method == "born":
            psi = born_series_psi(qp, p, cfg.cgo.born_jmax, cfg.cgo.born_tol).psi
        else:
            psi = solve_psi(qp, p, cfg.cgo.solver)
        sol = assemble_cgo(qp, p, psi, cfg.cgo.overflow_limit)
        sup = float(np.abs(sol.psi_on_grid())[mask.inside].max())
        norms.append(sup)
        report.add("psi", sup, norm="sup", resolution=n, kmag=k, label=method)
        report.add("kappa_psi", k * sup, norm="value", resolution=n, kmag=k, label=method)
        report.add("cgo_residual", sol.residual_norm, norm="value", resolution=n, kmag=k,
                   label=method)
        report.acceptance[f"residual_k{k:g}"] = sol.residual_norm <= 1e-6

    products = [k * s for k, s in zip(kmags, norms)]
    if max(products) == 0:
        report.notes.append("ψ vanishes identically (q ≡ 0)")
        report.fits["product_spread"] = 1.0
    else:
        spread = max(products) / min(products) if min(products) > 0 else float("inf")
        report.fits["product_spread"] = spread
        report.acceptance["product_spread_le_3"] = spread <= 3.0
        report.fits["slope_psi"] = fit_loglog(kmags, norms)[0]
        for (k1, s1), (k2, s2) in zip(zip(kmags, norms), zip(kmags[1:], norms[1:])):
            if np.isclose(k2, 2 * k1) and s1 > 0:
                report.fits[f"ratio_k{k2:g}"] = s2 / s1
                report.acceptance[f"ratio_k{k2:g}_in_band"] = 0.3 <= s2 / s1 <= 0.7
    return _finish(report, t0)


def reference_beta(mu: ScalarField, mask: DomainMask, params: CGOParams) -> VectorField:
    """β of the data ``μ·e^{ρ·(x - x_c)}``, i.e. of the same μ with q ≡ 0."""
    center = mask.center_point
    e = envelope(mask.grid, params, center, limit=np.inf)
    u = ComplexField(grid=mask.grid, values=e)
    data = synthesize(mu, u, boundary_trace(u, mask), [params], center)
    return beta_gamma_two(data, mask).beta


def flatness_experiment(
    cfg: RunConfig, kmags: Optional[Sequence[float]] = None
) -> ExperimentReport:
    """Gap between β and its q ≡ 0 reference against |κ|, with the remainder ĥ."""
    t0 = time.perf_counter()
    kmags = sorted(kmags or cfg.sweep.kmags)
    phantom = make_phantom(cfg.phantom)
    mask = phantom.mask
    report = _new_report("flatness", cfg, mask)
    logger.info("=" * 80)
    logger.info(f"Flatness of β for |κ| in {kmags}")
    logger.info("=" * 80)

    n = mask.grid.nx
    gaps: list[float] = []
    for i, k in enumerate(kmags, 1):
        logger.info(f"[{i}/{len(kmags)}] |κ| = {k:g}")
        case = synthesize_case(cfg, "two-data", k, phantom=phantom)
        p = case.data.params[0]
        coeffs = beta_gamma_two(case.data, mask)
        gap = flatness_gap(coeffs, reference=reference_beta(case.truth.mu, mask, p))
        gaps.append(gap)
        psi = ComplexField(grid=mask.grid, values=case.solutions[0].psi_on_grid())
        h_hat = flatness_remainder(psi, psi.conj(), p)
        report.add("flatness", gap, norm="sup", resolution=n, kmag=k)
        report.add("transverse_gap", coeffs.flatness_gap or 0.0, norm="sup", resolution=n, kmag=k)
        report.add("remainder", float(h_hat.magnitude[mask.interior].max()), norm="sup",
                   resolution=n, kmag=k)
        report.add("gamma", float(np.abs(coeffs.gamma.values)[coeffs.valid].max()), norm="sup",
                   resolution=n, kmag=k)

    if max(gaps) == 0:
        report.notes.append("β coincides with its reference at every frequency")
        return _finish(report, t0)
    slope = fit_loglog(kmags, gaps)[0]
    report.fits["slope_flatness"] = slope
    report.acceptance["slope_in_band"] = bool(np.isfinite(slope) and -1.4 <= slope <= -0.6)
    for (k1, g1), (k2, g2) in zip(zip(kmags, gaps), zip(kmags[1:], gaps[1:])):
        if np.isclose(k2, 2 * k1) and g1 > 0:
            report.fits[f"ratio_k{k2:g}"] = g2 / g1
            report.acceptance[f"ratio_k{k2:g}_in_band"] = 0.3 <= g2 / g1 <= 0.8
    return _finish(report, t0)


def illumination_sweep(
    cfg: RunConfig, eps: Optional[Sequence[float]] = None
) -> ExperimentReport:
    """Two-data errors against the illumination perturbation ε and its breakdown point.

    Breakdown is the smallest ε at which the run fails or the μ error exceeds ten times
    the clean error.
    """
    t0 = time.perf_counter()
    eps_list = sorted(eps if eps is not None else cfg.sweep.eps)
    phantom = make_phantom(cfg.phantom)
    mask = phantom.mask
    report = _new_report("illumination", cfg, mask)
    logger.info("=" * 80)
    logger.info(f"Illumination sweep over ε in {eps_list}")
    logger.info("=" * 80)

    n = mask.grid.nx
    kmag = cfg.cgo.kmag
    clean_err: Optional[float] = None
    breakdown = float("nan")
    cells = [0.0] + [x for x in eps_list if x > 0]
    for i, e in enumerate(cells, 1):
        logger.info(f"[{i}/{len(cells)}] ε = {e:g}")
        case = synthesize_case(cfg, "two-data", kmag, eps=e, phantom=phantom)
        try:
            result = reconstruct(case, cfg, route="two-data")
        except QpatError as err:
            report.notes.append(f"ε {e:g}: {err}")
            report.add("failed", 1.0, norm="value", resolution=n, kmag=kmag, level=e)
            if np.isnan(breakdown):
                breakdown = e
            continue
        errs = reconstruction_errors(result, case)
        for name, (e_sup, _) in errs.items():
            report.add(name, e_sup, norm="sup", resolution=n, kmag=kmag, level=e)
        if clean_err is None:
            clean_err = errs["mu"][0]
        elif np.isnan(breakdown) and errs["mu"][0] > 10 * clean_err:
            breakdown = e
    report.fits["breakdown_eps"] = breakdown
    return _finish(report, t0)


def liouville_experiment(
    cfg: RunConfig, resolutions: Optional[Sequence[int]] = None
) -> ExperimentReport:
    """Order of ``‖Δ(√D u) + q√D u‖∞`` for a diffusion solution u under grid refinement."""
    t0 = time.perf_counter()
    resolutions = list(resolutions or cfg.sweep.resolutions)
    report = _new_report("liouville", cfg)
    hs: list[float] = []
    res: list[float] = []
    for i, n in enumerate(resolutions, 1):
        logger.info(f"[{i}/{len(resolutions)}] Liouville residual at {n}x{n}")
        phantom = make_phantom(_with_resolution(cfg, n).phantom)
        mask = phantom.mask
        report.r0 = mask.satisfies_r0
        truth = liouville_forward(phantom.D, phantom.sigma_a)
        g = mask.boundary_values(lambda x, y: 1.0 + 0.5 * x + 0.25 * y)
        u = solve_diffusion(phantom.D, phantom.sigma_a, g, mask, cfg.recon.solver)
        r = truth.residual(u, mask.valid(ERROR_RIM))
        hs.append(mask.grid.h)
        res.append(r)
        report.add("liouville_residual", r, norm="sup", resolution=n)
    if len(res) >= 2:
        report.fits["order_liouville"] = fit_loglog(hs[-2:], res[-2:])[0]
        report.acceptance["order_ge_1.8"] = report.fits["order_liouville"] >= 1.8
    return _finish(report, t0)


def manufactured_gamma(mask: DomainMask) -> tuple[GradientCoefficient, ScalarField]:
    """``Γ = -∇log μ*`` in closed form for ``μ* = exp(0.3 sin(πx)cos(πy) + 0.2x)``."""
    X, Y = mask.grid.coords()
    log_mu = 0.3 * np.sin(np.pi * X) * np.cos(np.pi * Y) + 0.2 * X
    gx = -(0.3 * np.pi * np.cos(np.pi * X) * np.cos(np.pi * Y) + 0.2)
    gy = 0.3 * np.pi * np.sin(np.pi * X) * np.sin(np.pi * Y)
    gamma = GradientCoefficient(
        gamma=VectorField(grid=mask.grid, x=gx, y=gy),
        valid=np.ones(mask.grid.shape, dtype=bool),
        condition_max=1.0,
        curl_residual=0.0,
    )
    return gamma, ScalarField(grid=mask.grid, values=np.exp(log_mu))


def gamma_consistency_experiment(
    cfg: RunConfig, resolutions: Optional[Sequence[int]] = None
) -> ExperimentReport:
    """Curl of Γ on clean data and the manufactured-Γ μ error under grid refinement."""
    t0 = time.perf_counter()
    resolutions = list(resolutions or cfg.sweep.resolutions)
    report = _new_report("gamma_consistency", cfg)
    hs: list[float] = []
    curls: list[float] = []
    errs: list[float] = []
    for i, n in enumerate(resolutions, 1):
        logger.info(f"[{i}/{len(resolutions)}] Γ consistency at {n}x{n}")
        cfg_n = _with_resolution(cfg, n)
        case = synthesize_case(cfg_n, "multi-data")
        mask = case.mask
        report.r0 = mask.satisfies_r0
        gamma = assemble_gamma(beta_gamma_multi(case.data, mask), cfg.recon.cond_max)
        hs.append(mask.grid.h)
        curls.append(gamma.curl_residual)
        report.add("curl_residual", gamma.curl_residual, norm="sup", resolution=n,
                   kmag=cfg.cgo.kmag)

        exact_gamma, mu_star = manufactured_gamma(mask)
        mu0 = boundary_trace(mu_star, mask)
        mu = mu_from_gamma_poisson(exact_gamma, mu0, mask, cfg.recon)
        err = relative_sup_error(mu.values, mu_star.values, mask.inside)
        errs.append(err)
        report.add("mu_manufactured", err, norm="sup", resolution=n)
    if len(resolutions) >= 2:
        report.fits["order_curl"] = fit_loglog(hs[-2:], curls[-2:])[0]
        report.acceptance["order_curl_ge_1.5"] = report.fits["order_curl"] >= 1.5
        for (n1, e1), (n2, e2) in zip(zip(resolutions, errs), zip(resolutions[1:], errs[1:])):
            if n2 - 1 == 2 * (n1 - 1) and e2 > 0:
                report.fits[f"ratio_n{n2}"] = e1 / e2
                report.acceptance[f"ratio_n{n2}_in_band"] = 3.0 <= e1 / e2 <= 5.0
    return _finish(report, t0)


def route_comparison(cfg: RunConfig, kmag: Optional[float] = None) -> ExperimentReport:
    """Both routes on one phantom; μ gap against three times the larger μ error."""
    t0 = time.perf_counter()
    phantom = make_phantom(cfg.phantom)
    report = _new_report("routes", cfg, phantom.mask)
    errs = {}
    mus = {}
    for route in ("two-data", "multi-data"):
        case = synthesize_case(cfg, route, kmag, phantom=phantom)
        result = reconstruct(case, cfg, route=route)
        errs[route] = reconstruction_errors(result, case)["mu"][0]
        mus[route] = result.mu.values
        report.add("mu", errs[route], norm="sup", resolution=phantom.mask.grid.nx, label=route)
    where = phantom.mask.valid(ERROR_RIM)
    gap = relative_sup_error(mus["two-data"], mus["multi-data"], where)
    report.add("mu_route_gap", gap, norm="sup", resolution=phantom.mask.grid.nx)
    report.acceptance["routes_agree"] = gap <= 3 * max(errs.values())
    return _finish(report, t0)


EXPERIMENTS = {
    "roundtrip": roundtrip_experiment,
    "stability": stability_sweep,
    "psi_decay": psi_decay_experiment,
    "flatness": flatness_experiment,
    "illumination": illumination_sweep,
    "liouville": liouville_experiment,
    "gamma_consistency": gamma_consistency_experiment,
    "routes": route_comparison,
}
