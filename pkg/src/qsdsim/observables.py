"""Localization diagnostics for trajectory states.

The central quantities are the correlation

    sigma(G, O) = <G_dag O> - <G_dag><O>

and the shape diagnostics built from it: quadrature spreads, their
excesses over the coherent-state widths, the symmetrized q-p
correlation R and the phase-space spread (delta alpha)^2.  A note on
letters: conventions in the literature attach P and Q to either
quadrature; here P is always the position excess and Q the momentum
excess,

    P = var_q / sigma_q^2 - 1,      Q = var_p / sigma_p^2 - 1,

and the CSV columns named P and Q follow the same rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields as dc_fields

import numpy as np
from scipy import stats as sp_stats

from .constants import FIT_FLOOR_REL, FIT_FLOOR_SIGMA, FIT_MIN_POINTS
from .errors import DimensionError, FitError
from .model import ModelParams, OperatorSet

#: Column order of the trajectory CSV format.
# Report labels: the position excess (excess_q) is the Q column, the
# momentum excess (excess_p) the P column; values stay in field order.
CSV_COLUMNS = ("t", "q_mean", "p_mean", "var_q", "var_p", "R", "Q", "P",
               "delta_alpha_sq", "n_mean")

_CONSISTENCY_TOL = 1e-10


@dataclass(frozen=True)
class ObservableBundle:
    """Shape diagnostics of a single normalized state at time t."""

    t: float
    q_mean: float
    p_mean: float
    var_q: float
    var_p: float
    R: float
    excess_q: float
    excess_p: float
    delta_alpha_sq: float
    n_mean: float


def sigma(state: np.ndarray, gamma_op: np.ndarray, op: np.ndarray) -> complex:
    """Correlation <G_dag O> - <G_dag><O> on a normalized state."""
    if state.shape[-1] != gamma_op.shape[0] or gamma_op.shape != op.shape:
        raise DimensionError("state and operator dimensions disagree")
    g_psi = gamma_op @ state
    o_psi = op @ state
    return complex(np.vdot(g_psi, o_psi) - np.vdot(state, g_psi).conjugate()
                   * np.vdot(state, o_psi))


def bundle_arrays(states: np.ndarray, ops: OperatorSet, t: float) -> dict:
    """Diagnostics for a batch of states, shape (..., n_fock).

    Returns a dict of real arrays keyed by the ObservableBundle field
    names.  Everything is derived from <a>, <a^2> and <n>:

        <q> = 2 sigma_q Re<a>,  <q^2> = sigma_q^2 (2 Re<a^2> + 2<n> + 1)
        <p> = 2 sigma_p Im<a>,  <p^2> = sigma_p^2 (-2 Re<a^2> + 2<n> + 1)
        R   = hbar Im<a^2> - <p><q>
    """
    p = ops.params
    norm_sq = np.einsum("...i,...i->...", states.conj(), states).real
    a_psi = states @ ops.a.T
    exp_a = np.einsum("...i,...i->...", states.conj(), a_psi) / norm_sq
    exp_a2 = np.einsum("...i,...i->...", states.conj(), a_psi @ ops.a.T) / norm_sq
    exp_n = np.einsum("...i,...i->...", a_psi.conj(), a_psi).real / norm_sq

    q_mean = 2.0 * p.sigma_q * exp_a.real
    p_mean = 2.0 * p.sigma_p * exp_a.imag
    var_q = p.sigma_q ** 2 * (2.0 * exp_a2.real + 2.0 * exp_n + 1.0) - q_mean ** 2
    var_p = p.sigma_p ** 2 * (-2.0 * exp_a2.real + 2.0 * exp_n + 1.0) - p_mean ** 2
    r_corr = p.hbar * exp_a2.imag - p_mean * q_mean
    excess_q = var_q / p.sigma_q ** 2 - 1.0
    excess_p = var_p / p.sigma_p ** 2 - 1.0
    delta_alpha_sq = exp_n - np.abs(exp_a) ** 2

    # Two independent routes to the same spread must agree.
    alt = 0.25 * (excess_q + excess_p)
    err = np.max(np.abs(delta_alpha_sq - alt))
    if err > _CONSISTENCY_TOL * max(1.0, float(np.max(exp_n))):
        raise FloatingPointError(
            f"phase-space spread consistency violated by {err:.3e}")

    return {
        "t": np.broadcast_to(np.asarray(t, dtype=float), np.shape(exp_n)).copy()
        if np.shape(exp_n) else np.asarray(float(t)),
        "q_mean": q_mean, "p_mean": p_mean,
        "var_q": var_q, "var_p": var_p, "R": r_corr,
        "excess_q": excess_q, "excess_p": excess_p,
        "delta_alpha_sq": delta_alpha_sq, "n_mean": exp_n,
    }


def bundle(state: np.ndarray, ops: OperatorSet, t: float = 0.0) -> ObservableBundle:
    """ObservableBundle of one normalized state."""
    if state.ndim != 1:
        raise DimensionError("bundle expects a single state vector")
    vals = bundle_arrays(state, ops, t)
    return ObservableBundle(**{f.name: float(vals[f.name])
                               for f in dc_fields(ObservableBundle)})


def localization_rhs(bundle_or_vals, params: ModelParams):
    """Predicted ensemble-mean rate d<(delta alpha)^2>/dt.

    rate = -2 gamma (nbar + 1/2) [R^2/hbar^2 + P^2/8 + Q^2/8 + dalpha^2]

    Accepts an ObservableBundle or a dict of arrays; returns a float or
    array accordingly.  The rate is always <= -2 gamma (nbar + 1/2)
    times the current spread, so coherent states (all diagnostics 0)
    are the only fixed points.
    """
    b = bundle_or_vals
    get = (lambda k: b[k]) if isinstance(b, dict) else (lambda k: getattr(b, k))
    r = get("R")
    ex_q = get("excess_q")
    ex_p = get("excess_p")
    spread = get("delta_alpha_sq")
    pre = 2.0 * params.gamma * (params.nbar + 0.5)
    return -pre * (r ** 2 / params.hbar ** 2
                   + ex_q ** 2 / 8.0 + ex_p ** 2 / 8.0 + spread)


def localization_rhs_spread_form(bundle_or_vals, params: ModelParams):
    """Same rate written in terms of the raw quadrature variances.

    rate = (gamma / 2 hbar^2) (nbar + 1/2) [hbar^2 - 4 R^2
           - 2 (sigma_q^2/sigma_p^2) var_p^2
           - 2 (sigma_p^2/sigma_q^2) var_q^2]

    Algebraically identical to localization_rhs; kept as an
    independent evaluation route for consistency checks.
    """
    b = bundle_or_vals
    get = (lambda k: b[k]) if isinstance(b, dict) else (lambda k: getattr(b, k))
    r = get("R")
    var_q = get("var_q")
    var_p = get("var_p")
    sq2 = params.sigma_q ** 2
    sp2 = params.sigma_p ** 2
    bracket = (params.hbar ** 2 - 4.0 * r ** 2
               - 2.0 * (sq2 / sp2) * var_p ** 2
               - 2.0 * (sp2 / sq2) * var_q ** 2)
    return params.gamma / (2.0 * params.hbar ** 2) * (params.nbar + 0.5) * bracket


def write_bundle_csv(path, bundles) -> None:
    """Write trajectory diagnostics with the fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for b in bundles:
            writer.writerow([repr(float(v)) for v in
                             (b.t, b.q_mean, b.p_mean, b.var_q, b.var_p,
                              b.R, b.excess_q, b.excess_p,
                              b.delta_alpha_sq, b.n_mean)])


# -- regression helpers -----------------------------------------------------


@dataclass(frozen=True)
class ExponentialFit:
    rate: float
    rate_se: float
    ci95: float
    log_amplitude: float
    n_points: int
    t_start: float
    t_end: float


def fit_exponential_decay(times: np.ndarray, means: np.ndarray,
                          stderrs: np.ndarray | None = None) -> ExponentialFit:
    """Weighted fit of means ~ A exp(-rate t) on the usable window.

    Samples enter the fit while the mean stays above FIT_FLOOR_REL of
    its initial value and above FIT_FLOOR_SIGMA standard errors.
    Raises FitError when fewer than FIT_MIN_POINTS samples qualify.
    """
    times = np.asarray(times, dtype=float)
    means = np.asarray(means, dtype=float)
    if stderrs is None:
        stderrs = np.zeros_like(means)
    stderrs = np.asarray(stderrs, dtype=float)
    mask = (means > FIT_FLOOR_REL * means[0]) & (means > FIT_FLOOR_SIGMA * stderrs)
    # Use the leading contiguous stretch only; late re-crossings of the
    # floor are noise.
    if not mask[0]:
        raise FitError("initial sample already below the noise floor")
    n_keep = int(np.argmin(mask)) if not mask.all() else mask.size
    if n_keep < FIT_MIN_POINTS:
        raise FitError(f"only {n_keep} usable samples, need {FIT_MIN_POINTS}")
    t = times[:n_keep]
    y = np.log(means[:n_keep])
    # var(log y) ~ (stderr / mean)^2; floor the weights for noiseless input
    var = (stderrs[:n_keep] / means[:n_keep]) ** 2
    var = np.maximum(var, max(var.max(), 1e-30) * 1e-6)
    w = 1.0 / var
    wsum = w.sum()
    tbar = (w * t).sum() / wsum
    ybar = (w * y).sum() / wsum
    s_tt = (w * (t - tbar) ** 2).sum()
    slope = (w * (t - tbar) * (y - ybar)).sum() / s_tt
    intercept = ybar - slope * tbar
    resid = y - (intercept + slope * t)
    dof = n_keep - 2
    chi2_red = (w * resid ** 2).sum() / dof
    slope_se = math.sqrt(max(chi2_red, 1e-300) / s_tt)
    tq = float(sp_stats.t.ppf(0.975, dof))
    return ExponentialFit(rate=-slope, rate_se=slope_se, ci95=tq * slope_se,
                          log_amplitude=intercept, n_points=n_keep,
                          t_start=float(t[0]), t_end=float(t[-1]))


def windowed_slopes(times: np.ndarray, series: np.ndarray, window: int):
    """Least-squares slopes of series over sliding windows of samples.

    series has shape (..., T); returns (centers, slopes) where slopes
    has shape (..., T - window + 1) and centers are the window-mean
    times.  The slope estimates the average derivative across the
    window, so compare it against window-averaged predictions.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    n_t = times.shape[0]
    if window < 2 or window > n_t:
        raise FitError(f"window {window} not usable with {n_t} samples")
    n_w = n_t - window + 1
    centers = np.empty(n_w)
    slopes = np.empty(series.shape[:-1] + (n_w,))
    for j in range(n_w):
        t = times[j:j + window]
        tc = t - t.mean()
        denom = (tc ** 2).sum()
        centers[j] = t.mean()
        seg = series[..., j:j + window]
        slopes[..., j] = (seg * tc).sum(axis=-1) / denom
    return centers, slopes
