"""Ensemble runner: M independent trajectories and their statistics.

Trajectories are integrated in fixed batches of TRAJ_BATCH, each batch
a vectorized (B, n_fock) array sharing the step kernel.  Batch
membership and the merge order are functions of the trajectory index
alone, so results are bit-identical for any worker count.  Per-batch
work distributes over a thread pool; the heavy lifting is matrix
products that release the interpreter lock.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .constants import COARSE_GRID_SPACING, NOISE_BLOCK_STEPS, TRAJ_BATCH
from .errors import ConfigError, DimensionError, GridWarning, ParameterError, \
    TrajectoryError
from .model import ModelParams, OperatorSet, cat_state, coherent_state, \
    fock_state, normalize
from .observables import bundle_arrays
from .qsd import IntegratorConfig, check_step_size, draw_noise_block, \
    get_kernel, trajectory_seed

#: Bundle fields averaged over the ensemble, in CSV emission order.
STAT_FIELDS = ("q_mean", "p_mean", "var_q", "var_p", "R",
               "excess_q", "excess_p", "delta_alpha_sq", "n_mean")


@dataclass(frozen=True)
class InitialStateSpec:
    """Initial pure state for every trajectory.

    kind is one of "coherent" (uses alpha), "fock" (uses n), "cat"
    (branches at +alpha and -alpha with a relative phase; branch
    separation in the amplitude plane is 2|alpha|), or "custom"
    (explicit amplitudes).
    """

    kind: str
    alpha: complex = 0.0 + 0.0j
    n: int = 0
    phase: float = 0.0
    amplitudes: tuple = ()

    def build(self, ops: OperatorSet) -> np.ndarray:
        if self.kind == "coherent":
            return coherent_state(ops, self.alpha)
        if self.kind == "fock":
            return fock_state(ops, self.n)
        if self.kind == "cat":
            return cat_state(ops, self.alpha, self.phase)
        if self.kind == "custom":
            if len(self.amplitudes) != ops.n_fock:
                raise DimensionError(
                    f"custom state has {len(self.amplitudes)} amplitudes, "
                    f"operators have {ops.n_fock}")
            return normalize(np.asarray(self.amplitudes, dtype=complex))
        raise ConfigError(f"unknown initial-state kind {self.kind!r}")


@dataclass(frozen=True)
class EnsembleConfig:
    m: int
    base_seed: int
    integrator: IntegratorConfig
    initial: InitialStateSpec
    rho_times: tuple = ()      # sampled times to snapshot the mean dyad at
    store_series: tuple = ()   # bundle fields kept per trajectory

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError("ensemble size must be >= 1")
        for name in self.store_series:
            if name not in STAT_FIELDS:
                raise ConfigError(f"unknown series field {name!r}")


@dataclass(frozen=True)
class EnsembleStats:
    """Per-time ensemble averages with standard errors.

    occupation[j] is the ensemble mean of the Fock-level probability
    vector at times[j] (each row sums to 1).  series holds optional
    (m, n_times) per-trajectory values for the configured fields;
    final_states collects every trajectory's end state.
    """

    times: np.ndarray
    means: dict
    stderrs: dict
    occupation: np.ndarray
    m: int
    base_seed: int
    final_states: np.ndarray
    rho_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    rhos: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 0)))
    series: dict = field(default_factory=dict)


def _batch_bounds(m: int):
    return [(k, min(k + TRAJ_BATCH, m)) for k in range(0, m, TRAJ_BATCH)]


def _run_batch(k0: int, k1: int, cfg: EnsembleConfig, ops: OperatorSet,
               psi0: np.ndarray, sample_count: int, rho_steps: dict):
    """Integrate trajectories [k0, k1); return per-batch accumulators."""
    icfg = cfg.integrator
    kern = get_kernel(ops)
    b = k1 - k0
    rngs = [np.random.default_rng(trajectory_seed(cfg.base_seed, k))
            for k in range(k0, k1)]
    psis = np.tile(psi0, (b, 1))

    n_fock = ops.n_fock
    n_tail = -(-n_fock // 10)  # ceil
    sums = {f: np.zeros(sample_count) for f in STAT_FIELDS}
    sumsq = {f: np.zeros(sample_count) for f in STAT_FIELDS}
    occ = np.zeros((sample_count, n_fock))
    rho_sum = np.zeros((len(rho_steps), n_fock, n_fock), dtype=complex)
    series = {f: np.empty((b, sample_count)) for f in cfg.store_series}

    def record(sample_idx: int, t: float):
        vals = bundle_arrays(psis, ops, t)
        for f in STAT_FIELDS:
            v = vals[f]
            sums[f][sample_idx] = v.sum()
            sumsq[f][sample_idx] = (v * v).sum()
        norm_sq = np.einsum("bi,bi->b", psis.conj(), psis).real
        occ[sample_idx] = (np.abs(psis) ** 2 / norm_sq[:, None]).sum(axis=0)
        for f in cfg.store_series:
            series[f][:, sample_idx] = vals[f]

    def snapshot(rho_idx: int):
        norm_sq = np.einsum("bi,bi->b", psis.conj(), psis).real
        rho_sum[rho_idx] = np.einsum("bi,b,bj->ij", psis,
                                     1.0 / norm_sq, psis.conj())

    record(0, 0.0)
    if 0 in rho_steps:
        snapshot(rho_steps[0])

    dt = icfg.dt
    n_steps = icfg.n_steps
    step = 0
    sample_idx = 0
    while step < n_steps:
        block = min(NOISE_BLOCK_STEPS, n_steps - step)
        noise = np.stack([draw_noise_block(rng, dt, block) for rng in rngs])
        for j in range(block):
            psis, _ = kern.step(psis, noise[:, j], dt, icfg.renormalize)
            step += 1
            t = step * dt
            norm_sq = np.einsum("bi,bi->b", psis.conj(), psis).real
            tails = (np.abs(psis[:, n_fock - n_tail:]) ** 2).sum(axis=1) \
                / norm_sq
            worst = int(np.argmax(tails))
            if tails[worst] > icfg.tail_tol:
                raise TrajectoryError(
                    f"tail mass {tails[worst]:.3e} exceeds tolerance "
                    f"{icfg.tail_tol:.1e} at t = {t:.6g} "
                    f"(trajectory {k0 + worst})",
                    tail_mass=float(tails[worst]), time=t,
                    trajectory=k0 + worst)
            if step % icfg.record_stride == 0:
                sample_idx += 1
                record(sample_idx, t)
                if step in rho_steps:
                    snapshot(rho_steps[step])
    return sums, sumsq, occ, rho_sum, series, psis


def run_ensemble(cfg: EnsembleConfig, ops: OperatorSet,
                 params: ModelParams | None = None,
                 workers: int = 1) -> EnsembleStats:
    """Statistics over exactly cfg.m independent trajectories.

    Deterministic given (cfg, ops); the worker count only changes wall
    time.  Any trajectory failure aborts the whole run.
    """
    del params  # carried by ops; accepted for signature compatibility
    icfg = cfg.integrator
    check_step_size(icfg.dt, ops.params)
    # normalize exactly as the single-trajectory entry point does, so an
    # m=1 ensemble is bit-identical to run_trajectory with the same seed
    psi0 = normalize(cfg.initial.build(ops))
    m = cfg.m
    n_samples = icfg.n_steps // icfg.record_stride + 1

    rho_steps = {}
    for t in cfg.rho_times:
        k = int(round(t / icfg.dt))
        if (k < 0 or k > icfg.n_steps or k % icfg.record_stride != 0
                or abs(k * icfg.dt - t) > 1e-9 * max(1.0, abs(t))):
            raise ConfigError(f"rho time {t} is not a sampled time")
        rho_steps[k] = len(rho_steps)

    bounds = _batch_bounds(m)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_batch, k0, k1, cfg, ops, psi0,
                                   n_samples, rho_steps)
                       for k0, k1 in bounds]
            results = [f.result() for f in futures]
    else:
        results = [_run_batch(k0, k1, cfg, ops, psi0, n_samples, rho_steps)
                   for k0, k1 in bounds]

    # Merge in batch order: the reduction order is a pure function of
    # the trajectory index.
    tot = {f: np.zeros(n_samples) for f in STAT_FIELDS}
    tot_sq = {f: np.zeros(n_samples) for f in STAT_FIELDS}
    occ = np.zeros((n_samples, ops.n_fock))
    rhos = np.zeros((len(rho_steps), ops.n_fock, ops.n_fock), dtype=complex)
    series = {f: np.empty((m, n_samples)) for f in cfg.store_series}
    finals = np.empty((m, ops.n_fock), dtype=complex)
    for (k0, k1), (s, sq, oc, rs, ser, psis) in zip(bounds, results):
        for f in STAT_FIELDS:
            tot[f] += s[f]
            tot_sq[f] += sq[f]
        occ += oc
        rhos += rs
        for f in cfg.store_series:
            series[f][k0:k1] = ser[f]
        finals[k0:k1] = psis

    means = {f: tot[f] / m for f in STAT_FIELDS}
    stderrs = {}
    for f in STAT_FIELDS:
        if m > 1:
            var = np.maximum(tot_sq[f] - tot[f] ** 2 / m, 0.0) / (m - 1)
            stderrs[f] = np.sqrt(var / m)
        else:
            stderrs[f] = np.zeros(n_samples)
    occ /= m
    rhos /= m

    times = np.arange(n_samples) * (icfg.dt * icfg.record_stride)
    rho_times = np.array(sorted(cfg.rho_times))
    if len(rho_times):
        # rhos is in insertion order of cfg.rho_times; emit sorted by time
        rhos = rhos[[rho_steps[int(round(t / icfg.dt))] for t in rho_times]]
    return EnsembleStats(times=times, means=means, stderrs=stderrs,
                         occupation=occ, m=m, base_seed=cfg.base_seed,
                         final_states=finals, rho_times=rho_times,
                         rhos=rhos, series=series)


def density_matrix(states) -> np.ndarray:
    """Equal-weight mean of the normalized dyads |psi><psi|."""
    states = np.asarray(states, dtype=complex)
    if states.ndim == 1:
        states = states[None, :]
    if states.size == 0:
        raise ParameterError("no states given")
    norm_sq = np.einsum("bi,bi->b", states.conj(), states).real
    rho = np.einsum("bi,b,bj->ij", states, 1.0 / norm_sq, states.conj())
    return rho / states.shape[0]


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of rho - sigma (both Hermitian)."""
    if rho.shape != sigma.shape:
        raise DimensionError("density matrices differ in shape")
    return 0.5 * float(np.abs(np.linalg.eigvalsh(rho - sigma)).sum())


# -- mixture diagnostic -----------------------------------------------------


@dataclass(frozen=True)
class CoherentGrid:
    """Square lattice of coherent-state centers in the amplitude plane."""

    re_min: float
    re_max: float
    im_min: float
    im_max: float
    spacing: float

    def centers(self) -> np.ndarray:
        if self.spacing <= 0:
            raise ParameterError("grid spacing must be positive")
        res = np.arange(self.re_min, self.re_max + 0.5 * self.spacing,
                        self.spacing)
        ims = np.arange(self.im_min, self.im_max + 0.5 * self.spacing,
                        self.spacing)
        return (res[:, None] + 1j * ims[None, :]).ravel()


@dataclass(frozen=True)
class MixtureDiagnostics:
    purity: float
    residual: float       # Frobenius norm of rho minus the fitted mixture
    weights: np.ndarray   # nonnegative, one per grid center
    centers: np.ndarray
    spacing: float


def purity_and_coherent_overlap(rho: np.ndarray, ops: OperatorSet,
                                grid: CoherentGrid) -> MixtureDiagnostics:
    """Best nonnegative mixture of coherent dyads approximating rho.

    A small residual says rho is (close to) a classical mixture of
    wavepackets; a large one witnesses surviving coherences.  The fit
    is least squares over the real and imaginary parts of the matrix
    entries with nonnegative weights.
    """
    purity = float(np.einsum("ij,ji->", rho, rho).real)
    centers = grid.centers()
    if grid.spacing > COARSE_GRID_SPACING:
        warnings.warn(
            f"grid spacing {grid.spacing} above {COARSE_GRID_SPACING}; "
            "residual may reflect the grid, not rho", GridWarning,
            stacklevel=2)
    cols = np.empty((2 * rho.size, centers.size))
    for i, alpha in enumerate(centers):
        psi = coherent_state(ops, alpha)
        dyad = np.outer(psi, psi.conj())
        cols[:rho.size, i] = dyad.real.ravel()
        cols[rho.size:, i] = dyad.imag.ravel()
    target = np.concatenate([rho.real.ravel(), rho.imag.ravel()])
    weights, _ = nnls(cols, target)
    fit = cols @ weights
    residual = float(np.linalg.norm(target - fit))
    return MixtureDiagnostics(purity=purity, residual=residual,
                              weights=weights, centers=centers,
                              spacing=grid.spacing)


# -- serialization ----------------------------------------------------------


def write_stats_csv(path, stats: EnsembleStats) -> None:
    """Long-format CSV: time, statistic, mean, stderr."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "statistic", "mean", "stderr"])
        for j, t in enumerate(stats.times):
            for f in STAT_FIELDS:
                writer.writerow([repr(float(t)), f,
                                 repr(float(stats.means[f][j])),
                                 repr(float(stats.stderrs[f][j]))])


def stats_to_json(stats: EnsembleStats) -> dict:
    return {
        "m": stats.m,
        "base_seed": stats.base_seed,
        "times": stats.times.tolist(),
        "means": {f: stats.means[f].tolist() for f in STAT_FIELDS},
        "stderrs": {f: stats.stderrs[f].tolist() for f in STAT_FIELDS},
        "occupation": stats.occupation.tolist(),
    }


def rho_to_json(rho: np.ndarray) -> dict:
    """{"dim": N, "data": [[re, im], ...]} with row-major entries."""
    flat = rho.ravel()
    return {"dim": int(rho.shape[0]),
            "data": [[float(z.real), float(z.imag)] for z in flat]}


def rho_from_json(doc: dict) -> np.ndarray:
    dim = int(doc["dim"])
    data = np.asarray(doc["data"], dtype=float)
    if data.shape != (dim * dim, 2):
        raise ConfigError("density-matrix payload does not match dim")
    return (data[:, 0] + 1j * data[:, 1]).reshape(dim, dim)


def write_rho_json(path, rho: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump(rho_to_json(rho), fh)
