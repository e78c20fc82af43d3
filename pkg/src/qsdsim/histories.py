"""Phase-space history machinery: approximate cell projectors and the
decoherence functional.

A cell is a rectangle in the coherent-amplitude plane; its projector
is the midpoint Riemann sum of the overcompleteness integral
integral_cell |alpha><alpha| d^2alpha / pi, which makes the sum over a
partition converge to the identity on the occupied subspace.  Because
alpha = (sigma_p q + i sigma_q p) / hbar, phase-space areas obey
dq dp = 2 hbar d^2alpha, so a cell's area in hbar units is
8 w_re w_im.

The decoherence functional for a history specification with times
t_1 < ... < t_n is

    D(a, a') = Tr(P_an K[... P_a1 K[rho0] P_a1' ...] P_an')

where K is the deterministic density-matrix propagator between
consecutive times.  Evaluation is breadth-first over prefix pairs: one
batched array holds every K-applied intermediate for the current
depth, so no pair is propagated twice.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constants import DIAG_WEIGHT_FLOOR, SUPPRESSION_THRESHOLD
from .errors import ConfigError, DimensionError, QuadratureError
from .model import OperatorSet, cat_state, coherent_state
from .oracle import LindbladPropagatorConfig, check_oracle_step, \
    propagate_matrices

MAX_DEPTH = 3
MAX_CELLS_PER_TIME = 16
#: Complex entries allowed in one intermediate level of the functional.
_PAIR_BUDGET = 25_000_000


@dataclass(frozen=True)
class PhaseCell:
    """Axis-aligned rectangle |Re a - Re c| <= w_re, |Im a - Im c| <= w_im.

    h is the quadrature spacing used when the projector is built.
    """

    center: complex
    w_re: float
    w_im: float
    h: float

    def __post_init__(self):
        if self.w_re <= 0 or self.w_im <= 0:
            raise ConfigError("cell half-widths must be positive")
        if self.h <= 0:
            raise ConfigError("quadrature spacing must be positive")

    @property
    def area_hbar(self) -> float:
        """Cell area in units of hbar (dq dp = 2 hbar d^2alpha)."""
        return 8.0 * self.w_re * self.w_im

    def contains(self, alpha: complex) -> bool:
        return (abs(alpha.real - self.center.real) <= self.w_re
                and abs(alpha.imag - self.center.imag) <= self.w_im)


def _midpoints(w: float, h: float) -> np.ndarray:
    n = max(1, int(round(2.0 * w / h)))
    eff = 2.0 * w / n
    return -w + (np.arange(n) + 0.5) * eff, eff


def cell_projector(cell: PhaseCell, ops: OperatorSet) -> np.ndarray:
    """Midpoint-rule approximation of the cell's phase-space projector.

    Hermitian positive by construction; eigenvalues may exceed 1 by a
    few percent because finite cells only approximately project.
    """
    if cell.h > min(cell.w_re, cell.w_im) / 4.0:
        raise QuadratureError(
            f"spacing {cell.h} too coarse for half-widths "
            f"({cell.w_re}, {cell.w_im}); need h <= min/4")
    xs, hx = _midpoints(cell.w_re, cell.h)
    ys, hy = _midpoints(cell.w_im, cell.h)
    weight = hx * hy / math.pi
    psis = np.empty((xs.size * ys.size, ops.n_fock), dtype=complex)
    k = 0
    for x in xs:
        for y in ys:
            psis[k] = coherent_state(ops, cell.center + x + 1j * y)
            k += 1
    proj = weight * (psis.T @ psis.conj())
    return 0.5 * (proj + proj.conj().T)


def tile_cells(re_min: float, re_max: float, im_min: float, im_max: float,
               n_re: int, n_im: int, h: float):
    """Partition a rectangle into an n_re x n_im grid of PhaseCells."""
    w_re = (re_max - re_min) / (2 * n_re)
    w_im = (im_max - im_min) / (2 * n_im)
    cells = []
    for i in range(n_re):
        for j in range(n_im):
            c = complex(re_min + (2 * i + 1) * w_re,
                        im_min + (2 * j + 1) * w_im)
            cells.append(PhaseCell(center=c, w_re=w_re, w_im=w_im, h=h))
    return cells


def _overlapping(c1: PhaseCell, c2: PhaseCell) -> bool:
    # touching boundaries do not count as overlap
    tol = 1e-12
    return (abs(c1.center.real - c2.center.real)
            < c1.w_re + c2.w_re - tol
            and abs(c1.center.imag - c2.center.imag)
            < c1.w_im + c2.w_im - tol)


@dataclass(frozen=True)
class HistorySpec:
    times: tuple
    cells: tuple          # one tuple of PhaseCells per time
    rho0: np.ndarray
    include_complement: bool = True

    def __post_init__(self):
        if len(self.times) == 0:
            raise ConfigError("at least one history time required")
        if len(self.times) > MAX_DEPTH:
            raise ConfigError(f"history depth limited to {MAX_DEPTH}")
        if len(self.cells) != len(self.times):
            raise ConfigError("one cell partition per time required")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise ConfigError("history times must be strictly increasing")
        if self.times[0] < 0:
            raise ConfigError("history times must be >= 0")
        for cells_t in self.cells:
            if not 1 <= len(cells_t) <= MAX_CELLS_PER_TIME:
                raise ConfigError(
                    f"1..{MAX_CELLS_PER_TIME} cells per time required")
            for i, c1 in enumerate(cells_t):
                for c2 in cells_t[i + 1:]:
                    if _overlapping(c1, c2):
                        raise ConfigError(
                            f"cells at {c1.center} and {c2.center} overlap")
        n = self.rho0.shape
        if len(n) != 2 or n[0] != n[1]:
            raise DimensionError("rho0 must be square")


@dataclass(frozen=True)
class DecoherenceMatrix:
    """D over history strings; labels use the per-time cell index with
    -1 standing for the complement ("none of the cells")."""

    labels: tuple
    matrix: np.ndarray

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.matrix).real

    def suppression(self):
        """(ratios, valid): |D_ij| / sqrt(D_ii D_jj) where both
        diagonal weights clear the floor; nan elsewhere and on the
        diagonal."""
        d = self.diagonal()
        ok = d > DIAG_WEIGHT_FLOOR
        valid = ok[:, None] & ok[None, :]
        np.fill_diagonal(valid, False)
        ratios = np.full(self.matrix.shape, np.nan)
        denom = np.sqrt(np.outer(np.abs(d), np.abs(d)))
        ratios[valid] = np.abs(self.matrix[valid]) / denom[valid]
        return ratios, valid


def _propagate_chunked(mats: np.ndarray, ops: OperatorSet, duration: float,
                       dt: float, workers: int) -> np.ndarray:
    flat = mats.reshape(-1, *mats.shape[-2:])
    if workers <= 1 or flat.shape[0] < 2:
        out = propagate_matrices(flat, ops, duration, dt)
        return out.reshape(mats.shape)
    chunk = -(-flat.shape[0] // workers)
    pieces = [flat[i:i + chunk] for i in range(0, flat.shape[0], chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = list(pool.map(
            lambda p: propagate_matrices(p, ops, duration, dt), pieces))
    return np.concatenate(done).reshape(mats.shape)


def decoherence_functional(spec: HistorySpec, ops: OperatorSet,
                           pcfg: LindbladPropagatorConfig,
                           workers: int = 1) -> DecoherenceMatrix:
    """Evaluate D over every history string of the specification.

    With include_complement on, each time's partition is completed to
    the identity, so the matrix sums to Tr rho0 up to propagation
    error.
    """
    check_oracle_step(pcfg, ops.params)
    n_fock = ops.n_fock
    n_times = len(spec.times)

    projs = []
    time_labels = []
    for cells_t in spec.cells:
        ps = [cell_projector(c, ops) for c in cells_t]
        lab = list(range(len(cells_t)))
        if spec.include_complement:
            comp = np.eye(n_fock, dtype=complex)
            for p in ps:
                comp -= p
            ps.append(comp)
            lab.append(-1)
        projs.append(np.stack(ps))
        time_labels.append(lab)

    width = 1
    for k in range(n_times - 1):
        width *= projs[k].shape[0]
        if (width * width) * n_fock * n_fock > _PAIR_BUDGET:
            raise ConfigError(
                "history too wide for the pairwise cache; reduce depth "
                "or cell counts")

    cur = np.asarray(spec.rho0, dtype=complex)[None, None]
    prefixes = [()]
    t_prev = 0.0
    for k in range(n_times):
        gap = spec.times[k] - t_prev
        if gap > 0:
            cur = _propagate_chunked(cur, ops, gap, pcfg.dt_oracle, workers)
        p = projs[k]
        c = p.shape[0]
        npre = cur.shape[0]
        if k == n_times - 1:
            # Tr(P_i X P_j) = Tr(P_j P_i X): close out with traces only.
            t_ij = np.einsum("jab,ibc->ijac", p, p)
            d = np.einsum("ijab,uvba->uivj", t_ij, cur)
            d = d.reshape(npre * c, npre * c)
        else:
            tmp = np.matmul(p[None, None], cur[:, :, None])
            cur = np.matmul(tmp[:, :, :, None], p[None, None, None])
            cur = cur.transpose(0, 2, 1, 3, 4, 5).reshape(
                npre * c, npre * c, n_fock, n_fock)
        prefixes = [pre + (lab,) for pre in prefixes
                    for lab in time_labels[k]]
        t_prev = spec.times[k]
    return DecoherenceMatrix(labels=tuple(prefixes), matrix=d)


@dataclass(frozen=True)
class PeakingReport:
    """Most probable history against the noise-free damped orbit."""

    best_label: tuple
    best_prob: float
    classical_path: tuple   # mean amplitude at each history time
    center_path: tuple      # chosen cell centers; None for complement
    distances: tuple        # amplitude-plane distance, nan for complement

    def as_dict(self) -> dict:
        def enc(z):
            return None if z is None else [z.real, z.imag]
        return {
            "best_label": _label_str(self.best_label),
            "best_prob": self.best_prob,
            "classical_path": [enc(z) for z in self.classical_path],
            "center_path": [enc(z) for z in self.center_path],
            "distances": [d if math.isfinite(d) else None
                          for d in self.distances],
        }


def classical_peaking_report(D: DecoherenceMatrix, spec: HistorySpec,
                             ops: OperatorSet) -> PeakingReport:
    p = ops.params
    alpha0 = complex(np.einsum("ij,ji->", spec.rho0, ops.a)
                     / np.trace(spec.rho0))
    diag = D.diagonal()
    best = int(np.argmax(diag))
    label = D.labels[best]
    classical = []
    centers = []
    dists = []
    for k, t in enumerate(spec.times):
        target = alpha0 * np.exp(-(1j * p.omega + 0.5 * p.gamma) * t)
        classical.append(complex(target))
        idx = label[k]
        if idx < 0:
            centers.append(None)
            dists.append(float("nan"))
        else:
            cc = spec.cells[k][idx].center
            centers.append(cc)
            dists.append(abs(cc - target))
    return PeakingReport(best_label=label, best_prob=float(diag[best]),
                         classical_path=tuple(classical),
                         center_path=tuple(centers),
                         distances=tuple(dists))


@dataclass(frozen=True)
class IntervalScan:
    """Aggregate suppression against the interval after branch projection."""

    intervals: np.ndarray
    ratios: np.ndarray
    crossing: float        # first interval below threshold (interpolated)
    threshold: float


def cat_interval_scan(alpha0: complex, ops: OperatorSet,
                      pcfg: LindbladPropagatorConfig, t_max: float,
                      branch_cell=(1.0, 1.0), h: float = 0.2,
                      threshold: float = SUPPRESSION_THRESHOLD,
                      sample_stride: int = 1) -> IntervalScan:
    """How long until branch-distinguishing histories decohere.

    The initial state is the even superposition of |+alpha0> and
    |-alpha0>.  The first projection (at t=0) separates the branches
    with cells at the branch centers.  The reported quantity is the
    aggregate suppression of the branch off-diagonal block over a
    maximally fine second-time partition: for a complete rank-one
    outcome set, sum_{bb'} |D((+,b),(-,b'))|^2 = ||K[P+ rho P-]||_F^2
    and sum_b D((+,b),(+,b)) = Tr K[P+ rho P+], so

        ratio(Dt) = ||K[X+-]||_F / sqrt(Tr K[X++] * Tr K[X--])

    which is basis independent.  A single probe cell would instead
    measure the local fringe visibility, which is contaminated by
    amplitude regrowth at the cell boundary and does not isolate the
    environmental decay; the block norm does.  The denominator is the
    conserved branch weight, so the ratio is exactly 1 at Dt = 0 for
    a pure initial state (rank-one cross block) and exactly constant
    under undamped evolution; its first crossing of the threshold
    estimates the decoherence interval.
    """
    check_oracle_step(pcfg, ops.params)
    dt = pcfg.dt_oracle
    n_steps = int(round(t_max / dt))
    if n_steps < 1:
        raise ConfigError("t_max shorter than one oracle step")

    psi = cat_state(ops, alpha0)
    rho = np.outer(psi, psi.conj())
    bw_re, bw_im = branch_cell
    p_plus = cell_projector(
        PhaseCell(center=alpha0, w_re=bw_re, w_im=bw_im, h=h), ops)
    p_minus = cell_projector(
        PhaseCell(center=-alpha0, w_re=bw_re, w_im=bw_im, h=h), ops)

    # cross term and the two diagonal blocks evolve side by side
    mats = np.stack([p_plus @ rho @ p_minus,
                     p_plus @ rho @ p_plus,
                     p_minus @ rho @ p_minus])

    intervals = [0.0]
    ratios = [_block_ratio(mats)]
    step = 0
    while step < n_steps:
        block = min(sample_stride, n_steps - step)
        mats = propagate_matrices(mats, ops, block * dt, dt)
        step += block
        intervals.append(step * dt)
        ratios.append(_block_ratio(mats))
    intervals = np.asarray(intervals)
    ratios = np.asarray(ratios)

    crossing = float("nan")
    for s in range(1, ratios.size):
        if not np.isnan(ratios[s]) and ratios[s] < threshold \
                and not np.isnan(ratios[s - 1]) and ratios[s - 1] >= threshold:
            frac = (ratios[s - 1] - threshold) / (ratios[s - 1] - ratios[s])
            crossing = float(intervals[s - 1]
                             + frac * (intervals[s] - intervals[s - 1]))
            break
    return IntervalScan(intervals=intervals, ratios=ratios,
                        crossing=crossing, threshold=threshold)


def _block_ratio(mats: np.ndarray) -> float:
    cross = np.linalg.norm(mats[0])
    w_plus = np.trace(mats[1]).real
    w_minus = np.trace(mats[2]).real
    if w_plus < DIAG_WEIGHT_FLOOR or w_minus < DIAG_WEIGHT_FLOOR:
        return float("nan")
    return float(cross / math.sqrt(w_plus * w_minus))


# -- serialization ----------------------------------------------------------


def _label_str(label) -> str:
    return ".".join("r" if i < 0 else str(i) for i in label)


def write_decoherence_json(path, D: DecoherenceMatrix,
                           spec: HistorySpec | None = None) -> None:
    doc = {
        "labels": [_label_str(lab) for lab in D.labels],
        "matrix": [[[float(z.real), float(z.imag)] for z in row]
                   for row in D.matrix],
    }
    if spec is not None:
        doc["times"] = list(spec.times)
        doc["cell_areas_hbar"] = [[c.area_hbar for c in cells_t]
                                  for cells_t in spec.cells]
    with open(path, "w") as fh:
        json.dump(doc, fh)


def write_suppression_csv(path, D: DecoherenceMatrix) -> None:
    import csv

    ratios, valid = D.suppression()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label_a", "label_b", "ratio"])
        n = len(D.labels)
        for i in range(n):
            for j in range(i + 1, n):
                if valid[i, j]:
                    writer.writerow([_label_str(D.labels[i]),
                                     _label_str(D.labels[j]),
                                     repr(float(ratios[i, j]))])
