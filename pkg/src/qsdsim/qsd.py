"""Single-trajectory integrator for the nonlinear stochastic state equation.

One Euler-Maruyama step applies

    |dpsi> = -(i/hbar) H |psi> dt
             + sum_n (<L_n^dag> L_n - L_n^dag L_n / 2
                      - <L_n^dag><L_n> / 2) |psi> dt
             + sum_n (L_n - <L_n>) |psi> dxi_n

with all expectations taken in the pre-step state (Ito convention) and
an optional renormalization afterwards.  The two dxi_n are independent
complex Wiener increments whose real and imaginary parts each carry
variance dt/2.
"""

from __future__ import annotations

import math
import warnings
import weakref
from dataclasses import dataclass

import numpy as np

from .constants import (NOISE_BLOCK_STEPS, STEP_GUARD_DISSIPATIVE,
                        STEP_GUARD_OSCILLATORY, TAIL_TOL_DEFAULT)
from .errors import ParameterError, StepSizeWarning, TrajectoryError
from .model import ModelParams, OperatorSet, normalize, tail_mass
from . import observables

#: Weyl-sequence increment of the splitmix64 stream.
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output for the 64-bit input x."""
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trajectory_seed(base_seed: int, index: int) -> int:
    """Decorrelated per-trajectory seed.

    Trajectory k draws the k-th output of the splitmix64 sequence
    seeded at base_seed, so seeds depend only on (base_seed, k), never
    on batching or worker count.
    """
    if index < 0:
        raise ParameterError("trajectory index must be >= 0")
    return splitmix64((base_seed + index * _SPLITMIX_GAMMA) & _MASK64)


@dataclass(frozen=True)
class NoiseIncrement:
    """Complex Wiener increments for the two damping channels."""

    dxi1: complex
    dxi2: complex


def draw_noise(rng: np.random.Generator, dt: float) -> NoiseIncrement:
    """Draw one NoiseIncrement, advancing rng by four normals.

    The stream layout is (Re dxi1, Im dxi1, Re dxi2, Im dxi2); block
    draws via draw_noise_block consume the identical sequence.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    z = rng.standard_normal(4) * math.sqrt(dt / 2.0)
    return NoiseIncrement(dxi1=complex(z[0], z[1]), dxi2=complex(z[2], z[3]))


def draw_noise_block(rng: np.random.Generator, dt: float,
                     n_steps: int) -> np.ndarray:
    """(n_steps, 2) complex increments; row k equals the k-th draw_noise."""
    z = rng.standard_normal((n_steps, 4)) * math.sqrt(dt / 2.0)
    out = np.empty((n_steps, 2), dtype=complex)
    out[:, 0] = z[:, 0] + 1j * z[:, 1]
    out[:, 1] = z[:, 2] + 1j * z[:, 3]
    return out


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_end: float
    seed: int = 0
    record_stride: int = 1  # steps between recorded samples
    renormalize: bool = True
    tail_tol: float = TAIL_TOL_DEFAULT

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if self.t_end < self.dt:
            raise ParameterError("t_end must cover at least one step")
        if self.record_stride < 1:
            raise ParameterError("record_stride must be >= 1")
        if self.tail_tol <= 0:
            raise ParameterError("tail_tol must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def check_step_size(dt: float, params: ModelParams) -> None:
    """Warn when dt underresolves the damping or oscillation scale."""
    diss = dt * params.gamma * (params.nbar + 1.0)
    if diss > STEP_GUARD_DISSIPATIVE:
        warnings.warn(
            f"dt*gamma*(nbar+1) = {diss:.3g} exceeds "
            f"{STEP_GUARD_DISSIPATIVE}; damping underresolved",
            StepSizeWarning, stacklevel=2)
    osc = dt * params.omega
    if osc > STEP_GUARD_OSCILLATORY:
        warnings.warn(
            f"dt*omega = {osc:.3g} exceeds {STEP_GUARD_OSCILLATORY}; "
            "oscillation underresolved", StepSizeWarning, stacklevel=2)


class StepKernel:
    """Precomputed matrices for the batched update rule.

    Immutable after construction; safe to share across threads.  States
    are stored as rows, so every product uses the transposed operator.
    """

    def __init__(self, ops: OperatorSet):
        p = ops.params
        drift = (-1j / p.hbar) * ops.h - 0.5 * (
            ops.l1.conj().T @ ops.l1 + ops.l2.conj().T @ ops.l2)
        self.g_t = np.ascontiguousarray(drift.T)
        self.l1_t = np.ascontiguousarray(ops.l1.T)
        self.l2_t = np.ascontiguousarray(ops.l2.T)
        self.n_fock = ops.n_fock

    def step(self, psis: np.ndarray, noise: np.ndarray, dt: float,
             renormalize: bool = True):
        """Advance a (B, n_fock) batch one step.

        noise has shape (B, 2).  Returns (new_psis, norm_dev) where
        norm_dev is | ||psi'|| - 1 | before renormalization; with
        renormalization on and normalized input this is the per-step
        norm drift, otherwise it measures the accumulated drift.
        """
        l1psi = psis @ self.l1_t
        l2psi = psis @ self.l2_t
        gpsi = psis @ self.g_t
        norm_sq = np.einsum("bi,bi->b", psis.conj(), psis).real
        l1 = np.einsum("bi,bi->b", psis.conj(), l1psi) / norm_sq
        l2 = np.einsum("bi,bi->b", psis.conj(), l2psi) / norm_sq
        xi1 = noise[:, 0]
        xi2 = noise[:, 1]
        c1 = (l1.conj() * dt + xi1)[:, None]
        c2 = (l2.conj() * dt + xi2)[:, None]
        c0 = (-0.5 * (np.abs(l1) ** 2 + np.abs(l2) ** 2) * dt
              - (l1 * xi1 + l2 * xi2))[:, None]
        out = psis + dt * gpsi + c1 * l1psi + c2 * l2psi + c0 * psis
        norms = np.sqrt(np.einsum("bi,bi->b", out.conj(), out).real)
        dev = np.abs(norms - 1.0)
        if renormalize:
            out /= norms[:, None]
        return out, dev


_KERNELS: "weakref.WeakKeyDictionary[OperatorSet, StepKernel]" = \
    weakref.WeakKeyDictionary()


def get_kernel(ops: OperatorSet) -> StepKernel:
    kern = _KERNELS.get(ops)
    if kern is None:
        kern = _KERNELS[ops] = StepKernel(ops)
    return kern


def qsd_step(state: np.ndarray, ops: OperatorSet, noise: NoiseIncrement,
             dt: float, renormalize: bool = True,
             tail_tol: float = TAIL_TOL_DEFAULT,
             time: float | None = None) -> np.ndarray:
    """One Euler-Maruyama step of a single state vector."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    kern = get_kernel(ops)
    batch = np.asarray(state, dtype=complex)[None, :]
    noise_arr = np.array([[noise.dxi1, noise.dxi2]], dtype=complex)
    out, _ = kern.step(batch, noise_arr, dt, renormalize)
    new_state = out[0]
    tm = tail_mass(new_state)
    if tm > tail_tol:
        raise TrajectoryError(
            f"tail mass {tm:.3e} exceeds tolerance {tail_tol:.1e}",
            tail_mass=tm, time=time)
    return new_state


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled output of one trajectory.

    norm_drift[k] is the pre-renormalization | ||psi|| - 1 | of step
    k+1, one entry per integration step.
    """

    times: np.ndarray
    bundles: list
    final_state: np.ndarray
    seed: int
    norm_drift: np.ndarray


def run_trajectory(initial: np.ndarray, ops: OperatorSet,
                   cfg: IntegratorConfig, observer=None) -> TrajectoryRecord:
    """Integrate one trajectory from t=0 to t_end.

    The observer maps (state, t) to a recorded sample and defaults to
    the observable bundle.  Deterministic given (initial, cfg): the
    noise stream is fully determined by cfg.seed.
    """
    if observer is None:
        observer = lambda st, t: observables.bundle(st, ops, t)
    check_step_size(cfg.dt, ops.params)
    kern = get_kernel(ops)
    rng = np.random.default_rng(cfg.seed)
    psis = normalize(np.asarray(initial, dtype=complex))[None, :].copy()

    n_steps = cfg.n_steps
    times = [0.0]
    bundles = [observer(psis[0], 0.0)]
    drift = np.empty(n_steps)
    step = 0
    while step < n_steps:
        block = min(NOISE_BLOCK_STEPS, n_steps - step)
        noise = draw_noise_block(rng, cfg.dt, block)
        for k in range(block):
            psis, dev = kern.step(psis, noise[k:k + 1], cfg.dt,
                                  cfg.renormalize)
            drift[step] = dev[0]
            step += 1
            t = step * cfg.dt
            tm = tail_mass(psis[0])
            if tm > cfg.tail_tol:
                raise TrajectoryError(
                    f"tail mass {tm:.3e} exceeds tolerance "
                    f"{cfg.tail_tol:.1e} at t = {t:.6g}",
                    tail_mass=tm, time=t)
            if step % cfg.record_stride == 0:
                times.append(t)
                bundles.append(observer(psis[0], t))

    return TrajectoryRecord(times=np.asarray(times), bundles=bundles,
                            final_state=psis[0].copy(), seed=cfg.seed,
                            norm_drift=drift)
