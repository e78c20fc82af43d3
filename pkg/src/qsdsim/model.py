"""Physical model: damped harmonic oscillator coupled to a thermal bath.

Defines the parameter set (mass, frequency, damping rate, temperature),
the derived scales (quadrature widths, thermal occupation, localization
time) and the truncated Fock-space operators used by both the
stochastic integrator and the deterministic oracle:

    H  = hbar * omega * (n + 1/2)
    L1 = sqrt((nbar + 1) * gamma) * a        (emission into the bath)
    L2 = sqrt(nbar * gamma) * a_dag          (absorption from the bath)

with q = sigma_q (a + a_dag), p = -i sigma_p (a - a_dag) and
sigma_q * sigma_p = hbar / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import TAIL_FRACTION, TAIL_TOL_DEFAULT
from .errors import DimensionError, ParameterError, TruncationError

# Temperatures with hbar*omega/(k_B*T) above this behave as T = 0.
_EXP_ARG_MAX = 700.0


@dataclass(frozen=True)
class ModelParams:
    """Oscillator and bath parameters.

    All values are in the unit system fixed by the chosen hbar and k_B
    (defaults give the dimensionless convention hbar = k_B = 1).
    """

    m: float = 1.0
    omega: float = 1.0
    gamma: float = 0.1
    temperature: float = 0.0
    hbar: float = 1.0
    k_B: float = 1.0

    def __post_init__(self):
        if self.m <= 0:
            raise ParameterError(f"mass must be positive, got {self.m}")
        if self.omega <= 0:
            raise ParameterError(f"frequency must be positive, got {self.omega}")
        if self.gamma < 0:
            raise ParameterError(f"damping rate must be >= 0, got {self.gamma}")
        if self.temperature < 0:
            raise ParameterError(f"temperature must be >= 0, got {self.temperature}")
        if self.hbar <= 0 or self.k_B <= 0:
            raise ParameterError("hbar and k_B must be positive")

    @property
    def sigma_q(self) -> float:
        """Position width of the coherent-state wave packet."""
        return math.sqrt(self.hbar / (2.0 * self.m * self.omega))

    @property
    def sigma_p(self) -> float:
        """Momentum width; sigma_q * sigma_p = hbar / 2."""
        return math.sqrt(self.hbar * self.m * self.omega / 2.0)

    @property
    def nbar(self) -> float:
        """Mean bath occupation 1 / (exp(hbar omega / k_B T) - 1).

        T = 0 is returned as exactly 0 rather than through the
        exponential, so the absorption operator vanishes identically.
        """
        if self.temperature == 0.0:
            return 0.0
        x = self.hbar * self.omega / (self.k_B * self.temperature)
        if x > _EXP_ARG_MAX:
            return 0.0
        return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class DerivedScales:
    sigma_q: float
    sigma_p: float
    nbar: float
    t_loc: float


def derive(params: ModelParams) -> DerivedScales:
    """Derived scales including the localization time.

    t_loc = (1/gamma) * tanh(hbar omega / (2 k_B T)); the T = 0 limit
    is 1/gamma.  Requires gamma > 0.
    """
    if params.gamma <= 0:
        raise ParameterError("localization time requires gamma > 0")
    if params.temperature == 0.0:
        tanh_factor = 1.0
    else:
        tanh_factor = math.tanh(
            params.hbar * params.omega / (2.0 * params.k_B * params.temperature)
        )
    return DerivedScales(
        sigma_q=params.sigma_q,
        sigma_p=params.sigma_p,
        nbar=params.nbar,
        t_loc=tanh_factor / params.gamma,
    )


def temperature_for_nbar(nbar: float, params: ModelParams | None = None) -> float:
    """Bath temperature that produces the requested mean occupation."""
    if nbar < 0:
        raise ParameterError(f"occupation must be >= 0, got {nbar}")
    if nbar == 0:
        return 0.0
    p = params if params is not None else ModelParams()
    return p.hbar * p.omega / (p.k_B * math.log1p(1.0 / nbar))


# eq=False: identity semantics, so the set stays hashable (ndarray fields)
# and derived per-operator caches can key on it.
@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Dense operators on a Fock space truncated to n_fock levels.

    Matrix convention: a[n-1, n] = sqrt(n), i.e. a |n> = sqrt(n) |n-1>.
    """

    params: ModelParams
    n_fock: int
    a: np.ndarray = field(repr=False)
    a_dag: np.ndarray = field(repr=False)
    n_op: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    l1: np.ndarray = field(repr=False)
    l2: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)

    @property
    def lindblad_ops(self) -> tuple[np.ndarray, np.ndarray]:
        return self.l1, self.l2


def build_operators(params: ModelParams, n_fock: int) -> OperatorSet:
    """Construct the truncated operator set for the damped oscillator.

    Parameters
    ----------
    params : ModelParams
    n_fock : int
        Number of Fock levels kept; must be >= 2.
    """
    if n_fock < 2:
        raise DimensionError(f"need at least 2 Fock levels, got {n_fock}")
    a = np.diagflat(np.sqrt(np.arange(1, n_fock, dtype=float)), 1).astype(complex)
    a_dag = a.conj().T.copy()
    n_op = np.diag(np.arange(n_fock, dtype=float)).astype(complex)
    h = params.hbar * params.omega * (n_op + 0.5 * np.eye(n_fock))
    nbar = params.nbar
    l1 = math.sqrt((nbar + 1.0) * params.gamma) * a
    l2 = math.sqrt(nbar * params.gamma) * a_dag
    q = params.sigma_q * (a + a_dag)
    p = -1j * params.sigma_p * (a - a_dag)
    return OperatorSet(
        params=params, n_fock=n_fock, a=a, a_dag=a_dag, n_op=n_op,
        h=h, l1=l1, l2=l2, q=q, p=p,
    )


# -- state vectors ----------------------------------------------------------
#
# States are plain complex arrays of amplitudes over Fock levels,
# normalized to unit length.  The helpers below enforce the two state
# invariants: unit norm and a healthy truncation tail.


def normalize(state: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(state)
    if nrm == 0:
        raise DimensionError("cannot normalize a zero state")
    return state / nrm


def tail_mass(state: np.ndarray) -> float:
    """Probability mass in the top ceil(n_fock / 10) Fock levels."""
    n = state.shape[-1]
    k = math.ceil(TAIL_FRACTION * n)
    return float(np.sum(np.abs(state[..., n - k:]) ** 2, axis=-1).max())

def check_tail(state: np.ndarray, tail_tol: float = TAIL_TOL_DEFAULT,
               time: float | None = None) -> float:
    """Raise TruncationError when the tail holds more than tail_tol."""
    mass = tail_mass(state)
    if mass > tail_tol:
        raise TruncationError(
            f"truncation tail mass {mass:.3e} exceeds {tail_tol:.1e}"
            + (f" at t={time:.6g}" if time is not None else ""),
            tail_mass=mass, time=time,
        )
    return mass


def fock_state(ops: OperatorSet, n: int) -> np.ndarray:
    if not 0 <= n < ops.n_fock:
        raise DimensionError(f"Fock level {n} outside 0..{ops.n_fock - 1}")
    state = np.zeros(ops.n_fock, dtype=complex)
    state[n] = 1.0
    return state


def _coherent_amplitudes(n_fock: int, alpha: complex) -> np.ndarray:
    # c_n = alpha^n / sqrt(n!), accumulated recursively; numerically
    # renormalized afterwards, which also absorbs the truncated tail.
    c = np.empty(n_fock, dtype=complex)
    c[0] = 1.0
    for n in range(1, n_fock):
        c[n] = c[n - 1] * alpha / math.sqrt(n)
    return c


def coherent_state(ops: OperatorSet, alpha: complex) -> np.ndarray:
    """Normalized coherent state |alpha> in the truncated basis.

    Requires headroom |alpha|^2 + 5 |alpha| + 5 <= n_fock so the
    Poisson occupation fits well below the truncation edge.
    """
    mag = abs(alpha)
    state = normalize(_coherent_amplitudes(ops.n_fock, alpha))
    if mag * mag + 5.0 * mag + 5.0 > ops.n_fock:
        raise TruncationError(
            f"alpha={alpha} too large for n_fock={ops.n_fock}: "
            f"tail mass {tail_mass(state):.3e}",
            tail_mass=tail_mass(state),
        )
    return state


def cat_state(ops: OperatorSet, alpha: complex, phase: float = 0.0) -> np.ndarray:
    """Normalized superposition |alpha> + e^{i phase} |-alpha>."""
    mag = abs(alpha)
    if mag * mag + 5.0 * mag + 5.0 > ops.n_fock:
        raise TruncationError(f"alpha={alpha} too large for n_fock={ops.n_fock}")
    plus = _coherent_amplitudes(ops.n_fock, alpha)
    minus = _coherent_amplitudes(ops.n_fock, -alpha)
    return normalize(plus + np.exp(1j * phase) * minus)


def expectation(state: np.ndarray, op: np.ndarray) -> complex:
    """<state| op |state> / <state|state> for amplitude arrays."""
    if state.shape[-1] != op.shape[0]:
        raise DimensionError(
            f"state dim {state.shape[-1]} != operator dim {op.shape[0]}")
    num = np.einsum("...i,ij,...j->...", state.conj(), op, state)
    den = np.einsum("...i,...i->...", state.conj(), state)
    return num / den
