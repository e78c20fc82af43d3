"""Numerical thresholds and frozen tuning constants.

Every value here is an artifact choice, not physics: tolerances for
shape diagnostics, statistical test bands, and integrator bookkeeping
constants.  They are collected in one place so experiments and tests
pin the same numbers.
"""

# Shape diagnostics |P|, |Q|, |R|/hbar, (delta alpha)^2 below this value
# count as "coherent to working tolerance".
SHAPE_TOL = 0.05

# Statistical acceptance bands: a Monte-Carlo estimate agrees with a
# prediction when it lies within SIGMA_BAND standard errors.
SIGMA_BAND = 4.0

# Off-diagonal decoherence-functional elements below this fraction of
# the geometric mean of their diagonals count as suppressed; an
# undamped control run must stay above CONTROL_SUPPRESSION_MIN.
SUPPRESSION_THRESHOLD = 0.1
CONTROL_SUPPRESSION_MIN = 0.3

# Suppression ratios are only evaluated for history pairs whose
# diagonal weights both exceed this floor (below it the ratio is
# quadrature noise over quadrature noise).
DIAG_WEIGHT_FLOOR = 1e-9

# Step-size guards: warn when dt * gamma * (nbar + 1) exceeds the
# dissipative guard or dt * omega exceeds the oscillatory guard.
STEP_GUARD_DISSIPATIVE = 0.01
STEP_GUARD_OSCILLATORY = 0.05

# Deterministic oracle guard: dt * (gamma * (nbar + 1) + omega).
ORACLE_STEP_GUARD = 0.05

# Truncation health: the top ceil(TAIL_FRACTION * n_fock) Fock levels
# must hold less than tail_tol of the state's mass.
TAIL_FRACTION = 0.1
TAIL_TOL_DEFAULT = 1e-6

# Fixed trajectory batch size for the vectorised integrator.  Batches
# are assigned to workers whole, and partial sums are merged in batch
# order, so results do not depend on the worker count.  Changing this
# constant changes floating-point rounding, so it is frozen.
TRAJ_BATCH = 64

# Number of steps of noise drawn from a trajectory's generator in one
# call.  Part of the frozen noise-stream layout: per step the stream
# yields four normals (Re dxi1, Im dxi1, Re dxi2, Im dxi2).
NOISE_BLOCK_STEPS = 1024

# Localization-rate estimation: slopes of the ensemble-mean spread are
# regressed over windows of this many consecutive samples.
SLOPE_WINDOW = 10

# Exponential fits use samples while the mean stays above
# FIT_FLOOR_REL of its initial value and above FIT_FLOOR_SIGMA
# standard errors, and need at least FIT_MIN_POINTS of them.
FIT_FLOOR_REL = 0.1
FIT_FLOOR_SIGMA = 5.0
FIT_MIN_POINTS = 6

# Thermal-occupation chi-square test: compared bins, minimum expected
# count per bin, and the p-value floor.
CHI2_BINS = 7  # occupation numbers 0..6, plus an implicit rest bin
CHI2_MIN_EXPECTED = 5.0
CHI2_MIN_P = 0.01

# Late-time statistics use the second half of a run, subsampled at
# spacing DECORRELATION_TIME_FACTOR / gamma so the retained snapshots
# are approximately independent.
LATE_FRACTION = 0.5
DECORRELATION_TIME_FACTOR = 2.0

# Phase-space quadrature: cell projectors need at least this many grid
# points across each half-width.
CELL_MIN_POINTS_PER_HALF_WIDTH = 4

# Coherent-mixture fits warn when the grid spacing exceeds this value
# (in units of the coherent-state width in the alpha plane).
COARSE_GRID_SPACING = 0.8
