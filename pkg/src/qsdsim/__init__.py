"""Stochastic state-diffusion simulator for a damped harmonic
oscillator coupled to a finite-temperature bath, with a deterministic
density-matrix reference, ensemble statistics, localization
diagnostics, and phase-space history (decoherence functional) tools.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DimensionError, FitError, GridWarning,
                     ParameterError, QuadratureError, SimulationError,
                     StepSizeWarning, TrajectoryError, TruncationError)
from .model import (DerivedScales, ModelParams, OperatorSet, build_operators,
                    cat_state, coherent_state, derive, expectation,
                    fock_state, normalize, tail_mass, temperature_for_nbar)
from .observables import (CSV_COLUMNS, ExponentialFit, ObservableBundle,
                          bundle, bundle_arrays, fit_exponential_decay,
                          localization_rhs, localization_rhs_spread_form,
                          sigma, windowed_slopes, write_bundle_csv)
from .qsd import (IntegratorConfig, NoiseIncrement, TrajectoryRecord,
                  draw_noise, draw_noise_block, qsd_step, run_trajectory,
                  trajectory_seed)
from .oracle import (LindbladPropagatorConfig, OracleRun, OUState,
                     lindblad_rhs, lindblad_step, ou_flow, propagate,
                     propagate_matrices, rk4_step, stationary_lindblad_check,
                     thermal_state, trace_expect)
from .ensemble import (STAT_FIELDS, CoherentGrid, EnsembleConfig,
                       EnsembleStats, InitialStateSpec, MixtureDiagnostics,
                       density_matrix, purity_and_coherent_overlap,
                       rho_from_json, rho_to_json, run_ensemble,
                       stats_to_json, trace_distance, write_rho_json,
                       write_stats_csv)
from .histories import (DecoherenceMatrix, HistorySpec, IntervalScan,
                        PhaseCell, cat_interval_scan, cell_projector,
                        classical_peaking_report, decoherence_functional,
                        tile_cells, write_decoherence_json,
                        write_suppression_csv)
