"""Discrete-time decoherence under bandlimited quantum noise.

A driven open system coupled to a chain environment is reduced to a bounded
moving frame of Kotelnikov modes: the environment's statistically
significant degrees of freedom couple and decouple at discrete times set by
the noise bandwidth.  The package extracts the mode streams, builds the
moving-frame Hamiltonian, evolves truncated Fock dynamics, samples
quantum-jump trajectories, and validates everything against brute-force
references.
"""

__version__ = "0.1.0"

from .chain import (ChainSpec, WavepacketTrajectory, build_uniform_chain,
                    propagate_wavepacket, spectral_density, zero_point_correlator)
from .classical import (ClassicalKernel, bandlimited_kernel, kotelnikov_mode_count,
                        plateau_count, sinc_subspace_overlap)
from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .dynamics import (JointState, ObservableSeries, RelevantDensity, SystemSpec,
                       apply_h_eff, evolve_density, evolve_forward_frame,
                       evolve_moving_frame, observables, trace_out_detached)
from .exact import TruncatedChainBasis, exact_evolve, stochastic_rho_plus
from .fock import FockRegister
from .jumps import (EnsembleResult, JumpHistory, JumpRecord, ensemble_average,
                    jump_entropy, run_ensemble, sample_history, schmidt_split)
from .schedule import (EffectiveSchedule, build_effective_schedule,
                       coupling_amplitudes, frame_generators, schedule_from_text,
                       schedule_to_text)
from .significance import (ModeSet, SignificanceMatrix, principal_angles,
                           rho_minus, rho_plus, significant_modes)
from .streams import (ModeEvent, ModeStreams, default_dt_event, extract_incoming,
                      extract_outgoing, reversed_trajectory, staircase_slope)
