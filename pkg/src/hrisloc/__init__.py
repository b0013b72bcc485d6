"""Joint localization of a hybrid RIS and a single-antenna UE from OFDM pilots."""

from .bench import ExperimentSpec, load_config, run_sweep, run_trial, write_results
from .bounds import BoundReport, bound_report, crb_channel, crb_state, fim_channel
from .codebooks import CodebookSet, assemble_omega, assemble_xi, build_codebooks
from .config import SystemConfig
from .errors import *  # noqa: F401,F403
from .estimator import ChannelEstimates, EstimatorConfig, estimate_channel, run_pipeline
from .scene import ChannelParams, SceneEstimate, SceneState, state_from_channel_params, reference_scene, triangle_solve
from .waveform import ObservationSet, ScatterPoint, synth_observations

__version__ = "0.1.0"
