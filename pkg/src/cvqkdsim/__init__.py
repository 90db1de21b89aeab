"""Desk-scale CV-QKD workbench: transmitter DSP, impaired-channel simulation,
receiver DSP, parameter estimation and secret-key-rate bounds."""

__version__ = "0.1.0"

from .channel import (ChannelParams, DetectorModel, RxCapture, apply_channel,
                      heterodyne_detect, simulate_symbol_channel,
                      transmittance_from_fiber)
from .config import Config, default_config, load_config, loads_config
from .estimation import (EstimationResult, WorstCaseBounds, estimate_channel,
                         snu_normalize, worst_case_bounds)
from .modulation import (ModulationKind, ModulationScheme, SymbolFrame,
                         constellation_points, empirical_variance,
                         sample_constellation)
from .rxdsp import (ReceivedFrame, SubframeResult, SyncEstimate,
                    correct_global_phase, demodulate_subframe, estimate_beat,
                    locate_preamble_coarse, measure_pilot_frequencies,
                    receive_frame, recover_clock, synchronize_fine)
from .skr import (DetectorTrustModel, SkrInput, SkrResult, finite_size_rate,
                  g_entropy, holevo_bound, mutual_information, secret_key_rate)
from .txdsp import (DspParams, TxWaveform, assemble_tx_frame,
                    mean_photon_number, rrc_filter_taps, shape_symbols,
                    zadoff_chu)

__all__ = [name for name in dir() if not name.startswith("_")]
