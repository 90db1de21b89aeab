"""In-process optical bench: composes transmitter, channel and detection.

Ground truth (injected impairments and exact frame position) rides in a
sealed sidecar object for oracle-style tests; the Bob-facing view exposes
only what a receiver would measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import RxCapture, apply_channel, heterodyne_detect
from .config import Config
from .modulation import SymbolFrame, sample_constellation
from .txdsp import TxWaveform, assemble_tx_frame, shape_symbols


@dataclass(frozen=True)
class GroundTruth:
    """Injected values recorded for test oracles only."""

    transmittance: float
    excess_noise: float
    f_beat: float
    clock_skew: float
    preamble_start: float      # fractional ADC index of the preamble start
    symbol0_position: float    # fractional ADC index of the first symbol peak
    scale: float


@dataclass
class SimulatedFrame:
    """One simulated exchange: Alice's data, the waveform, Bob's capture."""

    frame: SymbolFrame
    waveform: TxWaveform
    capture: RxCapture
    truth: GroundTruth


def simulate_frame(config: Config, seed: int) -> SimulatedFrame:
    """Generate, transmit and detect one frame; bit-deterministic per seed."""
    p = config.dsp
    frame = sample_constellation(config.modulation, config.frame.n_symbols, seed)
    shaped = shape_symbols(frame, p)
    waveform = assemble_tx_frame(shaped, p)
    channel_out = apply_channel(waveform, config.channel, seed=seed + 1)
    capture = heterodyne_detect(channel_out, config.detector, config.channel, p,
                                scale=waveform.scale, seed=seed + 2)

    rate = config.detector.adc_rate / p.dac_rate
    skew = config.channel.clock_skew
    zc_start = config.detector.lead_in + p.zero_pad_head * rate / skew
    taps_len = int(round(p.rrc_span * p.sps_tx))
    if taps_len % 2 == 0:
        taps_len += 1
    d_tx = (taps_len - 1) / 2
    sym0 = config.detector.lead_in + (p.zero_pad_head + p.zc_length + p.guard_len
                                      + d_tx) * rate / skew
    truth = GroundTruth(transmittance=config.channel.transmittance,
                        excess_noise=config.channel.excess_noise,
                        f_beat=config.channel.f_beat,
                        clock_skew=skew,
                        preamble_start=zc_start,
                        symbol0_position=sym0,
                        scale=waveform.scale)
    return SimulatedFrame(frame=frame, waveform=waveform, capture=capture,
                          truth=truth)


class SimulatedBench:
    """Deterministic stand-in for the optical table.

    Alice and Bob each hold one of these built from the same configuration;
    a shared per-frame seed reproduces the identical capture, so the only
    information crossing the classical channel is what the protocol sends.
    """

    def __init__(self, config: Config):
        self._config = config

    def alice_frame(self, seed: int) -> SymbolFrame:
        """Alice's side: the modulated symbols of frame ``seed``."""
        return sample_constellation(self._config.modulation,
                                    self._config.frame.n_symbols, seed)

    def bob_capture(self, seed: int) -> RxCapture:
        """Bob's side: the detected capture only, no ground truth attached."""
        return simulate_frame(self._config, seed).capture

    def frame_seed(self, session_seed: int, frame_index: int) -> int:
        """Per-frame seed derivation shared by both endpoints."""
        return int(np.random.SeedSequence([session_seed, frame_index])
                   .generate_state(1)[0])
