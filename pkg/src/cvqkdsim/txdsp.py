"""Transmitter chain: pulse shaping, sideband shift, pilots and preamble.

Frame layout at the DAC rate::

    [ zero pad | Zadoff-Chu preamble | guard | shaped data + pilots | zero pad ]

The guard (a configurable number of symbol periods) keeps the preamble tail
out of the matched filter's span over the first data symbols.  Pilots run
over the whole data section, including the shaping-filter tails.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError
from .modulation import SymbolFrame

PLANCK = 6.62607015e-34
LIGHT_SPEED = 2.99792458e8

_WAVEFORM_MAGIC = b"QTXW"
_WAVEFORM_VERSION = 1


@dataclass(frozen=True)
class DspParams:
    """Shared Alice/Bob DSP parameters.

    The receiver-side knobs (subframe size, pilot filter width, phase filter
    length) live here too because Bob must mirror Alice's frame layout.
    """

    symbol_rate: float = 100e6
    roll_off: float = 0.5
    frequency_shift: float = 100e6
    pilot_freq_1: float = 180e6
    pilot_freq_2: float = 200e6
    pilot_amp_1: float = 0.5
    pilot_amp_2: float = 0.4
    zc_length: int = 3989
    zc_root: int = 5
    zc_amplitude: float = 0.5
    dac_rate: float = 2e9
    adc_rate: float = 2.5e9
    rrc_span: int = 32
    guard_symbols: int = 64
    zero_pad_head: int = 1000
    zero_pad_tail: int = 1000
    subframe_size: int = 2 ** 18
    pilot_filter_width: float = 1e6
    phase_filter_length: int = 16384
    dac_fullscale: float = 1.0
    enforce_pilot_exclusion: bool = True

    def __post_init__(self):
        if not 0.0 <= self.roll_off <= 1.0:
            raise ConfigError("roll_off must lie in [0, 1]")
        if self.symbol_rate <= 0 or self.dac_rate <= 0 or self.adc_rate <= 0:
            raise ConfigError("rates must be positive")
        if self.pilot_amp_1 <= self.pilot_amp_2:
            raise ConfigError("pilot_amp_1 must exceed pilot_amp_2")
        if self.pilot_amp_2 < 0:
            raise ConfigError("pilot amplitudes must be non-negative")
        if not (0 <= self.zc_root <= self.zc_length):
            raise ConfigError("Zadoff-Chu root must satisfy 0 <= root <= length")
        if math.gcd(self.zc_length, self.zc_root) != 1:
            raise ConfigError("Zadoff-Chu root and length must be coprime")
        if self.dac_rate < 2 * (self.frequency_shift + self.bandwidth / 2):
            raise ConfigError("dac_rate below twice the upper data band edge")
        if self.rrc_span < 2:
            raise ConfigError("rrc_span must cover at least 2 symbols")
        if self.enforce_pilot_exclusion:
            lo = self.frequency_shift - self.bandwidth / 2
            hi = self.frequency_shift + self.bandwidth / 2
            for f in (self.pilot_freq_1, self.pilot_freq_2):
                if lo <= f <= hi:
                    raise ConfigError(
                        f"pilot exclusion violated: pilot at {f / 1e6:.1f} MHz lies "
                        f"inside the data band [{lo / 1e6:.1f}, {hi / 1e6:.1f}] MHz "
                        f"(B = symbol_rate * (1 + roll_off))")

    @property
    def bandwidth(self) -> float:
        """Occupied data bandwidth R_s * (1 + roll_off)."""
        return self.symbol_rate * (1.0 + self.roll_off)

    @property
    def sps_tx(self) -> float:
        return self.dac_rate / self.symbol_rate

    @property
    def sps_rx(self) -> float:
        return self.adc_rate / self.symbol_rate

    @property
    def guard_len(self) -> int:
        """Guard gap between preamble and data, in DAC samples."""
        return int(round(self.guard_symbols * self.sps_tx))

    @property
    def zc_len_adc(self) -> int:
        return int(round(self.zc_length * self.adc_rate / self.dac_rate))


@dataclass
class TxWaveform:
    """Assembled complex baseband frame at the DAC rate.

    ``scale`` is the uniform factor applied to fit the DAC full scale; it is
    the calibration constant between digital amplitude and shot-noise units,
    so photon-number bookkeeping downstream stays consistent.
    """

    samples: np.ndarray
    preamble_start: int
    data_start: int
    scale: float
    n_symbols: int

    def __len__(self) -> int:
        return len(self.samples)


def zadoff_chu(length: int, root: int) -> np.ndarray:
    """Constant-amplitude zero-autocorrelation sequence.

    ``zc[n] = exp(-j pi root n (n+1) / length)`` for odd ``length`` (primes
    recommended); requires gcd(length, root) = 1 and 0 <= root <= length.
    """
    if not (0 <= root <= length):
        raise ConfigError("require 0 <= root <= length")
    if math.gcd(length, root) != 1:
        raise ConfigError(f"root {root} and length {length} are not coprime")
    n = np.arange(length)
    cf = length % 2
    return np.exp(-1j * np.pi * root * n * (n + cf) / length)


def rrc_filter_taps(roll_off: float, symbol_rate: float, sample_rate: float,
                    span: int = 32) -> np.ndarray:
    """Root-raised-cosine taps, truncated to ``span`` symbols, unit energy.

    The squared magnitude response follows the raised-cosine piecewise
    description: flat out to (1-b)/2 * R_s, a cosine roll-off up to
    (1+b)/2 * R_s, zero beyond.
    """
    if not 0.0 <= roll_off <= 1.0:
        raise ConfigError("roll_off must lie in [0, 1]")
    if sample_rate < symbol_rate:
        raise ConfigError("sample_rate must be >= symbol_rate")
    if span < 2:
        raise ConfigError("span must be >= 2 symbols")
    sps = sample_rate / symbol_rate
    n = int(round(span * sps))
    if n % 2 == 0:
        n += 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # symbol units
    h = np.empty_like(t)
    b = roll_off
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 - b + 4.0 * b / np.pi
        elif b > 0 and abs(abs(4.0 * b * ti) - 1.0) < 1e-9:
            h[i] = (b / np.sqrt(2.0)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                         + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    return h / np.sqrt(np.sum(h ** 2))


def shape_symbols(frame: SymbolFrame, params: DspParams) -> np.ndarray:
    """Upsample to the DAC rate and apply the root-raised-cosine filter.

    Returns the full convolution (leading and trailing filter tails kept);
    the k-th symbol peak sits at ``(len(taps)-1)/2 + k*sps_tx``.
    """
    sps = params.sps_tx
    if abs(sps - round(sps)) > 1e-9:
        raise ConfigError("dac_rate must be an integer multiple of symbol_rate")
    sps = int(round(sps))
    taps = rrc_filter_taps(params.roll_off, params.symbol_rate, params.dac_rate,
                           params.rrc_span)
    up = np.zeros(len(frame) * sps, dtype=complex)
    up[::sps] = frame.symbols
    return fftconvolve(up, taps, mode="full")


def assemble_tx_frame(shaped: np.ndarray, params: DspParams) -> TxWaveform:
    """Shift data to the sideband, multiplex pilots, prepend the preamble.

    The waveform is uniformly scaled (never clipped) when its peak exceeds
    the DAC full scale; the applied factor is recorded in ``scale``.
    """
    n = np.arange(len(shaped))
    body = shaped * np.exp(2j * np.pi * params.frequency_shift * n / params.dac_rate)
    body = body + params.pilot_amp_1 * np.exp(2j * np.pi * params.pilot_freq_1 * n / params.dac_rate)
    body = body + params.pilot_amp_2 * np.exp(2j * np.pi * params.pilot_freq_2 * n / params.dac_rate)
    preamble = params.zc_amplitude * zadoff_chu(params.zc_length, params.zc_root)
    wave = np.concatenate([
        np.zeros(params.zero_pad_head, dtype=complex),
        preamble,
        np.zeros(params.guard_len, dtype=complex),
        body,
        np.zeros(params.zero_pad_tail, dtype=complex),
    ])
    peak = float(np.max(np.abs(wave))) if len(wave) else 0.0
    scale = 1.0
    if peak > params.dac_fullscale and peak > 0:
        scale = params.dac_fullscale / peak
        wave = wave * scale
    sps = int(round(params.sps_tx))
    taps_len = len(rrc_filter_taps(params.roll_off, params.symbol_rate,
                                   params.dac_rate, params.rrc_span))
    n_symbols = (len(shaped) - (taps_len - 1)) // sps
    return TxWaveform(samples=wave,
                      preamble_start=params.zero_pad_head,
                      data_start=params.zero_pad_head + params.zc_length + params.guard_len,
                      scale=scale,
                      n_symbols=n_symbols)


def mean_photon_number(p_monitoring: float, r_conv: float, symbol_rate: float,
                       wavelength: float = 1550e-9) -> tuple[float, float]:
    """Photons per symbol from the monitoring power, and the implied variance.

    ``n = r_conv * P / (E_ph * R_s)`` with ``E_ph = h c / lambda``; the
    modulation variance in shot-noise units is ``V_A = 2 n``.
    """
    if p_monitoring < 0:
        raise ValueError("monitoring power must be >= 0")
    if r_conv <= 0 or symbol_rate <= 0 or wavelength <= 0:
        raise ValueError("r_conv, symbol_rate and wavelength must be positive")
    e_ph = PLANCK * LIGHT_SPEED / wavelength
    n_mean = r_conv * p_monitoring / (e_ph * symbol_rate)
    return n_mean, 2.0 * n_mean


def save_waveform(path, waveform: TxWaveform, params: DspParams) -> None:
    """Write little-endian complex64 samples with an 8-byte header and sidecar."""
    header = struct.pack("<4sB3x", _WAVEFORM_MAGIC, _WAVEFORM_VERSION)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(waveform.samples.astype(np.complex64).tobytes())
    sidecar = {
        "params": asdict(params),
        "preamble_start": waveform.preamble_start,
        "data_start": waveform.data_start,
        "scale": waveform.scale,
        "n_symbols": waveform.n_symbols,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_waveform(path) -> tuple[TxWaveform, DspParams]:
    """Inverse of :func:`save_waveform`."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8 or header[:4] != _WAVEFORM_MAGIC:
            raise ConfigError("not a waveform file (bad magic)")
        version = header[4]
        if version != _WAVEFORM_VERSION:
            raise ConfigError(f"unsupported waveform version {version}")
        samples = np.frombuffer(fh.read(), dtype=np.complex64).astype(complex)
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    params = DspParams(**sidecar["params"])
    wf = TxWaveform(samples=samples,
                    preamble_start=sidecar["preamble_start"],
                    data_start=sidecar["data_start"],
                    scale=sidecar["scale"],
                    n_symbols=sidecar["n_symbols"])
    return wf, params
