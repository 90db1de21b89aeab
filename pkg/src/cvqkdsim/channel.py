"""Channel and coherent-receiver impairment model.

The quantum channel scales the waveform by sqrt(T) and adds complex white
noise standing in for the excess noise.  Detection maps the complex envelope
onto a real capture at the ADC rate: beat-frequency upconversion, quantum
efficiency, shot and electronic noise, an analog low-pass response and the
receiver clock error.

Calibration convention: a waveform whose symbols are in shot-noise units and
whose digital scale is ``s`` (see ``TxWaveform.scale``) is detected against a
shot-noise variance of ``s^2 * adc_rate / (2 * dac_rate)`` raw units, which
makes the recovered symbol moments satisfy the heterodyne relations
``<XY> = sqrt(eta T / 2) V_A`` and
``<Y^2> = 1 + V_el + (eta T / 2)(V_A + xi)`` without further bookkeeping.
The capture is then rescaled so the shot variance equals the configured
``shot_noise_raw`` (arbitrary units; only ratios survive normalization).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ConfigError
from .sigproc import fractional_resample
from .txdsp import DspParams, TxWaveform

_CAPTURE_MAGIC = b"QRXC"
_CAPTURE_VERSION = 1


def transmittance_from_fiber(length_km: float, attenuation_db_per_km: float = 0.2,
                             connector_loss_db: float = 0.0) -> float:
    """Channel transmittance of a fiber span plus fixed connector loss."""
    if length_km < 0 or attenuation_db_per_km < 0 or connector_loss_db < 0:
        raise ConfigError("fiber parameters must be non-negative")
    total_db = length_km * attenuation_db_per_km + connector_loss_db
    return 10.0 ** (-total_db / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Quantum-channel impairments.

    ``excess_noise`` is referred to the channel input in shot-noise units,
    following the convention in which Bob's excess noise is
    ``xi_B = eta T xi / 2``.
    """

    transmittance: float = 1.0
    excess_noise: float = 0.0
    f_beat: float = 0.0
    clock_skew: float = 1.0
    f_beat_drift: float = 0.0  # Hz per second, optional linear intra-frame drift

    def __post_init__(self):
        if not 0.0 < self.transmittance <= 1.0:
            raise ConfigError("transmittance must lie in (0, 1]")
        if self.excess_noise < 0:
            raise ConfigError("excess_noise must be >= 0")
        if abs(self.clock_skew - 1.0) >= 1e-3:
            raise ConfigError("clock_skew must satisfy |skew - 1| < 1e-3")

    @classmethod
    def from_fiber(cls, length_km: float, attenuation_db_per_km: float = 0.2,
                   connector_loss_db: float = 0.0, **kwargs) -> "ChannelParams":
        t = transmittance_from_fiber(length_km, attenuation_db_per_km,
                                     connector_loss_db)
        return cls(transmittance=t, **kwargs)


@dataclass(frozen=True)
class DetectorModel:
    """Receiver model: efficiency, electronic noise and digitization."""

    efficiency: float = 0.554
    elec_noise: float = 0.1          # SNU, relative to the shot noise
    adc_rate: float = 2.5e9
    analog_bandwidth: float = 700e6
    shot_noise_raw: float = 1.0      # arbitrary units of the emitted capture
    noise_record_len: int = 2 ** 21
    lead_in: int = 20000             # noise-only samples before the frame
    tail_pad: int = 5000

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ConfigError("efficiency must lie in (0, 1]")
        if self.elec_noise < 0:
            raise ConfigError("elec_noise must be >= 0")
        if self.shot_noise_raw <= 0:
            raise ConfigError("shot_noise_raw must be positive")


@dataclass
class RxCapture:
    """Detected real samples plus the two noise-calibration records.

    The noise records model the switch-off calibration period that precedes
    the signal acquisition: ``elec_record`` with the optical input dark,
    ``elec_shot_record`` with the local oscillator only.
    """

    signal: np.ndarray
    elec_record: np.ndarray
    elec_shot_record: np.ndarray
    adc_rate: float

    @property
    def durations(self) -> tuple[float, float, float]:
        """(signal, elec, elec+shot) record durations in seconds."""
        return (len(self.signal) / self.adc_rate,
                len(self.elec_record) / self.adc_rate,
                len(self.elec_shot_record) / self.adc_rate)


def apply_channel(waveform: TxWaveform, channel: ChannelParams,
                  seed: int = 0) -> np.ndarray:
    """Attenuate by sqrt(T) and add the excess-noise term.

    The added complex white noise has variance ``T * xi * scale^2 / 2`` per
    sample (scale is the waveform's digital-to-SNU factor), which lands at
    ``(eta T / 2) xi`` shot-noise units per symbol after detection and the
    matched receiver, as required by the channel moment relations.
    """
    out = np.sqrt(channel.transmittance) * waveform.samples
    if channel.excess_noise > 0:
        rng = np.random.default_rng(seed)
        sd = np.sqrt(channel.transmittance * channel.excess_noise
                     * waveform.scale ** 2 / 4.0)
        out = out + sd * (rng.normal(size=len(out)) + 1j * rng.normal(size=len(out)))
    return out


def heterodyne_detect(channel_out: np.ndarray, detector: DetectorModel,
                      channel: ChannelParams, params: DspParams,
                      scale: float = 1.0, seed: int = 1) -> RxCapture:
    """Produce Bob's real capture from the channel-output envelope.

    Steps: resample the envelope onto the (skewed) ADC time grid, upconvert
    by the beat frequency, take the real part with sqrt(efficiency), add
    shot and electronic noise, and apply the analog low-pass response.  The
    same noise laws and filter produce the two calibration records.

    Args:
        channel_out: complex envelope at the DAC rate.
        detector: receiver model.
        channel: channel parameters (beat, skew, drift).
        params: DSP parameters (rates and band layout).
        scale: digital-to-SNU amplitude factor of the transmitted waveform.
        seed: noise seed; identical seeds give bit-identical captures.

    Raises:
        ConfigError: if the upper band edge aliases past adc_rate / 2.
    """
    f_top = channel.f_beat + max(params.frequency_shift + params.bandwidth / 2,
                                 params.pilot_freq_2)
    if f_top >= detector.adc_rate / 2:
        raise ConfigError(
            f"aliasing: beat + band edge = {f_top / 1e6:.1f} MHz exceeds "
            f"adc_rate/2 = {detector.adc_rate / 2e6:.1f} MHz")

    rng = np.random.default_rng(seed)
    skew = channel.clock_skew
    ratio = skew * params.dac_rate / detector.adc_rate
    env = fractional_resample(channel_out, ratio)
    t = np.arange(len(env)) * skew / detector.adc_rate
    phase = 2 * np.pi * (channel.f_beat * t + 0.5 * channel.f_beat_drift * t * t)
    detected = np.sqrt(detector.efficiency) * np.real(env * np.exp(1j * phase))

    # shot-noise level that makes the waveform's SNU calibration exact
    s0_natural = scale ** 2 * detector.adc_rate / (2.0 * params.dac_rate)
    unit = np.sqrt(detector.shot_noise_raw / s0_natural)

    sig = np.concatenate([np.zeros(detector.lead_in), detected,
                          np.zeros(detector.tail_pad)]) * unit
    s0 = detector.shot_noise_raw
    v_el = detector.elec_noise
    sig = sig + rng.normal(0.0, np.sqrt(s0 * (1.0 + v_el)), len(sig))

    n_rec = detector.noise_record_len
    elec = rng.normal(0.0, np.sqrt(s0 * v_el), n_rec) if v_el > 0 else np.zeros(n_rec)
    elec_shot = rng.normal(0.0, np.sqrt(s0 * (1.0 + v_el)), n_rec)

    sos = butter(2, detector.analog_bandwidth, fs=detector.adc_rate, output="sos")
    sig = sosfiltfilt(sos, sig)
    elec = sosfiltfilt(sos, elec)
    elec_shot = sosfiltfilt(sos, elec_shot)
    return RxCapture(signal=sig, elec_record=elec, elec_shot_record=elec_shot,
                     adc_rate=detector.adc_rate)


def simulate_symbol_channel(symbols: np.ndarray, channel: ChannelParams,
                            detector: DetectorModel, seed: int = 0,
                            n_noise_symbols: int | None = None
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Statistical symbol-level channel: the model the waveform chain realizes.

    ``Y = sqrt(eta T / 2) X + N`` with ``E|N|^2 = 1 + V_el + (eta T / 2) xi``
    in shot-noise units, scaled by ``shot_noise_raw``.  Returns Bob symbols
    plus electronic and electronic+shot noise symbol records drawn from the
    same laws, for exercising normalization and estimation end to end.
    """
    rng = np.random.default_rng(seed)
    t, xi = channel.transmittance, channel.excess_noise
    eta, v_el = detector.efficiency, detector.elec_noise
    s0 = detector.shot_noise_raw
    m = len(symbols)
    n_noise = n_noise_symbols if n_noise_symbols is not None else m

    def cnoise(var, n):
        sd = np.sqrt(var / 2.0)
        return sd * (rng.normal(size=n) + 1j * rng.normal(size=n))

    noise_var = (1.0 + v_el + eta * t * xi / 2.0) * s0
    y = np.sqrt(eta * t / 2.0 * s0) * symbols + cnoise(noise_var, m)
    elec = cnoise(v_el * s0, n_noise)
    elec_shot = cnoise((1.0 + v_el) * s0, n_noise)
    return y, elec, elec_shot


def save_capture(path, capture: RxCapture, detector: DetectorModel | None = None,
                 channel: ChannelParams | None = None) -> None:
    """Write the three records as little-endian float32 with a JSON sidecar."""
    header = struct.pack("<4sB3I", _CAPTURE_MAGIC, _CAPTURE_VERSION,
                         len(capture.signal), len(capture.elec_record),
                         len(capture.elec_shot_record))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(capture.signal.astype(np.float32).tobytes())
        fh.write(capture.elec_record.astype(np.float32).tobytes())
        fh.write(capture.elec_shot_record.astype(np.float32).tobytes())
    sidecar = {"adc_rate": capture.adc_rate}
    if detector is not None:
        sidecar["detector"] = asdict(detector)
    if channel is not None:
        sidecar["channel"] = asdict(channel)
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_capture(path) -> RxCapture:
    """Inverse of :func:`save_capture`."""
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sB3I"))
        magic, version, n_sig, n_el, n_es = struct.unpack("<4sB3I", header)
        if magic != _CAPTURE_MAGIC:
            raise ConfigError("not a capture file (bad magic)")
        if version != _CAPTURE_VERSION:
            raise ConfigError(f"unsupported capture version {version}")
        data = np.frombuffer(fh.read(), dtype=np.float32).astype(float)
    if len(data) != n_sig + n_el + n_es:
        raise ConfigError("capture file truncated")
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    return RxCapture(signal=data[:n_sig],
                     elec_record=data[n_sig:n_sig + n_el],
                     elec_shot_record=data[n_sig + n_el:],
                     adc_rate=sidecar["adc_rate"])
