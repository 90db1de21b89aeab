"""Receiver chain: synchronization, clock and carrier recovery, demodulation.

Processing order for a capture:

1. rough pilot location on the raw spectrum (bin resolution),
2. coarse preamble location from the pilot-band energy edge,
3. precise pilot frequencies measured inside the data burst -> clock ratio,
4. resample to the corrected clock, re-measure pilots -> beat frequency,
5. preamble cross-correlation -> sample-accurate frame start,
6. per-subframe: pilot re-estimation, phase reference, pilot removal,
   downconversion, matched filter, eye-position search, phase correction.

The identical frequency corrections and matched filter are applied to the
electronic-noise and electronic+shot-noise records so that normalization
sees the same effective bandwidth as the signal path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import uniform_filter1d
from scipy.signal import fftconvolve

from .channel import RxCapture
from .errors import (ClockRecoveryError, DspError, PilotNotFoundError,
                     PreambleNotFoundError, SyncError)
from .sigproc import estimate_tone, fractional_resample, strongest_two_tones, subtract_tone
from .txdsp import DspParams, rrc_filter_taps, zadoff_chu

logger = logging.getLogger(__name__)

# Identity-resample tolerance: clock ratios closer to 1 than this produce
# sub-sample drift over any realistic capture and are not corrected.
CLOCK_IDENTITY_TOL = 3e-8
# Subframe pilot re-estimation probe length (samples); full-capture precision
# is only needed for the one-shot clock/beat estimates.
PILOT_PROBE_LEN = 2 ** 17
BEAT_SEARCH_HALFWIDTH = 10e6


@dataclass
class SyncEstimate:
    """Synchronization summary for one frame."""

    coarse_start: int
    fine_start: int
    f_pilot_meas: tuple[float, float]
    clock_ratio: float
    f_beat: float


@dataclass
class SubframeResult:
    """Demodulated symbols of one subframe with their sample positions."""

    symbols: np.ndarray
    positions: np.ndarray           # absolute fractional sample index per symbol
    f_beat_local: float
    sampling_offset: float
    phase_reference_quality: float
    valid: bool = True


@dataclass
class ReceivedFrame:
    """Output of the full receive chain.

    ``symbols`` is indexed by Alice's symbol number; entries of subframes
    that failed validation are NaN and excluded via ``valid_mask``.
    """

    symbols: np.ndarray
    valid_mask: np.ndarray
    elec_symbols: np.ndarray
    elec_shot_symbols: np.ndarray
    sync: SyncEstimate
    subframes: list[SubframeResult] = field(default_factory=list)


def locate_preamble_coarse(capture: RxCapture, params: DspParams) -> int:
    """Approximate preamble start from the pilot-band energy edge.

    The two strongest spectral bins locate the pilot band without knowing
    the beat frequency; the rising edge of the band-limited energy marks the
    start of the data section, from which the preamble start follows by the
    known frame layout.

    Raises:
        PreambleNotFoundError: if no energy edge stands out of the noise.
    """
    sig = capture.signal
    fs = capture.adc_rate
    n = len(sig)
    zc_adc = params.zc_len_adc
    if n < 3 * zc_adc:
        raise PreambleNotFoundError("capture shorter than the frame preamble")

    sp = np.abs(sfft.rfft(sig))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    band = freqs >= 20e6
    k1 = int(np.argmax(np.where(band, sp, 0.0)))
    band2 = band & (np.abs(freqs - freqs[k1]) > 8e6)
    k2 = int(np.argmax(np.where(band2, sp, 0.0)))
    f_lo, f_hi = sorted((freqs[k1], freqs[k2]))

    spec = sfft.fft(sig)
    fr = np.fft.fftfreq(n, 1.0 / fs)
    mask = (fr > f_lo - 10e6) & (fr < f_hi + 10e6)
    envelope = np.abs(sfft.ifft(spec * mask)) ** 2
    window = zc_adc
    energy = uniform_filter1d(envelope, window)
    edge = energy[window:] - energy[:-window]
    peak = float(np.max(edge))
    floor = float(np.median(np.abs(edge)))
    if peak < 8.0 * (floor + 1e-300):
        raise PreambleNotFoundError("preamble not found: no pilot-band energy rise")
    data_rise = int(np.argmax(edge)) + window // 2
    guard_adc = int(round(params.guard_len * capture.adc_rate / params.dac_rate))
    coarse = data_rise - zc_adc - guard_adc
    return max(coarse, 0)


def measure_pilot_frequencies(samples: np.ndarray, params: DspParams,
                              sample_rate: float) -> tuple[float, float]:
    """Frequencies of the two pilot tones, ordered by amplitude.

    The first returned frequency belongs to the stronger tone, which the
    transmitter guarantees to be pilot 1.
    """
    f1, f2, _, _ = strongest_two_tones(samples, sample_rate)
    return f1, f2


def recover_clock(capture: RxCapture, f1_meas: float, f2_meas: float,
                  params: DspParams) -> tuple[float, RxCapture]:
    """Clock-ratio estimate and the clock-corrected capture.

    ``delta_f = (f2 - f1) / (pilot_2 - pilot_1)``; the signal is resampled
    by ``1 / delta_f``.  Ratios within ``CLOCK_IDENTITY_TOL`` of unity skip
    the resample (the correction would be far below one sample of drift).
    Stationary noise records are returned untouched: band-limited
    interpolation is statistically neutral for them.

    Raises:
        ClockRecoveryError: mislabeled pilots or implausible ratio.
    """
    spacing = f2_meas - f1_meas
    if spacing <= 0:
        raise ClockRecoveryError(
            "pilot ordering mismatch: stronger tone not at the lower frequency "
            f"({f1_meas / 1e6:.2f} vs {f2_meas / 1e6:.2f} MHz)")
    delta_f = spacing / (params.pilot_freq_2 - params.pilot_freq_1)
    if not (1 - 1e-3) < delta_f < (1 + 1e-3):
        raise ClockRecoveryError(f"clock ratio {delta_f} outside [1 - 1e-3, 1 + 1e-3]")
    if abs(delta_f - 1.0) < CLOCK_IDENTITY_TOL:
        return delta_f, capture
    corrected = fractional_resample(capture.signal, 1.0 / delta_f)
    return delta_f, RxCapture(signal=corrected, elec_record=capture.elec_record,
                              elec_shot_record=capture.elec_shot_record,
                              adc_rate=capture.adc_rate)


def estimate_beat(f1_corrected: float, params: DspParams) -> float:
    """Beat frequency from the corrected first-pilot measurement."""
    return f1_corrected - params.pilot_freq_1


def synchronize_fine(signal: np.ndarray, params: DspParams, f_beat: float,
                     coarse: int, sample_rate: float,
                     threshold: float = 5.0) -> int:
    """Sample-accurate preamble start by cross-correlation.

    The reference is the transmitted sequence resampled to the ADC grid; the
    beat frequency is removed before correlating.

    Raises:
        SyncError: correlation peak below ``threshold`` times the median.
    """
    zc_adc = params.zc_len_adc
    ref = fractional_resample(zadoff_chu(params.zc_length, params.zc_root),
                              params.dac_rate / sample_rate)
    lo = max(coarse - zc_adc, 0)
    hi = min(coarse + 2 * zc_adc, len(signal))
    if hi - lo < len(ref):
        raise SyncError("coarse window does not fit the preamble")
    n = np.arange(lo, hi)
    seg = signal[lo:hi] * np.exp(-2j * np.pi * f_beat * n / sample_rate)
    corr = np.abs(fftconvolve(seg, np.conj(ref[::-1]), mode="valid"))
    peak = float(np.max(corr))
    floor = float(np.median(corr)) + 1e-300
    if peak < threshold * floor:
        raise SyncError(f"correlation peak below threshold "
                        f"(peak/median = {peak / floor:.2f} < {threshold})")
    return lo + int(np.argmax(corr))


def _probe_tone(seg: np.ndarray, fs: float, f_center: float,
                halfwidth: float = BEAT_SEARCH_HALFWIDTH) -> tuple[float, float]:
    """Tone frequency near ``f_center`` from a bounded probe window."""
    probe = seg[:PILOT_PROBE_LEN] if len(seg) > PILOT_PROBE_LEN else seg
    return estimate_tone(probe, fs, fmin=f_center - halfwidth,
                         fmax=f_center + halfwidth)


def demodulate_subframe(signal: np.ndarray, params: DspParams, f_beat_hint: float,
                        start: int, end: int, body_start: int, body_end: int,
                        sample_rate: float, taps: np.ndarray,
                        pilot_quality_min: float = 10.0) -> SubframeResult:
    """Demodulate one subframe of the clock-corrected capture.

    The pilot frequencies are re-estimated locally, pilot 1 is band-passed
    into a phase reference (unwrapped, then smoothed by a uniform filter),
    both pilots are coherently subtracted, the data is shifted to baseband,
    matched-filtered and sampled at the maximum-variance eye position with
    parabolic refinement to a fractional offset.

    Args:
        signal: clock-corrected capture (real).
        params: DSP parameters.
        f_beat_hint: frame-level beat estimate seeding the local search.
        start, end: subframe core boundaries (absolute sample indices).
        body_start, body_end: pilot-bearing region; padding is clamped to it
            so the phase reference never sees pilot-free samples.
        sample_rate: ADC rate.
        taps: matched root-raised-cosine taps at the ADC rate.
        pilot_quality_min: minimum pilot prominence before the subframe is
            declared invalid.

    Returns:
        SubframeResult; ``valid`` is False when the pilot vanished.
    """
    pad = max(len(taps), params.phase_filter_length)
    lo = max(start - pad, 0, body_start)
    hi = min(end + pad, len(signal), body_end)
    seg = signal[lo:hi]
    nseg = np.arange(lo, hi)

    try:
        f1, a1 = _probe_tone(seg, sample_rate, f_beat_hint + params.pilot_freq_1)
        f2, _ = _probe_tone(seg, sample_rate, f_beat_hint + params.pilot_freq_2)
    except PilotNotFoundError:
        return SubframeResult(symbols=np.empty(0, complex), positions=np.empty(0),
                              f_beat_local=f_beat_hint, sampling_offset=0.0,
                              phase_reference_quality=0.0, valid=False)
    probe = seg[:PILOT_PROBE_LEN] if len(seg) > PILOT_PROBE_LEN else seg
    floor = float(np.median(np.abs(sfft.rfft(probe * np.hanning(len(probe)))))) + 1e-300
    quality = a1 / floor
    f_beat_local = f1 - params.pilot_freq_1
    if quality < pilot_quality_min:
        logger.warning("subframe at %d flagged invalid: pilot quality %.2f", start, quality)
        return SubframeResult(symbols=np.empty(0, complex), positions=np.empty(0),
                              f_beat_local=f_beat_local, sampling_offset=0.0,
                              phase_reference_quality=quality, valid=False)

    # phase reference from pilot 1
    spec = sfft.fft(seg)
    fr = np.fft.fftfreq(len(seg), 1.0 / sample_rate)
    width = params.pilot_filter_width
    mask = np.clip((width / 2 - np.abs(fr - f1)) / (width / 8) + 1.0, 0.0, 1.0)
    tone = sfft.ifft(spec * mask)
    phase = np.unwrap(np.angle(tone)) - 2 * np.pi * f1 * nseg / sample_rate
    phase = uniform_filter1d(phase, params.phase_filter_length)

    # remove both pilots, shift the data to baseband, matched filter
    clean = seg.astype(float)
    for f_tone in (f1, f2):
        clean = subtract_tone(clean, f_tone, sample_rate)
    dmod = clean * np.exp(-2j * np.pi * (f_beat_local + params.frequency_shift)
                          * nseg / sample_rate)
    filtered = fftconvolve(dmod, taps, mode="same")

    core = slice(start - lo, end - lo)
    y = filtered[core]
    ph = phase[core]
    n_core = nseg[core]

    sps = params.sps_rx
    if abs(sps - round(sps)) > 1e-9:
        raise DspError("adc_rate must be an integer multiple of symbol_rate")
    sps = int(round(sps))
    variances = np.array([np.var(y[o::sps]) for o in range(sps)])
    off = int(np.argmax(variances))
    vm = variances[(off - 1) % sps]
    v0 = variances[off]
    vp = variances[(off + 1) % sps]
    den = vm - 2 * v0 + vp
    frac = float(np.clip(0.5 * (vm - vp) / den, -0.5, 0.5)) if den != 0 else 0.0
    offset = off + frac
    if offset < 0:
        offset += sps

    n_sym = int(np.floor((len(y) - 1 - offset) / sps)) + 1
    vals = fractional_resample(y, float(sps), n_out=n_sym, start=offset)
    positions = n_core[0] + offset + np.arange(n_sym) * sps
    vals = vals * np.exp(-1j * np.interp(positions, n_core, ph))
    return SubframeResult(symbols=vals, positions=positions,
                          f_beat_local=f_beat_local, sampling_offset=offset,
                          phase_reference_quality=quality, valid=True)


def correct_global_phase(alice_symbols: np.ndarray, bob_symbols: np.ndarray,
                         grid_size: int = 3600) -> tuple[float, np.ndarray]:
    """Global rotation estimate by exhaustive search over a rotation grid.

    Returns the rotation ``theta`` maximizing the real covariance between
    Alice and the de-rotated Bob symbols, and ``bob_symbols * exp(-i theta)``.
    Positive scaling of Bob's symbols leaves the estimate unchanged.

    Raises:
        ValueError: on empty or mismatched inputs.
    """
    alice_symbols = np.asarray(alice_symbols)
    bob_symbols = np.asarray(bob_symbols)
    if alice_symbols.size == 0 or alice_symbols.shape != bob_symbols.shape:
        raise ValueError("global phase search needs matching non-empty symbol sets")
    c = np.mean(alice_symbols * np.conj(bob_symbols))
    grid = np.linspace(-np.pi, np.pi, grid_size, endpoint=False)
    theta = float(grid[np.argmax(np.real(c * np.exp(1j * grid)))])
    return theta, bob_symbols * np.exp(-1j * theta)


def receive_frame(capture: RxCapture, params: DspParams, n_symbols: int,
                  alice_subset: tuple[np.ndarray, np.ndarray] | None = None,
                  sync_threshold: float = 5.0,
                  dump_dir=None) -> ReceivedFrame:
    """Full receive chain from raw capture to phase-aligned symbols.

    Args:
        capture: detected samples plus calibration records.
        params: DSP parameters (must match the transmitter).
        n_symbols: number of symbols in the frame.
        alice_subset: optional ``(indices, symbols)`` disclosed by Alice; when
            given, the residual global phase is corrected on all symbols.
        sync_threshold: preamble correlation threshold.
        dump_dir: optional directory for intermediate-stage binary dumps.

    Raises:
        DspError subclasses on synchronization or recovery failure.
    """
    if len(capture.elec_record) == 0 or len(capture.elec_shot_record) == 0:
        raise DspError("calibration records required")
    fs = capture.adc_rate

    coarse = locate_preamble_coarse(capture, params)
    zc_adc = params.zc_len_adc
    guard_adc = int(round(params.guard_len * fs / params.dac_rate))
    taps_tx = rrc_filter_taps(params.roll_off, params.symbol_rate, params.dac_rate,
                              params.rrc_span)
    body_len_dac = n_symbols * int(round(params.sps_tx)) + len(taps_tx) - 1
    body_len_adc = int(body_len_dac * fs / params.dac_rate)

    margin = min(50000, body_len_adc // 8)
    burst_lo = coarse + zc_adc + guard_adc + margin
    burst_hi = min(coarse + zc_adc + guard_adc + body_len_adc - margin,
                   len(capture.signal))
    if burst_hi - burst_lo < 4 * margin:
        burst_lo = coarse + zc_adc + guard_adc
        burst_hi = min(burst_lo + body_len_adc, len(capture.signal))
    f1_raw, f2_raw = measure_pilot_frequencies(capture.signal[burst_lo:burst_hi],
                                               params, fs)
    delta_f, corrected = recover_clock(capture, f1_raw, f2_raw, params)
    f1c, f2c = measure_pilot_frequencies(corrected.signal[burst_lo:burst_hi],
                                         params, fs)
    f_beat = estimate_beat(f1c, params)

    fine = synchronize_fine(corrected.signal, params, f_beat, coarse, fs,
                            threshold=sync_threshold)
    sync = SyncEstimate(coarse_start=coarse, fine_start=fine,
                        f_pilot_meas=(f1c, f2c), clock_ratio=delta_f, f_beat=f_beat)

    taps_rx = rrc_filter_taps(params.roll_off, params.symbol_rate, fs, params.rrc_span)
    d_tx = (len(taps_tx) - 1) / 2
    rate = fs / params.dac_rate
    body_start = fine + int(round((params.zc_length + params.guard_len) * rate))
    body_end = min(fine + int((params.zc_length + params.guard_len + body_len_dac) * rate),
                   len(corrected.signal))
    sym0 = fine + (params.zc_length + params.guard_len + d_tx) * rate
    sps = int(round(params.sps_rx))

    symbols = np.full(n_symbols, np.nan + 0j)
    subframes = []
    pos = body_start
    while pos < body_end - sps:
        end = min(pos + params.subframe_size, body_end)
        sub = demodulate_subframe(corrected.signal, params, f_beat, pos, end,
                                  body_start, body_end, fs, taps_rx)
        subframes.append(sub)
        if sub.valid:
            k = np.round((sub.positions - sym0) / sps).astype(int)
            ok = (k >= 0) & (k < n_symbols)
            symbols[k[ok]] = sub.symbols[ok]
        pos = end

    valid_mask = ~np.isnan(symbols.real)
    if not valid_mask.any():
        raise DspError("no valid subframes in frame")

    elec_sym = _noise_record_chain(corrected.elec_record, params, f_beat, fs, taps_rx)
    es_sym = _noise_record_chain(corrected.elec_shot_record, params, f_beat, fs, taps_rx)

    if alice_subset is not None:
        idx, alice_vals = alice_subset
        idx = np.asarray(idx)
        sel = valid_mask[idx]
        theta, _ = correct_global_phase(np.asarray(alice_vals)[sel], symbols[idx[sel]])
        symbols = symbols * np.exp(-1j * theta)

    if dump_dir is not None:
        _dump_stages(dump_dir, corrected.signal, symbols, subframes)
    return ReceivedFrame(symbols=symbols, valid_mask=valid_mask,
                         elec_symbols=elec_sym, elec_shot_symbols=es_sym,
                         sync=sync, subframes=subframes)


def _noise_record_chain(record: np.ndarray, params: DspParams, f_beat: float,
                        sample_rate: float, taps: np.ndarray) -> np.ndarray:
    """Apply the signal path's frequency shift and matched filter to a record."""
    n = np.arange(len(record))
    clean = record.astype(float)
    for f_nominal in (params.pilot_freq_1, params.pilot_freq_2):
        clean = subtract_tone(clean, f_beat + f_nominal, sample_rate)
    dmod = clean * np.exp(-2j * np.pi * (f_beat + params.frequency_shift)
                          * n / sample_rate)
    filtered = fftconvolve(dmod, taps, mode="same")
    sps = int(round(params.sps_rx))
    return filtered[len(taps):len(filtered) - len(taps):sps]


def _dump_stages(dump_dir, corrected_signal, symbols, subframes) -> None:
    import os
    os.makedirs(dump_dir, exist_ok=True)
    corrected_signal.astype(np.float32).tofile(os.path.join(dump_dir, "post_clock.f32"))
    symbols.astype(np.complex64).tofile(os.path.join(dump_dir, "symbols.c64"))
    for i, sub in enumerate(subframes):
        sub.symbols.astype(np.complex64).tofile(
            os.path.join(dump_dir, f"subframe_{i:03d}.c64"))
