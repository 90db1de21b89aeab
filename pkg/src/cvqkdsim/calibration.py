"""Through-origin fits for the transmitter conversion factor and receiver
efficiency.

Both calibrations are physically constrained to pass through zero, so the
fits are least-squares slopes through the origin with residual diagnostics
for operator review.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError
from .txdsp import LIGHT_SPEED, PLANCK

ELEMENTARY_CHARGE = 1.602176634e-19


@dataclass
class FitResult:
    """Slope of a through-origin least-squares fit plus diagnostics."""

    slope: float
    stderr: float
    residual_rms: float
    n_points: int

    def to_json(self) -> str:
        return json.dumps({"slope": self.slope, "stderr": self.stderr,
                           "residual_rms": self.residual_rms,
                           "n_points": self.n_points})


def _fit_through_origin(x: np.ndarray, y: np.ndarray) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise CalibrationError("fit needs at least two points")
    sxx = float(np.sum(x * x))
    if sxx <= 0:
        raise CalibrationError("degenerate fit: all abscissae are zero")
    slope = float(np.sum(x * y)) / sxx
    resid = y - slope * x
    rms = float(np.sqrt(np.mean(resid ** 2)))
    dof = max(x.size - 1, 1)
    stderr = float(np.sqrt(np.sum(resid ** 2) / dof / sxx))
    return FitResult(slope=slope, stderr=stderr, residual_rms=rms, n_points=x.size)


def fit_r_conv(pairs) -> FitResult:
    """Conversion factor from (monitoring power, output power) pairs.

    The slope of the output power against the monitoring power is the ratio
    ``r_conv`` used by the photon-number bookkeeping.
    """
    pairs = list(pairs)
    p_mon = np.array([p for p, _ in pairs], dtype=float)
    p_out = np.array([q for _, q in pairs], dtype=float)
    if np.any(p_mon < 0) or np.any(p_out < 0):
        raise CalibrationError("powers must be non-negative")
    return _fit_through_origin(p_mon, p_out)


def fit_eta(records, monitor_gain: float, wavelength: float = 1550e-9) -> FitResult:
    """Detector efficiency from (V+, V-, P_sig) monitoring records.

    eta = (h c / (lambda e)) * slope of (V+ + V-) / G_m against P_sig;
    the prefactor is the inverse of the ideal responsivity (about
    1.25 A/W at 1550 nm).

    The returned slope is eta itself.  Efficiencies outside (0, 1.1] are
    reported with a warning flag via CalibrationError only when negative.
    """
    records = list(records)
    if monitor_gain <= 0 or wavelength <= 0:
        raise CalibrationError("monitor gain and wavelength must be positive")
    v_sum = np.array([vp + vm for vp, vm, _ in records], dtype=float)
    p_sig = np.array([p for _, _, p in records], dtype=float)
    fit = _fit_through_origin(p_sig, v_sum / monitor_gain)
    prefactor = PLANCK * LIGHT_SPEED / (wavelength * ELEMENTARY_CHARGE)
    eta = prefactor * fit.slope
    if eta <= 0:
        raise CalibrationError(f"non-physical efficiency {eta:.3g}")
    if eta > 1.1:
        import logging
        logging.getLogger(__name__).warning(
            "fitted efficiency %.3f exceeds 1.1: check the gain calibration", eta)
    return FitResult(slope=eta, stderr=prefactor * fit.stderr,
                     residual_rms=fit.residual_rms, n_points=fit.n_points)


def responsivity_to_efficiency(responsivity: float,
                               wavelength: float = 1550e-9) -> float:
    """Photodiode efficiency from its responsivity in A/W."""
    if responsivity < 0:
        raise CalibrationError("responsivity must be >= 0")
    return responsivity * PLANCK * LIGHT_SPEED / (wavelength * ELEMENTARY_CHARGE)


def read_pairs_csv(path) -> list[tuple[float, float]]:
    """Two-column CSV (monitoring power, output power), header optional."""
    return [(row[0], row[1]) for row in _read_float_rows(path, 2)]


def read_eta_csv(path) -> list[tuple[float, float, float]]:
    """Three-column CSV (V+, V-, P_sig), header optional."""
    return [tuple(row) for row in _read_float_rows(path, 3)]


def _read_float_rows(path, width: int):
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.reader(fh):
            if not raw:
                continue
            try:
                vals = [float(v) for v in raw[:width]]
            except ValueError:
                continue  # header line
            if len(vals) == width:
                rows.append(vals)
    if not rows:
        raise CalibrationError(f"no numeric rows in {path}")
    return rows
