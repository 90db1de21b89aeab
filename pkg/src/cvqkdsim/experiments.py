"""Experiment orchestration: per-frame pipeline, batch runs and sweeps.

The per-frame pipeline mirrors what the networked protocol does: run the
receiver DSP, disclose a random subset of symbol indices, correct the global
phase, normalize to shot-noise units, estimate the channel and compute the
key rates.  Failed frames are recorded with ``dsp_ok = false`` and excluded
from summary means.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bench import SimulatedBench, simulate_frame
from .config import Config
from .errors import CvqkdError, DspError, EstimationError
from .estimation import estimate_channel, snu_normalize, worst_case_bounds
from .modulation import ModulationKind
from .rxdsp import correct_global_phase, receive_frame
from .skr import DetectorTrustModel, SkrInput, finite_size_rate, secret_key_rate

CSV_FIELDS = ["frame", "seed", "dsp_ok", "t_hat", "xi_hat", "xi_b", "v_el",
              "sigma0_sq", "n_mean", "m", "i_ab", "chi_be", "k_f", "k_s", "k_fse"]

_MEAN_FIELDS = ["t_hat", "xi_hat", "xi_b", "v_el", "sigma0_sq", "n_mean",
                "i_ab", "chi_be", "k_f", "k_s", "k_fse"]


@dataclass
class ExperimentReport:
    rows: list[dict]
    summary: dict


def make_frame_processor(config: Config, dump_dir=None):
    """Build the Bob-side per-frame pipeline used locally and over the wire.

    Returns a callable ``process(capture, request_symbols, meta) -> dict``
    where ``request_symbols(indices)`` performs the disclosure (locally or a
    network round trip) and ``meta`` carries frame seed, size and variance.
    """
    params = config.dsp
    detector = config.detector
    gaussian = config.modulation.kind is ModulationKind.GAUSSIAN

    def process(capture, request_symbols, meta) -> dict:
        report = {"dsp_ok": False}
        if not gaussian:
            report["skr_gaussian_approximation"] = True
        n_symbols = int(meta["n_symbols"])
        try:
            received = receive_frame(capture, params, n_symbols)
        except DspError as exc:
            report["error"] = str(exc)
            request_symbols([])
            return report

        rng = np.random.default_rng(int(meta["seed"]) ^ 0x5EED)
        count = math.ceil(config.frame.disclose_fraction * n_symbols)
        valid_idx = np.where(received.valid_mask)[0]
        count = min(count, len(valid_idx))
        idx = np.sort(rng.choice(valid_idx, size=count, replace=False))
        alice_sym = np.asarray(request_symbols(idx))

        try:
            y_norm, sigma0_sq, v_el_hat = snu_normalize(
                received.symbols[idx], received.elec_symbols,
                received.elec_shot_symbols)
            theta, y_norm = correct_global_phase(alice_sym, y_norm)
            est = estimate_channel(alice_sym, y_norm, float(meta["v_a"]),
                                   detector.efficiency, v_el_hat, sigma0_sq)
        except EstimationError as exc:
            report["error"] = str(exc)
            return report

        report.update({"dsp_ok": True, "t_hat": est.t_hat, "xi_hat": est.xi_hat,
                       "xi_b": est.xi_b, "v_el": est.v_el,
                       "sigma0_sq": est.sigma0_sq, "n_mean": est.n_mean,
                       "m": est.m, "theta": theta,
                       "f_beat_est": received.sync.f_beat,
                       "clock_ratio": received.sync.clock_ratio})
        try:
            skr_in = SkrInput(v_a=float(meta["v_a"]),
                              t=min(max(est.t_hat, 1e-12), 1.0),
                              xi=max(est.xi_hat, 0.0),
                              eta=detector.efficiency, v_el=est.v_el,
                              beta=config.skr.beta,
                              symbol_rate=params.symbol_rate,
                              model=DetectorTrustModel(config.skr.model))
            res = secret_key_rate(skr_in)
            bounds = worst_case_bounds(est, config.skr.epsilon)
            k_fse = finite_size_rate(skr_in, bounds, block_size=n_symbols,
                                     disclosed=est.m, eps_bar=config.skr.eps_bar)
            report.update({"i_ab": res.i_ab, "chi_be": res.chi_be,
                           "k_f": res.k_f, "k_s": res.k_s_reported,
                           "k_fse": k_fse})
        except (CvqkdError, ValueError) as exc:
            report["skr_error"] = str(exc)
        return report

    return process


def run_experiment(config: Config, n_frames: int, seed: int, out_dir=None,
                   parallel: int = 1, disclose: float | None = None,
                   dump_dir=None) -> ExperimentReport:
    """Simulate and estimate ``n_frames`` frames; deterministic per seed.

    Writes ``frames.csv`` (one row per frame) and ``summary.json`` when
    ``out_dir`` is given.
    """
    if disclose is not None:
        config = config.replace_value("frame.disclose_fraction", disclose)
    bench = SimulatedBench(config)
    processor = make_frame_processor(config, dump_dir=dump_dir)

    def one(i: int) -> dict:
        fseed = bench.frame_seed(seed, i)
        sim = simulate_frame(config, fseed)
        meta = {"seed": fseed, "n_symbols": len(sim.frame), "v_a": sim.frame.v_a,
                "n_mean": sim.frame.n_mean}
        report = processor(sim.capture, lambda idx: sim.frame.symbols[np.asarray(idx, dtype=np.int64)], meta)
        report["frame"] = i
        report["seed"] = fseed
        return report

    if parallel > 1 and n_frames > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(one, range(n_frames)))
    else:
        rows = [one(i) for i in range(n_frames)]

    summary = summarize(rows, config)
    if out_dir is not None:
        write_report(out_dir, rows, summary)
    return ExperimentReport(rows=rows, summary=summary)


def summarize(rows: list[dict], config: Config) -> dict:
    ok = [r for r in rows if r.get("dsp_ok")]
    means = {}
    for f in _MEAN_FIELDS:
        vals = [r[f] for r in ok if f in r and r[f] is not None]
        means[f"mean_{f}"] = float(np.mean(vals)) if vals else None
    return {"n_frames": len(rows), "n_ok": len(ok),
            "config_fingerprint": config.fingerprint(), **means}


def write_report(out_dir, rows: list[dict], summary: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "frames.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)


def sweep_parameter(config: Config, param_path: str, values, frames_per_point: int,
                    seed: int, out_dir=None) -> list[dict]:
    """Run ``frames_per_point`` frames per value of a numeric config field.

    The pilot-exclusion validation is relaxed for the sweep so that the
    degraded operating points (the interesting part of a sweep) can actually
    run; each point records mean/min/max of the Bob-side excess noise over
    the frames that passed the DSP.
    """
    base = config.replace_value("tx.enforce_pilot_exclusion", False)
    rows = []
    for j, value in enumerate(sorted(values)):
        cfg = base.replace_value(param_path, value)
        rep = run_experiment(cfg, frames_per_point, seed + 1000 * j)
        xi_bs = [r["xi_b"] for r in rep.rows if r.get("dsp_ok")]
        rows.append({
            "value": value,
            "n_ok": len(xi_bs),
            "n_failed": frames_per_point - len(xi_bs),
            "xi_b_mean": float(np.mean(xi_bs)) if xi_bs else float("nan"),
            "xi_b_min": float(np.min(xi_bs)) if xi_bs else float("nan"),
            "xi_b_max": float(np.max(xi_bs)) if xi_bs else float("nan"),
        })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "sweep.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["value", "n_ok", "n_failed",
                                                    "xi_b_mean", "xi_b_min",
                                                    "xi_b_max"])
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    return rows
