"""Command-line entry points: experiments, sweeps, key rates, calibration fits
and the networked Alice/Bob endpoints.

Exit codes: 0 success, 2 configuration error, 3 protocol abort.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import calibration
from .channel import transmittance_from_fiber
from .config import default_config, load_config
from .errors import CalibrationError, ConfigError, ProtocolError
from .estimation import EstimationResult, worst_case_bounds
from .skr import DetectorTrustModel, SkrInput, finite_size_rate, secret_key_rate


def _parse_values(spec: str) -> list[float]:
    """Either a comma list ("0.1,0.2") or "start:stop:count"."""
    if ":" in spec:
        start, stop, count = spec.split(":")
        return list(np.linspace(float(start), float(stop), int(count)))
    return [float(v) for v in spec.split(",")]


def _load(args) -> "Config":
    if args.config:
        return load_config(args.config)
    return default_config()


def _cmd_run(args) -> int:
    from .experiments import run_experiment
    config = _load(args)
    report = run_experiment(config, args.frames, args.seed, out_dir=args.out,
                            parallel=args.parallel, disclose=args.disclose,
                            dump_dir=args.dump_dir)
    print(json.dumps(report.summary, indent=1))
    return 0


def _cmd_sweep(args) -> int:
    from .experiments import sweep_parameter
    config = _load(args)
    rows = sweep_parameter(config, args.param, _parse_values(args.values),
                           args.frames_per_point, args.seed, out_dir=args.out)
    for row in rows:
        print(f"{row['value']:.6g}, xi_b mean {row['xi_b_mean']:.5g} "
              f"[{row['xi_b_min']:.5g}, {row['xi_b_max']:.5g}], "
              f"failed {row['n_failed']}")
    return 0


def _skr_input(args, t: float) -> SkrInput:
    return SkrInput(v_a=args.v_a, t=t, xi=args.xi, eta=args.eta, v_el=args.v_el,
                    beta=args.beta, symbol_rate=args.symbol_rate,
                    model=DetectorTrustModel(args.model))


def _finite_size(args, inp: SkrInput) -> float:
    m = int(args.block_size * args.disclose)
    est = EstimationResult(t_hat=inp.t, xi_hat=inp.xi,
                           xi_b=inp.eta * inp.t * inp.xi / 2.0,
                           v_el=inp.v_el, sigma0_sq=1.0, n_mean=inp.v_a / 2,
                           m=m, v_a=inp.v_a, eta=inp.eta)
    bounds = worst_case_bounds(est, args.epsilon)
    return finite_size_rate(inp, bounds, args.block_size, m, eps_bar=args.epsilon)


def _cmd_skr(args) -> int:
    if args.distance_sweep:
        writer = sys.stdout
        if args.out:
            writer = open(args.out, "w")
        try:
            writer.write("distance_km,k_s_bits_per_s,k_fse_bits_per_s\n")
            for d in _parse_values(args.distance_sweep):
                t = transmittance_from_fiber(d, args.attenuation, args.connector_db)
                inp = _skr_input(args, t)
                res = secret_key_rate(inp)
                k_fse = _finite_size(args, inp)
                writer.write(f"{d:.6g},{res.k_s_reported:.6g},{k_fse:.6g}\n")
        finally:
            if args.out:
                writer.close()
        return 0
    inp = _skr_input(args, args.t)
    res = secret_key_rate(inp)
    out = {"i_ab": res.i_ab, "chi_be": res.chi_be, "k_f": res.k_f,
           "k_f_reported": res.k_f_reported, "k_s": res.k_s,
           "k_s_reported": res.k_s_reported,
           "k_fse": _finite_size(args, inp)}
    print(json.dumps(out, indent=1))
    return 0


def _cmd_calibrate_fit(args) -> int:
    if args.kind == "r-conv":
        fit = calibration.fit_r_conv(calibration.read_pairs_csv(args.input))
    else:
        fit = calibration.fit_eta(calibration.read_eta_csv(args.input),
                                  monitor_gain=args.monitor_gain,
                                  wavelength=args.wavelength)
    print(fit.to_json())
    return 0


def _cmd_serve_alice(args) -> int:
    from .protocol import serve_alice
    config = _load(args)
    serve_alice(config, args.host or config.protocol.host,
                args.port or config.protocol.port)
    return 0


def _cmd_run_bob(args) -> int:
    from .experiments import summarize, write_report
    from .protocol import run_bob
    config = _load(args)
    reports = run_bob(config, args.host or config.protocol.host,
                      args.port or config.protocol.port, args.frames, args.seed)
    summary = summarize(reports, config)
    if args.out:
        write_report(args.out, reports, summary)
    print(json.dumps(summary, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvqkdsim",
                                     description="CV-QKD simulation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate frames and estimate parameters")
    run.add_argument("--config", help="TOML configuration file")
    run.add_argument("--frames", type=int, default=5)
    run.add_argument("--seed", type=int, default=1234)
    run.add_argument("--out", help="output directory for frames.csv / summary.json")
    run.add_argument("--parallel", type=int, default=1)
    run.add_argument("--disclose", type=float, default=None,
                     help="override the disclosed symbol fraction")
    run.add_argument("--dump-dir", default=None,
                     help="dump intermediate DSP stages for debugging")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="sweep one numeric config parameter")
    sweep.add_argument("--config")
    sweep.add_argument("--param", required=True,
                       help="dotted path, e.g. tx.roll_off")
    sweep.add_argument("--values", required=True,
                       help="comma list or start:stop:count")
    sweep.add_argument("--frames-per-point", type=int, default=5)
    sweep.add_argument("--seed", type=int, default=1234)
    sweep.add_argument("--out")
    sweep.set_defaults(func=_cmd_sweep)

    skr = sub.add_parser("skr", help="secret key rate from physical parameters")
    skr.add_argument("--v-a", type=float, required=True)
    skr.add_argument("--t", type=float, default=1.0)
    skr.add_argument("--xi", type=float, default=0.0)
    skr.add_argument("--eta", type=float, default=1.0)
    skr.add_argument("--v-el", type=float, default=0.0)
    skr.add_argument("--beta", type=float, default=0.95)
    skr.add_argument("--model", default="trusted-heterodyne",
                     choices=[m.value for m in DetectorTrustModel])
    skr.add_argument("--symbol-rate", type=float, default=100e6)
    skr.add_argument("--block-size", type=int, default=10 ** 6)
    skr.add_argument("--disclose", type=float, default=0.5)
    skr.add_argument("--epsilon", type=float, default=1e-10)
    skr.add_argument("--distance-sweep",
                     help="start:stop:count in km; emits CSV instead of JSON")
    skr.add_argument("--attenuation", type=float, default=0.2,
                     help="dB/km for the distance sweep")
    skr.add_argument("--connector-db", type=float, default=0.0)
    skr.add_argument("--out")
    skr.set_defaults(func=_cmd_skr)

    cal = sub.add_parser("calibrate-fit", help="through-origin calibration fits")
    cal.add_argument("--kind", choices=["r-conv", "eta"], required=True)
    cal.add_argument("--input", required=True, help="CSV input file")
    cal.add_argument("--monitor-gain", type=float, default=10e3,
                     help="monitoring gain in V/A (eta fit)")
    cal.add_argument("--wavelength", type=float, default=1550e-9)
    cal.set_defaults(func=_cmd_calibrate_fit)

    srv = sub.add_parser("serve-alice", help="serve the transmitter endpoint")
    srv.add_argument("--config")
    srv.add_argument("--host")
    srv.add_argument("--port", type=int)
    srv.set_defaults(func=_cmd_serve_alice)

    bob = sub.add_parser("run-bob", help="run the receiver endpoint")
    bob.add_argument("--config")
    bob.add_argument("--host")
    bob.add_argument("--port", type=int)
    bob.add_argument("--frames", type=int, default=5)
    bob.add_argument("--seed", type=int, default=1234)
    bob.add_argument("--out")
    bob.set_defaults(func=_cmd_run_bob)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CalibrationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
