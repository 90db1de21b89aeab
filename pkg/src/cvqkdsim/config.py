"""TOML configuration loading, validation and round-tripping.

The file carries one section per subsystem.  Unknown keys are rejected with
their location; constraint violations name the rule that failed.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, asdict, replace

from .channel import ChannelParams, DetectorModel, transmittance_from_fiber
from .errors import ConfigError
from .modulation import ModulationScheme
from .skr import DetectorTrustModel
from .txdsp import DspParams

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


@dataclass(frozen=True)
class FrameSettings:
    n_symbols: int = 60000
    disclose_fraction: float = 0.5

    def __post_init__(self):
        if self.n_symbols <= 0:
            raise ConfigError("frame.n_symbols must be positive")
        if not 0.0 < self.disclose_fraction <= 1.0:
            raise ConfigError("frame.disclose_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SkrSettings:
    beta: float = 0.95
    model: str = "trusted-heterodyne"
    epsilon: float = 1e-10
    eps_bar: float = 1e-10

    def __post_init__(self):
        DetectorTrustModel(self.model)  # raises ValueError on bad name
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("skr.beta must lie in (0, 1]")
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError("skr.epsilon must lie in (0, 0.5)")


@dataclass(frozen=True)
class ProtocolSettings:
    host: str = "127.0.0.1"
    port: int = 9870
    auth: str = "hmac"
    key_path: str = ""
    timeout: float = 60.0


@dataclass(frozen=True)
class Config:
    """Validated experiment configuration."""

    modulation: ModulationScheme
    dsp: DspParams
    channel: ChannelParams
    detector: DetectorModel
    frame: FrameSettings = field(default_factory=FrameSettings)
    skr: SkrSettings = field(default_factory=SkrSettings)
    protocol: ProtocolSettings = field(default_factory=ProtocolSettings)

    def fingerprint(self) -> str:
        """Stable digest of every parameter, for session negotiation."""
        blob = json.dumps(_as_plain_dict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace_value(self, path: str, value) -> "Config":
        """New config with the dotted ``section.key`` set to ``value``."""
        section, _, key = path.partition(".")
        mapping = {
            "modulation": "modulation", "tx": "dsp", "rx": "dsp", "frame": "frame",
            "channel": "channel", "detector": "detector", "skr": "skr",
            "protocol": "protocol",
        }
        if section not in mapping or not key:
            raise ConfigError(f"unknown parameter path {path!r}")
        attr = mapping[section]
        target = getattr(self, attr)
        if not hasattr(target, key):
            raise ConfigError(f"unknown parameter path {path!r}")
        return replace(self, **{attr: replace(target, **{key: value})})

    def to_toml(self) -> str:
        return _emit_toml(_toml_dict(self))


_TX_KEYS = {
    "symbol_rate", "roll_off", "frequency_shift", "pilot_freq_1", "pilot_freq_2",
    "pilot_amp_1", "pilot_amp_2", "zc_length", "zc_root", "zc_amplitude",
    "dac_rate", "rrc_span", "guard_symbols", "zero_pad_head", "zero_pad_tail",
    "dac_fullscale", "enforce_pilot_exclusion",
}
_RX_KEYS = {"subframe_size", "pilot_filter_width", "phase_filter_length"}
_INT_FIELDS = {"zc_length", "zc_root", "rrc_span", "guard_symbols", "zero_pad_head",
               "zero_pad_tail", "subframe_size", "phase_filter_length", "order",
               "n_symbols", "noise_record_len", "lead_in", "tail_pad", "port"}


def _check_keys(section: str, data: dict, allowed: set):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _coerce(data: dict) -> dict:
    out = {}
    for k, v in data.items():
        if k in _INT_FIELDS and not isinstance(v, bool):
            out[k] = int(v)
        else:
            out[k] = v
    return out


def config_from_dict(raw: dict, source: str = "<dict>") -> Config:
    """Build and validate a Config from parsed TOML data."""
    known_sections = {"modulation", "frame", "tx", "rx", "channel", "detector",
                      "skr", "protocol"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"{source}: unknown section(s): {', '.join(sorted(unknown))}")

    mod_raw = dict(raw.get("modulation", {}))
    _check_keys("modulation", mod_raw, {"kind", "order", "nu", "variance"})
    mod_raw = _coerce(mod_raw)
    kind = mod_raw.pop("kind", "gaussian")
    modulation = ModulationScheme.from_name(kind, **mod_raw)

    tx_raw = dict(raw.get("tx", {}))
    _check_keys("tx", tx_raw, _TX_KEYS)
    rx_raw = dict(raw.get("rx", {}))
    _check_keys("rx", rx_raw, _RX_KEYS)
    adc_rate = raw.get("detector", {}).get("adc_rate")
    dsp_kwargs = _coerce({**tx_raw, **rx_raw})
    if adc_rate is not None:
        dsp_kwargs["adc_rate"] = adc_rate
    try:
        dsp = DspParams(**dsp_kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{source}: [tx]/[rx]: {exc}") from None

    ch_raw = dict(raw.get("channel", {}))
    _check_keys("channel", ch_raw, {"transmittance", "excess_noise", "f_beat",
                                    "clock_skew", "f_beat_drift", "fiber_length_km",
                                    "attenuation_db_per_km", "connector_loss_db"})
    if "fiber_length_km" in ch_raw:
        if "transmittance" in ch_raw:
            raise ConfigError(f"{source}: [channel]: give either transmittance or "
                              "fiber_length_km, not both")
        ch_raw["transmittance"] = transmittance_from_fiber(
            ch_raw.pop("fiber_length_km"),
            ch_raw.pop("attenuation_db_per_km", 0.2),
            ch_raw.pop("connector_loss_db", 0.0))
    channel = ChannelParams(**_coerce(ch_raw))

    det_raw = dict(raw.get("detector", {}))
    _check_keys("detector", det_raw, {"efficiency", "elec_noise", "adc_rate",
                                      "analog_bandwidth", "shot_noise_raw",
                                      "noise_record_len", "lead_in", "tail_pad"})
    detector = DetectorModel(**_coerce(det_raw))

    frame_raw = _coerce(dict(raw.get("frame", {})))
    _check_keys("frame", frame_raw, {"n_symbols", "disclose_fraction"})
    frame = FrameSettings(**frame_raw)

    skr_raw = dict(raw.get("skr", {}))
    _check_keys("skr", skr_raw, {"beta", "model", "epsilon", "eps_bar"})
    try:
        skr = SkrSettings(**skr_raw)
    except ValueError as exc:
        raise ConfigError(f"{source}: [skr]: {exc}") from None

    proto_raw = _coerce(dict(raw.get("protocol", {})))
    _check_keys("protocol", proto_raw, {"host", "port", "auth", "key_path", "timeout"})
    protocol = ProtocolSettings(**proto_raw)

    return Config(modulation=modulation, dsp=dsp, channel=channel,
                  detector=detector, frame=frame, skr=skr, protocol=protocol)


def load_config(path) -> Config:
    """Parse and validate a TOML configuration file."""
    with open(path, "rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: TOML parse error: {exc}") from None
    return config_from_dict(raw, source=str(path))


def loads_config(text: str) -> Config:
    try:
        raw = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from None
    return config_from_dict(raw)


def _as_plain_dict(cfg: Config) -> dict:
    d = {
        "modulation": {**asdict(cfg.modulation)},
        "dsp": asdict(cfg.dsp),
        "channel": asdict(cfg.channel),
        "detector": asdict(cfg.detector),
        "frame": asdict(cfg.frame),
        "skr": asdict(cfg.skr),
        "protocol": asdict(cfg.protocol),
    }
    d["modulation"]["kind"] = cfg.modulation.kind.value
    return d


def _toml_dict(cfg: Config) -> dict:
    dsp = asdict(cfg.dsp)
    tx = {k: v for k, v in dsp.items() if k in _TX_KEYS}
    rx = {k: v for k, v in dsp.items() if k in _RX_KEYS}
    mod = asdict(cfg.modulation)
    mod["kind"] = cfg.modulation.kind.value
    return {
        "modulation": mod,
        "frame": asdict(cfg.frame),
        "tx": tx,
        "rx": rx,
        "channel": asdict(cfg.channel),
        "detector": asdict(cfg.detector),
        "skr": asdict(cfg.skr),
        "protocol": asdict(cfg.protocol),
    }


def _emit_toml(data: dict) -> str:
    lines = []
    for section, body in data.items():
        lines.append(f"[{section}]")
        for k, v in body.items():
            if isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v!r}")
        lines.append("")
    return "\n".join(lines)


def default_config() -> Config:
    """Configuration with the bench-marked default parameter set."""
    return config_from_dict({})
