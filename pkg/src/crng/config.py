"""Scenario configuration files: flat `key = value` text with JSON-style
arrays, `#` comments, hard errors on unknown or duplicate keys."""

from __future__ import annotations

import json
import re

from .cirproc import ProcParams
from .errors import ParseError, ValidationError
from .protocol import CrngParams, NoiseKnobs
from .radio import LdeParams
from .sim import Scenario

_DIST_RE = re.compile(r"^(uniform|normal)\s*\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)$")

# key -> (type tag, default); None default means "not set"
KEYS = {
    "seed": ("int", None),
    "anchors": ("array", None),
    "initiator_positions": ("array", None),
    "trajectory": ("array", None),
    "segment_speeds": ("array", None),
    "speed_mps": ("float", 0.5),
    "rate_hz": ("float", 8.0),
    "trials_per_position": ("int", 1),
    "environment": ("str", "none"),
    "schemes": ("array", ["crng_threshold", "crng_ss"]),
    "compensation": ("str", "full"),
    "clock_offsets_ppm": ("offsets", None),
    "noise_sigma": ("float", 0.0),
    "tx_jitter_ns": ("float", 0.0),
    "rx_jitter_ns": ("float", 0.0),
    "cfo_noise_ppm": ("float", 0.05),
    "phr_error_rate": ("float", 0.003),
    "t_resp_us": ("float", 800.0),
    "t_id_ns": ("float", 128.0),
    "t_det_default_us": ("float", 560.0),
    "antenna_tx_delay_ns": ("float", 0.0),
    "sstwr_t_resp_us": ("float", 320.0),
    "upsample_factor": ("int", 30),
    "rearrange_threshold": ("float", 0.14),
    "noise_window": ("int", 228),
    "toa_threshold_multiplier": ("float", 11.0),
    "ss_iterations": ("int", 3),
    "guard_offset": ("int", 480),
    "eta_floor": ("float", 0.05),
    "cal_offset_threshold_m": ("float", 0.0),
    "cal_offset_ss_m": ("float", 0.0),
    "max_range_m": ("float", 100.0),
    "outlier_m": ("float", 10.0),
    "bandwidth_mhz": ("float", 900.0),
    "trim_slope_ppm": ("float", -1.48),
    "lde_k": ("float", 12.0),
    "nlls_tol": ("float", 1e-6),
    "nlls_max_iter": ("int", 100),
}

REQUIRED = ("seed", "anchors")


def _parse_value(key: str, text: str, lineno: int, column: int):
    tag = KEYS[key][0]
    if tag == "offsets":
        m = _DIST_RE.match(text.strip().strip('"'))
        if m:
            return (m.group(1), float(m.group(2)), float(m.group(3)))
        tag = "array"
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        if tag == "str":
            return text.strip()
        raise ParseError(f"bad value for {key}: {exc.msg}", lineno, column + exc.colno) from None
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"{key} must be an integer", lineno, column)
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{key} must be a number", lineno, column)
        return float(value)
    if tag == "str":
        return str(value)
    if tag == "array" and not isinstance(value, list):
        raise ParseError(f"{key} must be an array", lineno, column)
    return value


def parse_scenario_text(text: str) -> Scenario:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno, 1)
        key_part, value_part = line.split("=", 1)
        key = key_part.strip()
        column = len(key_part) + 2
        if key not in KEYS:
            raise ParseError(f"unknown key {key!r}", lineno, 1)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", lineno, 1)
        if not value_part.strip():
            raise ParseError(f"missing value for {key!r}", lineno, column)
        values[key] = _parse_value(key, value_part.strip(), lineno, column)

    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ValidationError(f"missing required keys: {missing}")
    cfg = {k: (values[k] if k in values else default) for k, (_, default) in KEYS.items()}
    return build_scenario(cfg)


def parse_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario_text(fh.read())


def build_scenario(cfg: dict) -> Scenario:
    anchors = cfg["anchors"]
    try:
        crng = CrngParams(
            n_responders=len(anchors),
            t_resp=cfg["t_resp_us"] * 1e-6,
            t_id=cfg["t_id_ns"] * 1e-9,
            t_det_default=cfg["t_det_default_us"] * 1e-6,
            antenna_tx_delay=cfg["antenna_tx_delay_ns"] * 1e-9,
        )
        proc = ProcParams(
            upsample_factor=cfg["upsample_factor"],
            rearrange_threshold=cfg["rearrange_threshold"],
            noise_window=cfg["noise_window"],
            toa_threshold_multiplier=cfg["toa_threshold_multiplier"],
            ss_iterations=cfg["ss_iterations"],
            guard_offset=cfg["guard_offset"],
            eta_floor=cfg["eta_floor"],
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    knobs = NoiseKnobs(
        cir_sigma=cfg["noise_sigma"],
        tx_jitter_ns=cfg["tx_jitter_ns"],
        rx_jitter_ns=cfg["rx_jitter_ns"],
        cfo_noise_ppm=cfg["cfo_noise_ppm"],
        phr_error_rate=cfg["phr_error_rate"],
    )
    return Scenario(
        anchors=anchors,
        seed=cfg["seed"],
        trials_per_position=cfg["trials_per_position"],
        initiator_positions=cfg["initiator_positions"],
        trajectory=cfg["trajectory"],
        segment_speeds=cfg["segment_speeds"],
        speed_mps=cfg["speed_mps"],
        rate_hz=cfg["rate_hz"],
        environment=cfg["environment"],
        schemes=tuple(cfg["schemes"]),
        compensation=cfg["compensation"],
        clock_offsets=cfg["clock_offsets_ppm"],
        knobs=knobs,
        crng=crng,
        proc=proc,
        sstwr_t_resp=cfg["sstwr_t_resp_us"] * 1e-6,
        cal_offsets={
            "crng_threshold": cfg["cal_offset_threshold_m"],
            "crng_ss": cfg["cal_offset_ss_m"],
        },
        max_range_m=cfg["max_range_m"],
        outlier_m=cfg["outlier_m"],
        bandwidth_mhz=cfg["bandwidth_mhz"],
        trim_slope_ppm=cfg["trim_slope_ppm"],
        lde=LdeParams(threshold_factor=cfg["lde_k"]),
        nlls_tol=cfg["nlls_tol"],
        nlls_max_iter=cfg["nlls_max_iter"],
    )
