"""ToA estimates plus protocol timing -> per-responder distances."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .cirproc import OUT_OF_CHUNK, RearrangedCir, ToaEstimate
from .constants import SPEED_OF_LIGHT, TICK_SECONDS, TICKS_PER_CIR_SAMPLE
from .errors import InsufficientSamples, InvalidToa
from .protocol import CrngParams, ExchangeRecord
from .radio import forward_delta_ticks, mask_ticks

PHR_ERROR = "phr_error"
DEFAULT_MAX_RANGE_M = 100.0
CAL_CLAMP_M = 0.3
CAL_WARN_M = 0.2
MIN_CAL_SAMPLES = 10


@dataclass(frozen=True)
class DistanceEstimate:
    responder_index: int
    distance_m: float = float("nan")
    valid: bool = False
    raw_tof_ns: float = float("nan")
    rejection_reason: str | None = None


def rx_timestamp_of(r: RearrangedCir, toa: ToaEstimate) -> int:
    """RESPONSE RX timestamp (40-bit ticks) for a ToA index, derived from the
    first-path baseline: fp_ticks minus the index gap converted to ticks."""
    if not toa.valid:
        raise InvalidToa(f"responder {toa.responder_index}: {toa.rejection_reason}")
    delta_up = r.fp_index_up - toa.toa_index_up
    delta_ticks = round(delta_up * TICKS_PER_CIR_SAMPLE / r.upsample_factor)
    return mask_ticks(r.fp_ticks - delta_ticks)


def distance(
    record: ExchangeRecord,
    r: RearrangedCir,
    toa: ToaEstimate,
    params: CrngParams,
    cal_offset_m: float = 0.0,
    max_range_m: float = DEFAULT_MAX_RANGE_M,
) -> DistanceEstimate:
    """Decode one responder's distance from its ToA estimate.

    Round-trip time is the wrap-safe gap between the derived RESPONSE RX
    timestamp and the POLL TX timestamp; the configured response delay for
    this responder is subtracted and the remainder halved.
    """
    i = toa.responder_index
    if not r.fp_valid:
        return DistanceEstimate(i, rejection_reason=PHR_ERROR)
    if not toa.valid:
        return DistanceEstimate(i, rejection_reason=toa.rejection_reason)
    rx = rx_timestamp_of(r, toa)
    t_rtt = forward_delta_ticks(rx, record.poll_tx_ts) * TICK_SECONDS
    tof = (t_rtt - params.response_delay(i)) / 2.0
    d = SPEED_OF_LIGHT * tof + cal_offset_m
    if not (0.0 < d < max_range_m):
        return DistanceEstimate(i, distance_m=d, raw_tof_ns=tof * 1e9,
                                rejection_reason=OUT_OF_CHUNK)
    return DistanceEstimate(i, distance_m=d, valid=True, raw_tof_ns=tof * 1e9)


def calibrate_offset(samples: list[tuple[float, float]]) -> float:
    """Constant additive offset from (estimate, truth) pairs.

    Mean of truth - estimate, clamped to +-0.3 m; values beyond +-0.2 m are
    suspicious for this hardware model and produce a warning.
    """
    if len(samples) < MIN_CAL_SAMPLES:
        raise InsufficientSamples(f"need >= {MIN_CAL_SAMPLES} samples, got {len(samples)}")
    est, truth = np.asarray(samples, dtype=float).T
    offset = float(np.mean(truth - est))
    if abs(offset) > CAL_WARN_M:
        warnings.warn(f"calibration offset {offset:.3f} m outside +-{CAL_WARN_M} m", RuntimeWarning)
    return float(np.clip(offset, -CAL_CLAMP_M, CAL_CLAMP_M))
