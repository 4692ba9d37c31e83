"""Ranging exchanges: plain/drift-compensated SS-TWR, concurrent ranging with
response-position modulation, and the local TX-uncertainty compensation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import LOS_PROFILE, MultipathProfile, path_amplitude, time_of_flight
from .constants import CIR_LEN, CIR_SAMPLE_PERIOD_S, SPEED_OF_LIGHT, TICK_SECONDS, TIMESTAMP_MASK
from .errors import NoDetectablePath, TrimRangeExceeded
from .radio import (
    Arrival,
    Cir,
    Clock,
    ClockModel,
    LdeParams,
    TRIM_MAX,
    TRIM_MIN,
    capture_cir,
    forward_delta_ticks,
    mask_ticks,
    measure_cfo,
    quantize_ticks,
    rx_ticks,
)

CIR_SPAN_S = CIR_LEN * CIR_SAMPLE_PERIOD_S  # ~1017.6 ns
MAX_RESPONDERS = 7
# Local processing margin between POLL RX and the start of clock detuning.
POLL_PROCESSING_S = 0.0
# Margin the initiator gives itself before the scheduled POLL.
POLL_PREP_S = 100e-6


@dataclass(frozen=True)
class CrngParams:
    """Concurrent-ranging protocol constants."""

    n_responders: int
    t_resp: float = 800e-6
    t_id: float = 128e-9
    t_det_default: float = 560e-6
    antenna_tx_delay: float = 0.0

    def __post_init__(self):
        if not (1 <= self.n_responders <= MAX_RESPONDERS):
            raise ValueError(
                f"n_responders {self.n_responders} outside 1..{MAX_RESPONDERS} "
                f"(the CIR span accommodates at most {MAX_RESPONDERS} responders)"
            )
        if self.t_id * self.n_responders >= CIR_SPAN_S:
            raise ValueError("t_id * n_responders must fit the CIR span")
        if self.t_det_default >= self.t_resp:
            raise ValueError("t_det_default must be below t_resp")

    def response_delay(self, responder_index: int) -> float:
        """Configured POLL-RX-to-RESPONSE-TX delay of responder i (1-based)."""
        return self.t_resp + (responder_index - 1) * self.t_id + self.antenna_tx_delay


@dataclass
class NoiseKnobs:
    """Simulation honesty boundary: every non-ideal effect is a knob here."""

    cir_sigma: float = 0.0  # complex-noise per-component std, 1 m-amplitude units
    tx_jitter_ns: float = 0.0  # per-responder TX-instant jitter
    rx_jitter_ns: float = 0.0  # RX timestamping jitter
    cfo_noise_ppm: float = 0.05
    phr_error_rate: float = 0.003


IDEAL_KNOBS = NoiseKnobs(cir_sigma=0.0, tx_jitter_ns=0.0, rx_jitter_ns=0.0,
                         cfo_noise_ppm=0.0, phr_error_rate=0.0)


@dataclass
class Node:
    """A radio node: position plus crystal state (trim persists across
    exchanges)."""

    position: np.ndarray
    clock: ClockModel = field(default_factory=ClockModel)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


@dataclass
class ExchangeRecord:
    """One concurrent-ranging round as seen by the initiator."""

    poll_tx_ts: int  # 40-bit ticks
    cir: Cir
    params: CrngParams
    ground_truth_m: list[float] | None = None
    exchange_id: int = -1

    def __post_init__(self):
        self.poll_tx_ts = mask_ticks(self.poll_tx_ts)
        if self.cir.fp_valid:
            span = forward_delta_ticks(self.cir.fp_ticks, self.poll_tx_ts) * TICK_SECONDS
            limit = 2 * self.params.t_resp + self.params.n_responders * self.params.t_id + 10e-6
            if not (0.0 < span < limit):
                raise ValueError(f"first-path ticks {span * 1e6:.1f} us after POLL, limit {limit * 1e6:.1f} us")


def compensate_tx(
    epsilon_s: float, t_det_default_s: float, trim_slope_ppm: float = -1.48
) -> tuple[int, float]:
    """Trim step and detuning interval canceling a known TX-quantization error.

    epsilon is the (non-positive) scheduling error in seconds. The step is
    the rounded ratio of |epsilon| to the drift a single trim step accrues
    over the default detuning interval; the interval is then recomputed so
    the integer step compensates exactly. A zero step means the error is too
    small to compensate and (0, 0.0) is returned.
    """
    if epsilon_s > 0.0:
        raise ValueError("epsilon must be <= 0 (TX quantization is never late)")
    slope = abs(trim_slope_ppm) * 1e-6
    step = int(np.floor(abs(epsilon_s) / (slope * t_det_default_s) + 0.5))
    if step == 0:
        return 0, 0.0
    return step, abs(epsilon_s) / (slope * step)


def cfo_adjust(
    measured_cfo_ppm: float,
    trim_slope_ppm: float = -1.48,
    current_index: int = 15,
) -> int:
    """Trim-index delta that best cancels a measured CFO.

    Positive CFO means the local clock is slower, so the index must move in
    the direction that speeds it up (negative for the default slope).
    """
    if abs(measured_cfo_ppm) > 50.0:
        raise ValueError("CFO reading outside plausible range")
    ratio = -measured_cfo_ppm / abs(trim_slope_ppm)
    delta = int(np.floor(ratio + 0.5)) if ratio >= 0 else -int(np.floor(-ratio + 0.5))
    target = current_index + delta
    if not (TRIM_MIN <= target <= TRIM_MAX):
        raise TrimRangeExceeded(f"trim {current_index}{delta:+d} leaves [{TRIM_MIN}, {TRIM_MAX}]")
    return delta


def sstwr(
    initiator: Node,
    responder: Node,
    t_resp: float,
    drift_compensated: bool,
    rng: np.random.Generator,
    knobs: NoiseKnobs = IDEAL_KNOBS,
) -> float:
    """Single-sided two-way ranging against one isolated responder.

    POLL/RESPONSE timestamps t1..t4; the responder embeds its actual t2, t3
    so TX quantization cancels. With drift compensation the measured response
    delay is rescaled by the CFO read during RESPONSE reception.
    """
    clk_i = Clock(initiator.clock, phase_ticks=float(rng.integers(0, TIMESTAMP_MASK + 1)))
    clk_r = Clock(responder.clock, phase_ticks=float(rng.integers(0, TIMESTAMP_MASK + 1)))
    tof = time_of_flight(initiator.position, responder.position)
    jit = knobs.rx_jitter_ns * 1e-9

    t1 = quantize_ticks(round(clk_i.local_ticks_at(0.0) + POLL_PREP_S / TICK_SECONDS))
    g1 = clk_i.global_at_local_ticks(t1)
    g2 = g1 + tof
    t2 = rx_ticks(clk_r, g2, jitter_s=jit, rng=rng)
    t3 = quantize_ticks(t2 + round(t_resp / TICK_SECONDS))
    g3 = clk_r.global_at_local_ticks(t3)
    if knobs.tx_jitter_ns > 0.0:
        g3 += rng.normal(0.0, knobs.tx_jitter_ns * 1e-9)
    g4 = g3 + tof
    t4 = rx_ticks(clk_i, g4, jitter_s=jit, rng=rng)

    resp_meas = float(t3 - t2)
    if drift_compensated:
        cfo_ppm = measure_cfo(initiator.clock, responder.clock, knobs.cfo_noise_ppm, rng)
        resp_meas /= 1.0 + cfo_ppm * 1e-6
    tof_hat = ((t4 - t1) - resp_meas) / 2.0 * TICK_SECONDS
    return SPEED_OF_LIGHT * tof_hat


@dataclass
class ExchangeDebug:
    """Per-responder internals exposed for tests and diagnostics."""

    eps_ticks: list
    tx_global: list
    ideal_tx_global: list
    skipped: list


def crng_exchange(
    initiator: Node,
    responders: list[Node],
    params: CrngParams,
    compensation: str,
    rng: np.random.Generator,
    profiles: list[MultipathProfile] | None = None,
    knobs: NoiseKnobs = IDEAL_KNOBS,
    bandwidth_mhz: float = 900.0,
    lde_params: LdeParams | None = None,
    debug: ExchangeDebug | None = None,
) -> ExchangeRecord:
    """One broadcast POLL and the concurrent responses, captured as a CIR.

    compensation="full" applies CFO adjustment followed by detune-based TX
    compensation at every responder; "none" leaves the raw 8 ns quantization.
    A responder whose compensation would push the trim register past its
    rails skips the round entirely rather than compensating partially.
    """
    if compensation not in ("none", "full"):
        raise ValueError("compensation must be 'none' or 'full'")
    if len(responders) != params.n_responders:
        raise ValueError("responder list does not match params.n_responders")
    profiles = profiles or [LOS_PROFILE] * len(responders)

    clk_i = Clock(initiator.clock, phase_ticks=float(rng.integers(0, TIMESTAMP_MASK + 1)))
    clk_resp = [
        Clock(r.clock, phase_ticks=float(rng.integers(0, TIMESTAMP_MASK + 1)))
        for r in responders
    ]

    t1 = quantize_ticks(round(clk_i.local_ticks_at(0.0) + POLL_PREP_S / TICK_SECONDS))
    g1 = clk_i.global_at_local_ticks(t1)

    arrivals = []
    truths = []
    jit = knobs.rx_jitter_ns * 1e-9
    for i, (resp, clk_r, prof) in enumerate(zip(responders, clk_resp, profiles), start=1):
        dist = float(np.linalg.norm(initiator.position - resp.position))
        truths.append(dist)
        tof = dist / SPEED_OF_LIGHT
        g2 = g1 + tof
        t2 = rx_ticks(clk_r, g2, jitter_s=jit, rng=rng)

        if compensation == "full":
            cfo = measure_cfo(resp.clock, initiator.clock, knobs.cfo_noise_ppm, rng)
            try:
                delta = cfo_adjust(cfo, resp.clock.trim_slope_ppm, resp.clock.trim_index)
            except TrimRangeExceeded:
                if debug is not None:
                    debug.skipped.append(i)
                continue
            if delta:
                resp.clock.set_trim(resp.clock.trim_index + delta)
                clk_r.set_rate_from(g2, resp.clock.rate)

        desired = t2 + round(params.response_delay(i) / TICK_SECONDS)
        t3 = quantize_ticks(desired)
        eps_ticks = t3 - desired  # in (-512, 0]
        # reference for the ideal (unquantized, undetuned) schedule
        ideal_g = clk_r.global_at_local_ticks(desired)

        if compensation == "full" and eps_ticks < 0:
            step, t_det = compensate_tx(
                eps_ticks * TICK_SECONDS, params.t_det_default, resp.clock.trim_slope_ppm
            )
            if step:
                detune_index = resp.clock.trim_index + step
                if not (TRIM_MIN <= detune_index <= TRIM_MAX):
                    if debug is not None:
                        debug.skipped.append(i)
                    continue
                clk_r.add_detune_window(
                    g2 + POLL_PROCESSING_S, resp.clock.rate_at_trim(detune_index), t_det
                )

        g3 = clk_r.global_at_local_ticks(t3)
        if knobs.tx_jitter_ns > 0.0:
            g3 += rng.normal(0.0, knobs.tx_jitter_ns * 1e-9)
        arrivals.append(Arrival(g3 + tof, path_amplitude(dist), prof))
        if debug is not None:
            debug.eps_ticks.append(eps_ticks)
            debug.tx_global.append(g3)
            debug.ideal_tx_global.append(ideal_g)

    if not arrivals:
        raise NoDetectablePath("no responder transmitted")

    cir = capture_cir(
        arrivals,
        clk_i,
        knobs.cir_sigma,
        rng,
        bandwidth_mhz=bandwidth_mhz,
        lde_params=lde_params,
        rx_jitter_s=jit,
    )
    if knobs.phr_error_rate > 0.0 and rng.uniform() < knobs.phr_error_rate:
        cir.fp_valid = False

    return ExchangeRecord(
        poll_tx_ts=mask_ticks(t1), cir=cir, params=params, ground_truth_m=truths
    )
