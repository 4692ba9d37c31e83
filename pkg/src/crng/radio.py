"""Timing hardware model: clocks with trim control, TX quantization,
RX timestamping, CIR capture, and carrier-frequency-offset measurement.

All protocol timing flows through 40-bit tick counters (~15.65 ps units).
Internally the library keeps unwrapped integer ticks; the 40-bit mask is
applied only at device boundaries (records, reported timestamps).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import MultipathProfile, _spectral_kernel, pulse_edge_offset_samples
from .constants import (
    CIR_LEN,
    CIR_TARGET_PEAK,
    FP_PLACEMENT_INDEX,
    INT16_MAX,
    TICK_SECONDS,
    TICKS_PER_CIR_SAMPLE,
    TIMESTAMP_MASK,
    TX_QUANTUM_TICKS,
)
from .errors import NoDetectablePath, PastDeadline

TRIM_NEUTRAL = 15
TRIM_MIN, TRIM_MAX = 0, 31
DEFAULT_TRIM_SLOPE_PPM = -1.48


def mask_ticks(ticks: int) -> int:
    """Fold an unwrapped tick count onto the 40-bit device counter."""
    return int(ticks) & TIMESTAMP_MASK


def forward_delta_ticks(later: int, earlier: int) -> int:
    """Smallest forward interval from `earlier` to `later`, modulo 2^40.

    Valid for true intervals below 2^39 ticks (~8.6 s).
    """
    return (int(later) - int(earlier)) & TIMESTAMP_MASK


@dataclass(frozen=True)
class RadioTimestamp:
    """40-bit wrap-around timestamp in device ticks."""

    ticks: int

    def __post_init__(self):
        object.__setattr__(self, "ticks", mask_ticks(self.ticks))

    def seconds(self) -> float:
        return self.ticks * TICK_SECONDS

    def __sub__(self, other: "RadioTimestamp") -> int:
        """Forward interval in ticks (wrap-safe)."""
        return forward_delta_ticks(self.ticks, other.ticks)

    def __add__(self, ticks: int) -> "RadioTimestamp":
        return RadioTimestamp(self.ticks + int(ticks))


def quantize_ticks(ticks):
    """Clear the 9 least-significant bits (int or ndarray)."""
    return ticks - (ticks & (TX_QUANTUM_TICKS - 1))


def quantize_tx(desired: RadioTimestamp) -> RadioTimestamp:
    """TX scheduling granularity: the radio ignores the low 9 timestamp bits.

    The resulting error, result - desired, lies in (-512, 0] ticks.
    """
    return RadioTimestamp(quantize_ticks(desired.ticks))


@dataclass
class ClockModel:
    """Crystal state of one node: ppm offset plus trim register."""

    base_offset_ppm: float = 0.0
    trim_index: int = TRIM_NEUTRAL
    trim_slope_ppm: float = DEFAULT_TRIM_SLOPE_PPM

    def __post_init__(self):
        self.set_trim(self.trim_index)

    @property
    def rate(self) -> float:
        """Local-seconds per global-second."""
        return self.rate_at_trim(self.trim_index)

    def rate_at_trim(self, trim_index: int) -> float:
        r = (
            1.0
            + self.base_offset_ppm * 1e-6
            + self.trim_slope_ppm * (trim_index - TRIM_NEUTRAL) * 1e-6
        )
        if not (1.0 - 1e-4 <= r <= 1.0 + 1e-4):
            raise ValueError(f"effective clock rate {r} outside +-100 ppm envelope")
        return r

    def set_trim(self, index: int) -> int:
        """Set the trim register, clamping to [0, 31] with a warning."""
        clamped = min(max(int(index), TRIM_MIN), TRIM_MAX)
        if clamped != index:
            warnings.warn(f"trim index {index} clamped to {clamped}", RuntimeWarning)
        self.trim_index = clamped
        return clamped


class Clock:
    """A node's counter over one simulated episode.

    Maps between global seconds and local ticks through a piecewise-constant
    rate integral, so temporary detuning windows are exact.
    """

    def __init__(self, model: ClockModel, phase_ticks: float = 0.0):
        self.model = model
        self.phase_ticks = float(phase_ticks)  # counter value at global time 0
        self._breaks = [0.0]
        self._rates = [model.rate]

    def set_rate_from(self, g_start: float, rate: float) -> None:
        """Rate change taking effect at a global instant (e.g. a trim write)."""
        if g_start < self._breaks[-1]:
            raise ValueError("rate changes must be appended in time order")
        self._breaks.append(float(g_start))
        self._rates.append(float(rate))

    def add_detune_window(self, g_start: float, rate: float, local_duration_s: float) -> None:
        """Run at `rate` for a window timed by this clock, then restore."""
        restore = self._rates[-1]
        self.set_rate_from(g_start, rate)
        self.set_rate_from(g_start + local_duration_s / rate, restore)

    def local_seconds_at(self, g: float) -> float:
        if g < 0.0:
            return self._rates[0] * g
        acc = 0.0
        for i, b in enumerate(self._breaks):
            end = self._breaks[i + 1] if i + 1 < len(self._breaks) else None
            if end is None or g < end:
                return acc + self._rates[i] * (g - b)
            acc += self._rates[i] * (end - b)
        return acc  # unreachable

    def local_ticks_at(self, g: float) -> float:
        return self.phase_ticks + self.local_seconds_at(g) / TICK_SECONDS

    def global_at_local_ticks(self, ticks: float) -> float:
        """Invert the rate integral: global instant at which the counter
        reaches `ticks` (unwrapped)."""
        target = (float(ticks) - self.phase_ticks) * TICK_SECONDS
        if target < 0.0:
            return target / self._rates[0]
        acc = 0.0
        for i, b in enumerate(self._breaks):
            end = self._breaks[i + 1] if i + 1 < len(self._breaks) else None
            span = None if end is None else self._rates[i] * (end - b)
            if span is None or target < acc + span:
                return b + (target - acc) / self._rates[i]
            acc += span
        raise AssertionError("unreachable")


def schedule_tx(clock: Clock, desired_local_ticks: int, global_now: float) -> float:
    """Global instant at which the TX marker is emitted.

    The desired local timestamp (antenna delay already folded in by the
    caller) is quantized to the 9-bit TX granularity, then converted through
    the node's possibly-detuned rate integral.
    """
    if desired_local_ticks <= clock.local_ticks_at(global_now):
        raise PastDeadline(f"local deadline {desired_local_ticks} already elapsed")
    return clock.global_at_local_ticks(quantize_ticks(int(desired_local_ticks)))


def rx_ticks(
    clock: Clock,
    arrival_global: float,
    antenna_delay_s: float = 0.0,
    jitter_s: float = 0.0,
    rng: np.random.Generator | None = None,
) -> int:
    """Unwrapped local tick reading for a global arrival instant."""
    t = clock.local_ticks_at(arrival_global) + antenna_delay_s / TICK_SECONDS
    if jitter_s > 0.0:
        if rng is None:
            raise ValueError("jitter requires an RNG")
        t += rng.normal(0.0, jitter_s) / TICK_SECONDS
    return round(t)


def timestamp_rx(
    clock: Clock,
    arrival_global: float,
    antenna_delay_s: float = 0.0,
    jitter_s: float = 0.0,
    rng: np.random.Generator | None = None,
) -> RadioTimestamp:
    """Device-boundary RX timestamp (40-bit wrapped)."""
    return RadioTimestamp(rx_ticks(clock, arrival_global, antenna_delay_s, jitter_s, rng))


def measure_cfo(
    receiver: ClockModel,
    transmitter: ClockModel,
    noise_ppm: float = 0.05,
    rng: np.random.Generator | None = None,
) -> float:
    """Carrier frequency offset reading at the receiver, in ppm.

    Positive when the receiver's local clock is slower than the
    transmitter's.
    """
    cfo = (transmitter.rate - receiver.rate) / receiver.rate * 1e6
    if noise_ppm > 0.0:
        if rng is None:
            raise ValueError("measurement noise requires an RNG")
        cfo += rng.normal(0.0, noise_ppm)
    return cfo


@dataclass
class LdeParams:
    """Stand-in for the proprietary leading-edge detection algorithm."""

    threshold_factor: float = 12.0  # multiple of the noise std estimate
    noise_peak_factor: float = 1.25
    window_half: int = 16  # samples around the locked path searched for FP
    floor_rel: float = 0.2  # fraction of the window peak, noiseless-capture guard


@dataclass
class Cir:
    """Accumulator snapshot: 1016 complex samples plus first-path metadata.

    Sample components are integral (int16-quantized); `scale` is the factor
    that mapped rendered amplitudes onto the integer range. `fp_ticks` is the
    40-bit timestamp of the instant corresponding to buffer index `fp_index`.
    """

    samples: np.ndarray
    fp_index: float
    fp_ticks: int
    sampling_period_ns: float = 1.0016
    scale: float = 1.0
    fp_valid: bool = True

    def __post_init__(self):
        if self.samples.shape != (CIR_LEN,):
            raise ValueError(f"CIR must have {CIR_LEN} samples")
        if not (0.0 <= self.fp_index < CIR_LEN):
            raise ValueError("fp_index outside buffer")
        self.fp_ticks = mask_ticks(self.fp_ticks)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.abs(self.samples)

    @property
    def fp_timestamp(self) -> RadioTimestamp:
        return RadioTimestamp(self.fp_ticks)


def lde_first_path(cir: Cir, window: tuple[int, int], params: LdeParams | None = None) -> float:
    """First buffer index inside `window` whose amplitude clears the dynamic
    threshold max(noise peak * factor, k * sigma_noise), with sub-sample
    linear interpolation of the crossing. Crossing is inclusive (>=).
    """
    params = params or LdeParams()
    lo, hi = window
    if not (0 <= lo < hi <= CIR_LEN):
        raise ValueError(f"window {window} outside buffer bounds")
    amps = cir.amplitudes
    # Rayleigh-robust noise estimate: median amplitude over the full buffer.
    sigma = float(np.median(amps)) / np.sqrt(np.log(4.0))
    noiseish = amps[amps < 6.0 * sigma]
    noise_peak = float(noiseish.max()) if noiseish.size else 0.0
    seg = amps[lo:hi]
    thr = max(
        params.threshold_factor * sigma,
        params.noise_peak_factor * noise_peak,
        params.floor_rel * float(seg.max()),
    )
    above = np.nonzero(seg >= thr)[0]
    if above.size == 0 or thr <= 0.0:
        raise NoDetectablePath(f"no amplitude >= {thr:.3g} in window {window}")
    j = int(above[0])
    if j == 0 or seg[j] == seg[j - 1]:
        return float(lo + j)
    frac = (thr - seg[j - 1]) / (seg[j] - seg[j - 1])
    return float(lo + j - 1 + frac)


@dataclass(frozen=True)
class Arrival:
    """One response reaching the capturing node."""

    t_global: float
    amplitude: float
    profile: MultipathProfile


def render_cir_samples(
    positions: np.ndarray, gains: np.ndarray, bandwidth_mhz: float
) -> np.ndarray:
    """Circularly band-limited rendering of paths with complex gains.

    `positions` are arrival instants in fractional buffer samples, anchored
    at each pulse's half-amplitude leading edge (the instant edge-detection
    timestamps); the envelope peak lands slightly later. Frequency-domain,
    so FFT upsampling of the result is exact."""
    kern = _spectral_kernel(bandwidth_mhz)
    peaks = positions + pulse_edge_offset_samples(bandwidth_mhz)
    m = np.fft.fftfreq(CIR_LEN) * CIR_LEN
    phases = np.exp(-2j * np.pi * np.outer(peaks, m) / CIR_LEN)
    spectrum = (gains[:, None] * phases * kern[None, :]).sum(axis=0)
    return np.fft.ifft(spectrum) * CIR_LEN


def capture_cir(
    arrivals: list[Arrival],
    clock: Clock,
    noise_sigma: float,
    rng: np.random.Generator,
    bandwidth_mhz: float = 900.0,
    lde_params: LdeParams | None = None,
    rx_antenna_delay_s: float = 0.0,
    rx_jitter_s: float = 0.0,
) -> Cir:
    """Render overlapping responses into the accumulator and detect the
    first path.

    The receiver locks on the arrival with the strongest first path (ties
    broken by earliest arrival) and arranges the buffer so that response's
    direct path sits near index 750; every other path lands modulo the
    buffer span. The detected first-path index and its timestamp refer to
    the same physical instant, whatever the detection error.
    """
    if not arrivals:
        raise NoDetectablePath("no arrivals")
    lde_params = lde_params or LdeParams()

    anchor = min(arrivals, key=lambda a: (-a.amplitude, a.t_global))
    u_anchor = clock.local_ticks_at(anchor.t_global)  # fractional ticks
    grid_phase = rng.uniform()  # sampling grid offset, in samples
    p_anchor = FP_PLACEMENT_INDEX + grid_phase

    positions = []
    gains = []
    for arr in arrivals:
        carrier_phase = rng.uniform(0.0, 2.0 * np.pi)
        for delay_ns, amp, tap_phase in arr.profile.taps:
            u_tap = clock.local_ticks_at(arr.t_global + delay_ns * 1e-9)
            pos = (p_anchor + (u_tap - u_anchor) / TICKS_PER_CIR_SAMPLE) % CIR_LEN
            positions.append(pos)
            gains.append(arr.amplitude * amp * np.exp(1j * (carrier_phase + tap_phase)))
    rendered = render_cir_samples(np.asarray(positions), np.asarray(gains), bandwidth_mhz)

    if noise_sigma > 0.0:
        rendered = rendered + noise_sigma * (
            rng.standard_normal(CIR_LEN) + 1j * rng.standard_normal(CIR_LEN)
        )

    scale = CIR_TARGET_PEAK / max(a.amplitude for a in arrivals)
    re = np.clip(np.round(rendered.real * scale), -INT16_MAX - 1, INT16_MAX)
    im = np.clip(np.round(rendered.imag * scale), -INT16_MAX - 1, INT16_MAX)
    samples = re + 1j * im

    lo = int(round(p_anchor)) - lde_params.window_half
    hi = int(round(p_anchor)) + lde_params.window_half
    probe = Cir(samples=samples, fp_index=0.0, fp_ticks=0, scale=scale)
    fp_index = lde_first_path(probe, (lo, hi), lde_params)

    u_fp = u_anchor + (fp_index - p_anchor) * TICKS_PER_CIR_SAMPLE
    if rx_antenna_delay_s:
        u_fp += rx_antenna_delay_s / TICK_SECONDS
    if rx_jitter_s > 0.0:
        u_fp += rng.normal(0.0, rx_jitter_s) / TICK_SECONDS
    fp_ticks = mask_ticks(round(u_fp))

    return Cir(samples=samples, fp_index=fp_index, fp_ticks=fp_ticks, scale=scale)
