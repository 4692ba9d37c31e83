"""UWB propagation: time of flight, multipath taps, band-limited pulse shape.

The received pulse is modeled directly in the accumulator's circular frequency
domain: a root-raised-cosine spectral taper whose inverse DFT is the pulse seen
at one CIR tap position. Rendering paths this way keeps the buffer exactly
band-limited, so FFT upsampling reconstructs the continuous waveform without
interpolation ripple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import CIR_LEN, CIR_SAMPLE_PERIOD_S, SPEED_OF_LIGHT
from .errors import TooClose

# Default RF configuration (wideband channel); the alternative is 499.2 MHz.
DEFAULT_BANDWIDTH_MHZ = 900.0
# Near-full cosine roll-off: the pulse envelope's sidelobes must stay below
# the ToA detection floor or leading-edge estimates hop between lobes.
PULSE_ROLLOFF = 0.9
# Single-sided spectral cutoff cap, in cycles per CIR sample. Keeps the taper
# strictly inside the accumulator Nyquist band.
MAX_CUTOFF_CPS = 0.495

MIN_PATH_DISTANCE_M = 0.1

ENVIRONMENTS = ("none", "residential", "office", "industrial")

# Mean tap count (Poisson), delay constant fixed across environments, and
# power-decay constant per environment. Calibration knobs, not measurements.
ENV_TAP_MEAN = {"none": 0.0, "residential": 5.0, "office": 8.0, "industrial": 12.0}
ENV_DECAY_NS = {"none": 20.0, "residential": 25.0, "office": 20.0, "industrial": 18.0}
# Reflections start below the direct path even at zero excess delay (LOS
# environments); without this the summed MPC power dwarfs the direct path.
MPC_AMPLITUDE_SCALE = 0.5
MPC_DELAY_MEAN_NS = 15.0
MPC_DELAY_MAX_NS = 120.0


def time_of_flight(a, b) -> float:
    """Propagation delay in seconds between two positions in meters."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b)) / SPEED_OF_LIGHT


def path_amplitude(distance_m: float) -> float:
    """Free-space-like amplitude, normalized to 1.0 at 1 m."""
    if distance_m < MIN_PATH_DISTANCE_M:
        raise TooClose(f"distance {distance_m} m below {MIN_PATH_DISTANCE_M} m")
    return 1.0 / distance_m


def cosine_taper(freq_cps: np.ndarray, cutoff_cps: float, rolloff: float = PULSE_ROLLOFF) -> np.ndarray:
    """Raised-cosine spectral window over |frequency| in cycles/sample."""
    f = np.abs(np.asarray(freq_cps, dtype=float))
    f1 = cutoff_cps * (1.0 - rolloff) / (1.0 + rolloff)
    g = np.zeros_like(f)
    g[f <= f1] = 1.0
    roll = (f > f1) & (f < cutoff_cps)
    g[roll] = 0.5 * (1.0 + np.cos(np.pi * (f[roll] - f1) / (cutoff_cps - f1)))
    return g


def _cutoff_cps(bandwidth_mhz: float) -> float:
    # +10% lets the taper reach the occupied band's shoulder; capped inside
    # the accumulator Nyquist band.
    return min(0.55 * bandwidth_mhz * 1e6 * CIR_SAMPLE_PERIOD_S, MAX_CUTOFF_CPS)


def _spectral_kernel(bandwidth_mhz: float) -> np.ndarray:
    """Unit-peak pulse kernel on the accumulator's DFT bins (signed order)."""
    m = np.fft.fftfreq(CIR_LEN)  # cycles/sample, signed
    g = cosine_taper(m, _cutoff_cps(bandwidth_mhz))
    return g / g.sum()


_EDGE_OFFSET_CACHE: dict = {}


def pulse_edge_offset_samples(bandwidth_mhz: float = DEFAULT_BANDWIDTH_MHZ) -> float:
    """Offset from the pulse's half-amplitude leading edge to its peak, in
    CIR samples. Arrival instants are anchored at the leading edge (that is
    what edge-detection hardware timestamps), so renderers place the pulse
    peak this far after the arrival position."""
    key = round(float(bandwidth_mhz), 3)
    if key not in _EDGE_OFFSET_CACHE:
        u = np.arange(-4.0, 4.0, 1.0 / 64)
        a = np.abs(pulse_waveform(u, bandwidth_mhz))
        a = a / a.max()
        peak = int(np.argmax(a))
        rise = np.nonzero(a[: peak + 1] >= 0.5)[0]
        _EDGE_OFFSET_CACHE[key] = float(u[peak] - u[rise[0]])
    return _EDGE_OFFSET_CACHE[key]


def pulse_waveform(offsets_samples: np.ndarray, bandwidth_mhz: float = DEFAULT_BANDWIDTH_MHZ) -> np.ndarray:
    """Evaluate the band-limited pulse at fractional sample offsets from its center.

    Real-valued, peak 1.0 at offset 0. This is the circular pulse the renderer
    places at every path position, so it doubles as the matched-filter shape.
    """
    k = _spectral_kernel(bandwidth_mhz)
    m = np.fft.fftfreq(CIR_LEN) * CIR_LEN  # signed bin index
    u = np.asarray(offsets_samples, dtype=float)
    ph = np.exp(2j * np.pi * np.outer(u, m) / CIR_LEN)
    return np.real(ph @ k)


@dataclass(frozen=True)
class PulseTemplate:
    """Sampled pulse envelope used for matched filtering.

    waveform is the amplitude envelope at T_s/L resolution; peak normalized
    to 1.0. duration_ns is the measured full width at half maximum.
    """

    waveform: np.ndarray
    duration_ns: float
    bandwidth_mhz: float
    upsample_factor: int
    peak_offset: int  # index of the peak within waveform

    @classmethod
    def generate(
        cls,
        upsample_factor: int = 30,
        bandwidth_mhz: float = DEFAULT_BANDWIDTH_MHZ,
        half_span_samples: float = 4.0,
    ) -> "PulseTemplate":
        step = 1.0 / upsample_factor
        offs = np.arange(-half_span_samples, half_span_samples + step / 2, step)
        wav = np.abs(pulse_waveform(offs, bandwidth_mhz))
        wav = wav / wav.max()
        peak = int(np.argmax(wav))
        above = np.nonzero(wav >= 0.5)[0]
        fwhm_ns = (above[-1] - above[0]) * step * CIR_SAMPLE_PERIOD_S * 1e9
        return cls(
            waveform=wav,
            duration_ns=float(fwhm_ns),
            bandwidth_mhz=float(bandwidth_mhz),
            upsample_factor=int(upsample_factor),
            peak_offset=peak,
        )

    @classmethod
    def from_samples(
        cls, waveform, upsample_factor: int, bandwidth_mhz: float = DEFAULT_BANDWIDTH_MHZ
    ) -> "PulseTemplate":
        wav = np.asarray(waveform, dtype=float)
        wav = wav / wav.max()
        peak = int(np.argmax(wav))
        step_ns = CIR_SAMPLE_PERIOD_S * 1e9 / upsample_factor
        above = np.nonzero(wav >= 0.5)[0]
        fwhm_ns = (above[-1] - above[0]) * step_ns
        return cls(wav, float(fwhm_ns), float(bandwidth_mhz), int(upsample_factor), peak)

    def lead_samples_up(self, rise_fraction: float = 0.5) -> int:
        """Upsampled samples from the path beginning (rise_fraction of peak,
        default the half-amplitude edge) up to the peak. Defines where
        search-and-subtract places the ToA."""
        rise = np.nonzero(self.waveform[: self.peak_offset + 1] >= rise_fraction)[0]
        first = int(rise[0]) if rise.size else 0
        return self.peak_offset - first


@dataclass(frozen=True)
class MultipathProfile:
    """Per-link tap list. Tap 0 is always the unit-amplitude direct path."""

    taps: tuple  # of (excess_delay_ns, relative_amplitude, phase)
    environment: str = "none"

    def __post_init__(self):
        if not self.taps or self.taps[0][0] != 0.0 or self.taps[0][1] != 1.0:
            raise ValueError("tap 0 must be the direct path (delay 0, amplitude 1)")


LOS_PROFILE = MultipathProfile(taps=((0.0, 1.0, 0.0),), environment="none")


def gen_multipath(env: str, rng: np.random.Generator) -> MultipathProfile:
    """Draw a multipath profile for one link.

    Tap count is Poisson with an environment-dependent mean; excess delays are
    exponential (mean 15 ns) truncated at 120 ns; amplitudes follow the
    square root of the environment's exponential power-decay curve; phases are
    uniform. Deterministic for a given generator state.
    """
    if env not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {env!r}")
    taps = [(0.0, 1.0, 0.0)]
    mean = ENV_TAP_MEAN[env]
    if mean > 0:
        count = int(rng.poisson(mean))
        decay = ENV_DECAY_NS[env]
        # inverse-CDF truncated exponential keeps the delay distribution shape
        cdf_max = 1.0 - math.exp(-MPC_DELAY_MAX_NS / MPC_DELAY_MEAN_NS)
        for _ in range(count):
            delay = -MPC_DELAY_MEAN_NS * math.log(1.0 - cdf_max * rng.uniform())
            amp = MPC_AMPLITUDE_SCALE * math.exp(-delay / (2.0 * decay))  # sqrt of power decay
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            taps.append((delay, min(amp, 1.0), phase))
    return MultipathProfile(taps=tuple(taps), environment=env)
