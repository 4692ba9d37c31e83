"""CIR processing: FFT upsampling, circular re-arrangement, noise floor
estimation, chunking, and the threshold / search-and-subtract ToA
estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PulseTemplate
from .constants import CIR_LEN, CIR_SAMPLE_PERIOD_NS, CIR_SAMPLE_PERIOD_S
from .errors import RearrangeFailed
from .radio import Cir

NOISE_TAIL_SAMPLES = 128  # original-rate samples used for the sigma_n estimate


@dataclass(frozen=True)
class ProcParams:
    """Processing constants for the CIR pipeline."""

    upsample_factor: int = 30
    rearrange_threshold: float = 0.14  # xi, on max-normalized amplitudes
    noise_window: int = 228  # W, original-rate samples
    toa_threshold_multiplier: float = 11.0
    ss_iterations: int = 3  # K
    guard_offset: int = 480  # upsampled samples ahead of responder 1's path
    eta_floor: float = 0.05  # quantization-floor guard on the ToA threshold

    def __post_init__(self):
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if not (0.0 < self.rearrange_threshold < 1.0):
            raise ValueError("rearrange_threshold must be in (0, 1)")
        if not (0 < self.noise_window < CIR_LEN):
            raise ValueError("noise_window must be in (0, 1016)")
        if self.ss_iterations < 1:
            raise ValueError("ss_iterations must be >= 1")


def upsample_complex(samples: np.ndarray, factor: int) -> np.ndarray:
    """Frequency-domain zero-padding interpolation of a complex signal."""
    n = samples.shape[0]
    if factor == 1:
        return samples.astype(complex)
    spec = np.fft.fft(samples)
    m = n * factor
    out = np.zeros(m, dtype=complex)
    half = n // 2
    out[:half] = spec[:half]
    out[m - half + 1:] = spec[half + 1:]
    out[half] = spec[half] / 2.0  # split the shared Nyquist bin
    out[m - half] = spec[half] / 2.0
    return np.fft.ifft(out) * factor


def upsample(cir: Cir, factor: int) -> np.ndarray:
    """Upsampled amplitude array (length 1016 * factor)."""
    return np.abs(upsample_complex(cir.samples, factor))


def find_rearrange_shift(amplitudes: np.ndarray, params: ProcParams) -> tuple[int, int]:
    """Locate the noise-only window and the rough first path of responder 1.

    Returns (noise_window_start, first_path_index), both original-rate
    indices on the un-shifted buffer.
    """
    peak = amplitudes.max()
    if peak <= 0.0:
        raise RearrangeFailed("all-zero CIR")
    norm = amplitudes / peak
    w = params.noise_window
    ext = np.concatenate([norm, norm[: w - 1]])
    cums = np.concatenate([[0.0], np.cumsum(ext)])
    window_sums = cums[w:] - cums[:-w]  # circular window sums, len 1016
    start = int(np.argmin(window_sums))

    above = norm >= params.rearrange_threshold
    order = (start + np.arange(CIR_LEN)) % CIR_LEN
    hits = np.nonzero(above[order])[0]
    if hits.size == 0:
        raise RearrangeFailed("no sample above the re-arrangement threshold")
    return start, int(order[hits[0]])


@dataclass
class RearrangedCir:
    """Re-ordered, upsampled CIR with the first-path baseline re-attached.

    amplitudes are max-normalized; shift is the circular shift applied at the
    original rate; fp_index_up and fp_ticks refer to the same physical
    instant as the source CIR's first-path pair.
    """

    amplitudes: np.ndarray
    shift: int
    fp_index_up: float
    fp_ticks: int
    fp_valid: bool
    upsample_factor: int
    t_s_up_ns: float
    norm_scale: float


def rearrange(cir: Cir, params: ProcParams) -> RearrangedCir:
    """Circularly re-order the CIR so responder 1 leads and noise trails.

    Finds the minimum-sum window of length W (the noise-only region), scans
    forward for the first sample above the threshold xi (rough first path of
    responder 1), and shifts it to the guard offset. The first-path index is
    re-assigned under the same shift so its timestamp stays valid.
    """
    _, rough_first = find_rearrange_shift(cir.amplitudes, params)
    lead = params.guard_offset // params.upsample_factor
    shift = (lead - rough_first) % CIR_LEN

    shifted = np.roll(cir.samples, shift)
    up = np.abs(upsample_complex(shifted, params.upsample_factor))
    scale = float(up.max())
    fp_index_up = ((cir.fp_index + shift) % CIR_LEN) * params.upsample_factor
    return RearrangedCir(
        amplitudes=up / scale,
        shift=int(shift),
        fp_index_up=float(fp_index_up),
        fp_ticks=cir.fp_ticks,
        fp_valid=cir.fp_valid,
        upsample_factor=params.upsample_factor,
        t_s_up_ns=CIR_SAMPLE_PERIOD_NS / params.upsample_factor,
        norm_scale=scale,
    )


def noise_std(r: RearrangedCir) -> float:
    """Noise floor: std of the last 128 original-rate samples of the
    re-arranged CIR (normalized amplitudes)."""
    l_factor = r.upsample_factor
    tail = r.amplitudes[(CIR_LEN - NOISE_TAIL_SAMPLES) * l_factor :: l_factor]
    return float(np.std(tail))


def chunk(r: RearrangedCir, t_id_s: float, n: int) -> list[tuple[int, int]]:
    """Split the re-arranged CIR into n per-responder index ranges of
    duration t_id, in upsampled samples."""
    width = int(t_id_s / CIR_SAMPLE_PERIOD_S * r.upsample_factor)
    if n * width > CIR_LEN * r.upsample_factor:
        raise ValueError("chunks exceed the CIR span")
    return [(i * width, (i + 1) * width) for i in range(n)]


BELOW_THRESHOLD = "below_threshold"
OUT_OF_CHUNK = "out_of_chunk"
MPC_AMBIGUOUS = "mpc_ambiguous"


@dataclass(frozen=True)
class ToaEstimate:
    responder_index: int
    toa_index_up: float = float("nan")
    valid: bool = False
    rejection_reason: str | None = None

    def __post_init__(self):
        if self.valid == (self.rejection_reason is not None):
            raise ValueError("valid estimates carry no reason, invalid ones must")


def toa_threshold(
    r: RearrangedCir, chunk_range: tuple[int, int], eta: float, responder_index: int
) -> ToaEstimate:
    """First index whose amplitude strictly exceeds eta.

    Deliberately unguarded: a strong late reflection leaking past the chunk
    boundary is returned as-is (its distance decode is then rejected as out
    of range downstream).
    """
    lo, hi = chunk_range
    seg = r.amplitudes[lo:hi]
    above = np.nonzero(seg > eta)[0]
    if above.size == 0:
        return ToaEstimate(responder_index, rejection_reason=BELOW_THRESHOLD)
    return ToaEstimate(responder_index, toa_index_up=float(lo + above[0]), valid=True)


def toa_ss(
    r: RearrangedCir,
    chunk_range: tuple[int, int],
    eta: float,
    k_paths: int,
    template: PulseTemplate,
    responder_index: int,
) -> ToaEstimate:
    """Search-and-subtract: keep the K strongest matched-filter paths whose
    peak amplitude exceeds eta, return the earliest, anchored at the path
    beginning (template rise point)."""
    lo, hi = chunk_range
    tw = template.waveform
    if tw.shape[0] >= hi - lo:
        raise ValueError("template longer than chunk")
    pad = tw.shape[0]  # lets paths near the boundaries align fully
    seg = np.pad(r.amplitudes[lo:hi], pad).copy()
    lead = template.lead_samples_up()
    candidates = []
    for _ in range(k_paths):
        corr = np.correlate(seg, tw, mode="valid")
        k_star = int(np.argmax(corr))
        peak_pos = k_star + template.peak_offset - pad  # chunk-relative
        if 0 <= peak_pos < hi - lo:
            peak_amp = float(seg[peak_pos + pad])
            if peak_amp > eta:
                candidates.append(peak_pos)
        window = seg[k_star : k_star + tw.shape[0]]
        seg[k_star : k_star + tw.shape[0]] = np.maximum(window - window.max() * tw, 0.0)
    if not candidates:
        return ToaEstimate(responder_index, rejection_reason=BELOW_THRESHOLD)
    start_in_chunk = min(candidates) - lead
    if start_in_chunk < 2 * r.upsample_factor:
        # likely a reflection leaked from the previous chunk
        return ToaEstimate(responder_index, rejection_reason=MPC_AMBIGUOUS)
    return ToaEstimate(responder_index, toa_index_up=float(lo + start_in_chunk), valid=True)


def toa_eta(sigma_n: float, params: ProcParams) -> float:
    """ToA detection threshold: multiplier * sigma_n with a quantization
    floor for noiseless captures."""
    return max(params.toa_threshold_multiplier * sigma_n, params.eta_floor)
