"""Shared builders for synthetic CIRs and geometries."""

from __future__ import annotations

import numpy as np

from crng.cirproc import ProcParams, find_rearrange_shift
from crng.constants import CIR_LEN, CIR_TARGET_PEAK, INT16_MAX
from crng.radio import Cir, render_cir_samples


def make_cir(
    positions,
    amps,
    fp_index: float,
    fp_ticks: int = 0,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    phases=None,
    bandwidth_mhz: float = 900.0,
) -> Cir:
    """Render a synthetic CIR with int16 quantization, mirroring capture."""
    positions = np.asarray(positions, dtype=float)
    amps = np.asarray(amps, dtype=float)
    if phases is None:
        phases = np.zeros_like(amps)
    gains = amps * np.exp(1j * np.asarray(phases, dtype=float))
    rendered = render_cir_samples(positions, gains, bandwidth_mhz)
    if noise_sigma > 0.0:
        rendered = rendered + noise_sigma * (
            rng.standard_normal(CIR_LEN) + 1j * rng.standard_normal(CIR_LEN)
        )
    scale = CIR_TARGET_PEAK / amps.max()
    re = np.clip(np.round(rendered.real * scale), -INT16_MAX - 1, INT16_MAX)
    im = np.clip(np.round(rendered.imag * scale), -INT16_MAX - 1, INT16_MAX)
    return Cir(samples=re + 1j * im, fp_index=fp_index, fp_ticks=fp_ticks, scale=scale)


def six_response_positions(rng: np.random.Generator, t_id_samples: float = 127.7955):
    """Direct-path buffer positions for six responses with per-response
    distance spread, leading from a random start. One responder is near
    (2..2.5 m) as in anchored deployments; the rest span 3..7 m."""
    start = rng.uniform(0.0, CIR_LEN)
    dists = np.concatenate([rng.uniform(2.0, 2.5, size=1), rng.uniform(3.0, 7.0, size=5)])
    rng.shuffle(dists)
    offsets = 2.0 * (dists - dists[0]) / 0.299792458 / 1.0016  # samples
    pos = (start + np.arange(6) * t_id_samples + offsets) % CIR_LEN
    return pos, dists


def sweep_order_recovery(amplitudes: np.ndarray, params: ProcParams, ref_first: int) -> np.ndarray:
    """Per-pre-shift flags: does the rough first path track the shift, i.e.
    is responder order recovered for that rolled copy?

    Closed-form equivalent of calling find_rearrange_shift on every rolled
    copy: window sums and the above-threshold mask of a rolled buffer are
    rolls of the originals, argmin/first-hit follow by circular rank.
    """
    peak = amplitudes.max()
    norm = amplitudes / peak
    w = params.noise_window
    ext = np.concatenate([norm, norm[: w - 1]])
    cums = np.concatenate([[0.0], np.cumsum(ext)])
    sums = cums[w:] - cums[:-w]
    min_sum = sums.min()
    ties = np.nonzero(sums == min_sum)[0]  # candidate window starts
    hits = np.nonzero(norm >= params.rearrange_threshold)[0]
    flags = np.zeros(CIR_LEN, dtype=bool)
    if hits.size == 0:
        return flags
    for s in range(CIR_LEN):
        # argmin of roll(sums, s) is the tie with the smallest (t + s) % N
        rolled_ties = (ties + s) % CIR_LEN
        start = int(rolled_ties.min())
        orig_start = (start - s) % CIR_LEN
        # first above-threshold index scanning circularly from orig_start
        later = hits[hits >= orig_start]
        first = int(later[0]) if later.size else int(hits[0])
        flags[s] = first == ref_first
    return flags
