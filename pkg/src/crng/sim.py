"""Scenario execution and metrics: static-grid and trajectory experiments,
scheme comparison, and error/success-rate statistics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ENVIRONMENTS, LOS_PROFILE, PulseTemplate, gen_multipath
from .cirproc import ProcParams, RearrangedCir, chunk, noise_std, rearrange, toa_eta, toa_ss, toa_threshold
from .constants import SPEED_OF_LIGHT
from .errors import (
    DegenerateGeometry,
    NoDetectablePath,
    RearrangeFailed,
    ValidationError,
    ZeroSpeedSegment,
)
from .locate import linear_init, nlls_solve
from .protocol import CrngParams, ExchangeRecord, ExchangeDebug, Node, NoiseKnobs, crng_exchange, sstwr
from .radio import ClockModel, LdeParams
from .ranging import PHR_ERROR, DistanceEstimate, distance
from .records import CirLogRecord
from .rows import Row

CRNG_SCHEMES = ("crng_threshold", "crng_ss")
SSTWR_SCHEMES = ("sstwr", "sstwr_comp")
VALID_SCHEMES = CRNG_SCHEMES + SSTWR_SCHEMES

REARRANGE_FAILED = "rearrange_failed"
NO_PATH = "no_detectable_path"

_TAG_CLOCKS, _TAG_PROFILES, _TAG_TRIAL = 0, 1, 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic RNG substream for a (seed, key...) tuple."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@dataclass
class Scenario:
    """Full experiment description; every noise knob is explicit."""

    anchors: np.ndarray
    seed: int
    trials_per_position: int = 1
    initiator_positions: np.ndarray | None = None
    trajectory: np.ndarray | None = None
    segment_speeds: np.ndarray | None = None  # defaults to speed_mps everywhere
    speed_mps: float = 0.5
    rate_hz: float = 8.0
    environment: str = "none"
    schemes: tuple = ("crng_threshold", "crng_ss")
    compensation: str = "full"
    clock_offsets: object = None  # None | list of ppm (initiator first) | ("uniform", lo, hi) | ("normal", mu, sd)
    knobs: NoiseKnobs = field(default_factory=NoiseKnobs)
    crng: CrngParams | None = None
    proc: ProcParams = field(default_factory=ProcParams)
    sstwr_t_resp: float = 320e-6
    cal_offsets: dict = field(default_factory=dict)  # scheme -> meters
    max_range_m: float = 100.0
    outlier_m: float = 10.0
    bandwidth_mhz: float = 900.0
    trim_slope_ppm: float = -1.48
    lde: LdeParams = field(default_factory=LdeParams)
    nlls_tol: float = 1e-6
    nlls_max_iter: int = 100

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float)
        if self.anchors.ndim != 2 or self.anchors.shape[0] < 3 or self.anchors.shape[1] != 2:
            raise ValidationError("need at least 3 two-dimensional anchors")
        if self.trials_per_position < 1:
            raise ValidationError("trials_per_position must be >= 1")
        if self.environment not in ENVIRONMENTS:
            raise ValidationError(f"environment must be one of {ENVIRONMENTS}")
        bad = [s for s in self.schemes if s not in VALID_SCHEMES]
        if bad:
            raise ValidationError(f"unknown schemes {bad}; valid: {VALID_SCHEMES}")
        if self.compensation not in ("none", "full"):
            raise ValidationError("compensation must be 'none' or 'full'")
        if self.initiator_positions is not None:
            self.initiator_positions = np.asarray(self.initiator_positions, dtype=float)
        if self.trajectory is not None:
            self.trajectory = np.asarray(self.trajectory, dtype=float)
            if self.trajectory.shape[0] < 2:
                raise ValidationError("trajectory needs at least 2 waypoints")
        if (self.initiator_positions is None) == (self.trajectory is None):
            raise ValidationError("exactly one of initiator_positions / trajectory required")
        if self.crng is None:
            try:
                self.crng = CrngParams(n_responders=self.anchors.shape[0])
            except ValueError as exc:
                raise ValidationError(str(exc)) from None
        elif self.crng.n_responders != self.anchors.shape[0]:
            raise ValidationError("crng.n_responders must equal the anchor count")

    @property
    def n_responders(self) -> int:
        return self.anchors.shape[0]

    def template(self) -> PulseTemplate:
        return PulseTemplate.generate(self.proc.upsample_factor, self.bandwidth_mhz)


def resolve_clock_offsets(scn: Scenario) -> np.ndarray:
    """ppm offsets for [initiator, responder1..N]; distribution specs are
    drawn once per node at scenario setup."""
    n = scn.n_responders + 1
    spec = scn.clock_offsets
    if spec is None:
        return np.zeros(n)
    if isinstance(spec, (list, tuple)) and spec and isinstance(spec[0], str):
        rng = substream(scn.seed, _TAG_CLOCKS)
        kind = spec[0]
        if kind == "uniform":
            return rng.uniform(float(spec[1]), float(spec[2]), size=n)
        if kind == "normal":
            return rng.normal(float(spec[1]), float(spec[2]), size=n)
        raise ValidationError(f"unknown clock offset distribution {kind!r}")
    arr = np.asarray(spec, dtype=float)
    if arr.shape != (n,):
        raise ValidationError(f"clock_offsets must list {n} values (initiator first)")
    return arr


def _make_nodes(scn: Scenario, offsets: np.ndarray, initiator_pos) -> tuple[Node, list[Node]]:
    initiator = Node(initiator_pos, ClockModel(offsets[0], trim_slope_ppm=scn.trim_slope_ppm))
    responders = [
        Node(scn.anchors[i], ClockModel(offsets[i + 1], trim_slope_ppm=scn.trim_slope_ppm))
        for i in range(scn.n_responders)
    ]
    return initiator, responders


def _profiles(scn: Scenario, position_id: int):
    if scn.environment == "none":
        return [LOS_PROFILE] * scn.n_responders
    rng = substream(scn.seed, _TAG_PROFILES, position_id)
    return [gen_multipath(scn.environment, rng) for _ in range(scn.n_responders)]


def decode_exchange(
    record: ExchangeRecord,
    scn: Scenario,
    template: PulseTemplate,
    schemes: tuple,
):
    """Offline pipeline for one captured CIR: re-arrange, estimate ToAs per
    chunk, decode distances, and solve for position. Returns
    {scheme: (distance estimates, position estimate or None)}."""
    n = scn.n_responders
    out = {}
    if not record.cir.fp_valid:
        for s in schemes:
            out[s] = ([DistanceEstimate(i + 1, rejection_reason=PHR_ERROR) for i in range(n)], None)
        return out
    try:
        r = rearrange(record.cir, scn.proc)
    except RearrangeFailed:
        for s in schemes:
            out[s] = ([DistanceEstimate(i + 1, rejection_reason=REARRANGE_FAILED) for i in range(n)], None)
        return out
    eta = toa_eta(noise_std(r), scn.proc)
    chunks = chunk(r, scn.crng.t_id, n)
    for s in schemes:
        dists = []
        for i, crange in enumerate(chunks, start=1):
            if s == "crng_threshold":
                toa = toa_threshold(r, crange, eta, i)
            else:
                toa = toa_ss(r, crange, eta, scn.proc.ss_iterations, template, i)
            dists.append(
                distance(record, r, toa, scn.crng, scn.cal_offsets.get(s, 0.0), scn.max_range_m)
            )
        out[s] = (dists, _locate(scn, dists))
    return out


def _locate(scn: Scenario, dists: list[DistanceEstimate]):
    pairs = [(scn.anchors[d.responder_index - 1], d.distance_m) for d in dists if d.valid]
    if len(pairs) < 3:
        return None
    anchors = np.array([p[0] for p in pairs])
    values = np.array([p[1] for p in pairs])
    try:
        p0 = linear_init(anchors, values)
    except DegenerateGeometry:
        return None
    return nlls_solve(anchors, values, p0, tol=scn.nlls_tol, max_iter=scn.nlls_max_iter)


def _rows_for(scheme, position_id, trial, dists, pos, truths, truth_pos) -> list[Row]:
    x_est = y_est = loc_err = None
    if pos is not None:
        x_est, y_est = float(pos.p[0]), float(pos.p[1])
        if truth_pos is not None:
            loc_err = float(np.hypot(x_est - truth_pos[0], y_est - truth_pos[1]))
    x_true = float(truth_pos[0]) if truth_pos is not None else None
    y_true = float(truth_pos[1]) if truth_pos is not None else None
    rows = []
    for d in dists:
        d_est = d.distance_m if math.isfinite(d.distance_m) else None
        d_true = truths[d.responder_index - 1] if truths is not None else None
        rows.append(
            Row(
                scheme=scheme,
                position_id=position_id,
                trial=trial,
                responder=d.responder_index,
                d_true=d_true,
                d_est=d_est,
                valid=d.valid,
                reason="" if d.valid else (d.rejection_reason or ""),
                x_true=x_true,
                y_true=y_true,
                x_est=x_est,
                y_est=y_est,
                loc_err=loc_err,
            )
        )
    return rows


def _failure_rows(schemes, position_id, trial, n, truths, truth_pos, reason) -> list[Row]:
    rows = []
    for s in schemes:
        dists = [DistanceEstimate(i + 1, rejection_reason=reason) for i in range(n)]
        rows.extend(_rows_for(s, position_id, trial, dists, None, truths, truth_pos))
    return rows


def _run_position(scn: Scenario, offsets: np.ndarray, position_id: int, position) -> tuple:
    """All trials at one initiator position. Nodes (and their trim state)
    persist across the position's trials."""
    template = scn.template()
    crng_schemes = tuple(s for s in scn.schemes if s in CRNG_SCHEMES)
    sstwr_schemes = tuple(s for s in scn.schemes if s in SSTWR_SCHEMES)
    initiator, responders = _make_nodes(scn, offsets, position)
    profiles = _profiles(scn, position_id)
    truths = [float(np.linalg.norm(np.asarray(position) - a)) for a in scn.anchors]
    truth_pos = np.asarray(position, dtype=float)

    rows: list[Row] = []
    records: list[CirLogRecord] = []
    for trial in range(scn.trials_per_position):
        rng = substream(scn.seed, _TAG_TRIAL, position_id, trial)
        exchange_id = position_id * scn.trials_per_position + trial
        if crng_schemes:
            try:
                rec = crng_exchange(
                    initiator,
                    responders,
                    scn.crng,
                    scn.compensation,
                    rng,
                    profiles=profiles,
                    knobs=scn.knobs,
                    bandwidth_mhz=scn.bandwidth_mhz,
                    lde_params=scn.lde,
                )
            except NoDetectablePath:
                rows.extend(
                    _failure_rows(crng_schemes, position_id, trial, scn.n_responders,
                                  truths, truth_pos, NO_PATH)
                )
            else:
                rec.exchange_id = exchange_id
                if rec.cir.fp_valid:
                    records.append(CirLogRecord.from_exchange(rec))
                    decoded = decode_exchange(rec, scn, template, crng_schemes)
                    for s in crng_schemes:
                        dists, pos = decoded[s]
                        rows.extend(_rows_for(s, position_id, trial, dists, pos, truths, truth_pos))
                else:
                    rows.extend(
                        _failure_rows(crng_schemes, position_id, trial, scn.n_responders,
                                      truths, truth_pos, PHR_ERROR)
                    )
        for s in sstwr_schemes:
            dists = []
            for i, resp in enumerate(responders, start=1):
                d = sstwr(initiator, resp, scn.sstwr_t_resp, s == "sstwr_comp", rng, scn.knobs)
                ok = 0.0 < d < scn.max_range_m
                dists.append(
                    DistanceEstimate(i, distance_m=d, valid=ok,
                                     raw_tof_ns=d / SPEED_OF_LIGHT * 1e9,
                                     rejection_reason=None if ok else "out_of_range")
                )
            pos = _locate(scn, dists)
            rows.extend(_rows_for(s, position_id, trial, dists, pos, truths, truth_pos))
    return rows, records


def _thread_count() -> int:
    raw = os.environ.get("CRNG_THREADS", "").strip()
    if raw == "":
        return 1
    n = int(raw)
    return os.cpu_count() or 1 if n == 0 else max(1, n)


def run_static(scn: Scenario):
    """Execute every configured scheme at each static position x trial.

    Returns (records, rows, summary). Results are merged in position/trial
    order whatever the worker count, and are byte-reproducible for a fixed
    seed.
    """
    if scn.initiator_positions is None or len(scn.initiator_positions) == 0:
        raise ValidationError("run_static needs initiator_positions")
    offsets = resolve_clock_offsets(scn)
    positions = list(enumerate(scn.initiator_positions))
    workers = _thread_count()
    if workers > 1 and len(positions) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_position_star, [(scn, offsets, i, p) for i, p in positions]))
    else:
        results = [_run_position(scn, offsets, i, p) for i, p in positions]
    rows: list[Row] = []
    records: list[CirLogRecord] = []
    for r_rows, r_recs in results:
        rows.extend(r_rows)
        records.extend(r_recs)
    return records, rows, summarize(rows, scn.outlier_m)


def _run_position_star(args):
    return _run_position(*args)


def trajectory_samples(scn: Scenario) -> np.ndarray:
    """Positions along the piecewise-linear path at the exchange rate."""
    pts = scn.trajectory
    nseg = pts.shape[0] - 1
    speeds = (
        np.asarray(scn.segment_speeds, dtype=float)
        if scn.segment_speeds is not None
        else np.full(nseg, scn.speed_mps)
    )
    if speeds.shape != (nseg,):
        raise ValidationError("segment_speeds must have one entry per segment")
    lengths = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    durations = np.zeros(nseg)
    for k in range(nseg):
        if lengths[k] > 0.0:
            if speeds[k] <= 0.0:
                raise ZeroSpeedSegment(f"segment {k} has length {lengths[k]:.3f} m at speed {speeds[k]}")
            durations[k] = lengths[k] / speeds[k]
    total = float(durations.sum())
    times = np.arange(0.0, total + 0.5 / scn.rate_hz, 1.0 / scn.rate_hz)
    bounds = np.concatenate([[0.0], np.cumsum(durations)])
    out = np.empty((times.size, 2))
    for j, t in enumerate(times):
        k = min(int(np.searchsorted(bounds, t, side="right")) - 1, nseg - 1)
        if durations[k] > 0.0:
            frac = (t - bounds[k]) / durations[k]
        else:
            frac = 0.0
        out[j] = pts[k] + min(frac, 1.0) * (pts[k + 1] - pts[k])
    return out


def run_trajectory(scn: Scenario):
    """Sample the trajectory at the exchange rate and range at each instant.

    Node state (trim) persists along the whole path, mirroring a mobile
    initiator ranging continuously. Ground truth is evaluated at the exact
    exchange instant.
    """
    if scn.trajectory is None:
        raise ValidationError("run_trajectory needs a trajectory")
    samples = trajectory_samples(scn)
    offsets = resolve_clock_offsets(scn)
    one = replace(scn, trials_per_position=1)
    rows: list[Row] = []
    records: list[CirLogRecord] = []
    template = scn.template()
    crng_schemes = tuple(s for s in scn.schemes if s in CRNG_SCHEMES)
    sstwr_schemes = tuple(s for s in scn.schemes if s in SSTWR_SCHEMES)
    initiator, responders = _make_nodes(scn, offsets, samples[0])
    for sample_id, position in enumerate(samples):
        initiator.position = np.asarray(position, dtype=float)
        truths = [float(np.linalg.norm(initiator.position - a)) for a in scn.anchors]
        rng = substream(scn.seed, _TAG_TRIAL, sample_id, 0)
        profiles = _profiles(one, sample_id)
        if crng_schemes:
            try:
                rec = crng_exchange(
                    initiator, responders, scn.crng, scn.compensation, rng,
                    profiles=profiles, knobs=scn.knobs,
                    bandwidth_mhz=scn.bandwidth_mhz, lde_params=scn.lde,
                )
            except NoDetectablePath:
                rows.extend(_failure_rows(crng_schemes, sample_id, 0, scn.n_responders,
                                          truths, position, NO_PATH))
            else:
                rec.exchange_id = sample_id
                if rec.cir.fp_valid:
                    records.append(CirLogRecord.from_exchange(rec))
                    decoded = decode_exchange(rec, scn, template, crng_schemes)
                    for s in crng_schemes:
                        dists, pos = decoded[s]
                        rows.extend(_rows_for(s, sample_id, 0, dists, pos, truths, position))
                else:
                    rows.extend(_failure_rows(crng_schemes, sample_id, 0, scn.n_responders,
                                              truths, position, PHR_ERROR))
        for s in sstwr_schemes:
            dists = []
            for i, resp in enumerate(responders, start=1):
                d = sstwr(initiator, resp, scn.sstwr_t_resp, s == "sstwr_comp", rng, scn.knobs)
                ok = 0.0 < d < scn.max_range_m
                dists.append(DistanceEstimate(i, distance_m=d, valid=ok,
                                              raw_tof_ns=d / SPEED_OF_LIGHT * 1e9,
                                              rejection_reason=None if ok else "out_of_range"))
            pos = _locate(scn, dists)
            rows.extend(_rows_for(s, sample_id, 0, dists, pos, truths, position))
    return records, rows, summarize(rows, scn.outlier_m)


# ---------------------------------------------------------------------------
# metrics

PCTS = (50, 75, 90, 95, 99)


@dataclass(frozen=True)
class ErrorStats:
    n: int
    median: float
    mean: float
    std: float
    abs_percentiles: dict
    outliers: int


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    idx = max(0, math.ceil(q / 100.0 * sorted_values.size) - 1)
    return float(sorted_values[idx])


def error_stats(errors, outlier_m: float) -> ErrorStats | None:
    errs = np.asarray(errors, dtype=float)
    if errs.size == 0:
        return None
    keep = errs[np.abs(errs) <= outlier_m]
    outliers = int(errs.size - keep.size)
    if keep.size == 0:
        return ErrorStats(0, float("nan"), float("nan"), float("nan"),
                          {q: float("nan") for q in PCTS}, outliers)
    abs_sorted = np.sort(np.abs(keep))
    return ErrorStats(
        n=int(keep.size),
        median=float(np.median(keep)),
        mean=float(np.mean(keep)),
        std=float(np.std(keep)),
        abs_percentiles={q: nearest_rank(abs_sorted, q) for q in PCTS},
        outliers=outliers,
    )


@dataclass(frozen=True)
class SchemeSummary:
    scheme: str
    n_exchanges: int
    ranging: ErrorStats | None
    ranging_per_responder: dict
    ranging_success: float
    localization: ErrorStats | None
    localization_success: float


@dataclass(frozen=True)
class RunSummary:
    schemes: dict

    def to_text(self) -> str:
        lines = []
        for s in sorted(self.schemes):
            sm = self.schemes[s]
            lines.append(f"== {s} ({sm.n_exchanges} exchanges)")
            lines.append("   ranging   success {:6.2f}%  {}".format(
                100 * sm.ranging_success, _stats_line(sm.ranging)))
            for r in sorted(sm.ranging_per_responder):
                lines.append("     responder {}  {}".format(
                    r, _stats_line(sm.ranging_per_responder[r])))
            lines.append("   position  success {:6.2f}%  {}".format(
                100 * sm.localization_success, _stats_line(sm.localization)))
        return "\n".join(lines) + "\n"


def _stats_line(st: ErrorStats | None) -> str:
    if st is None or st.n == 0:
        return "n=0"
    pct = "  ".join(f"p{q}={st.abs_percentiles[q] * 100:6.1f}" for q in PCTS)
    return (f"n={st.n:6d} median={st.median * 100:7.2f}cm mean={st.mean * 100:7.2f}cm "
            f"std={st.std * 100:7.2f}cm |err|[cm]: {pct}  outliers={st.outliers}")


def summarize(rows: list[Row], outlier_m: float = 10.0) -> RunSummary:
    """Aggregate rows: signed-error stats plus absolute-error percentiles
    (nearest rank). Estimates with |error| beyond the outlier bound are
    excluded from the statistics but stay in the success-rate denominators
    and count as failures."""
    if not rows:
        raise ValidationError("summarize needs at least one row")
    schemes = {}
    for s in sorted({r.scheme for r in rows}):
        srows = [r for r in rows if r.scheme == s]
        exchanges = {(r.position_id, r.trial) for r in srows}
        n_ex = len(exchanges)

        rng_errors = [r.d_est - r.d_true for r in srows if r.valid and r.d_true is not None
                      and r.d_est is not None]
        ok_rng = sum(1 for e in rng_errors if abs(e) <= outlier_m)
        per_resp = {}
        for resp in sorted({r.responder for r in srows}):
            errs = [r.d_est - r.d_true for r in srows
                    if r.responder == resp and r.valid and r.d_true is not None and r.d_est is not None]
            per_resp[resp] = error_stats(errs, outlier_m)
        n_expected = len(srows)

        loc_rows = {}
        for r in srows:
            loc_rows.setdefault((r.position_id, r.trial), r)
        computed = [r for r in loc_rows.values() if r.x_est is not None]
        loc_errors = [r.loc_err for r in computed if r.loc_err is not None]
        ok_loc = sum(1 for e in loc_errors if e <= outlier_m)
        if loc_errors:
            loc_success = ok_loc / n_ex
        else:
            loc_success = len(computed) / n_ex  # no truth available
        schemes[s] = SchemeSummary(
            scheme=s,
            n_exchanges=n_ex,
            ranging=error_stats(rng_errors, outlier_m),
            ranging_per_responder=per_resp,
            ranging_success=ok_rng / n_expected if n_expected else 0.0,
            localization=error_stats(loc_errors, outlier_m) if loc_errors else None,
            localization_success=loc_success,
        )
    return RunSummary(schemes=schemes)
