"""Deterministic simulator and processing library for UWB concurrent ranging."""

__version__ = "0.1.0"

from .channel import MultipathProfile, PulseTemplate, gen_multipath, path_amplitude, time_of_flight
from .cirproc import ProcParams, RearrangedCir, ToaEstimate, chunk, noise_std, rearrange, toa_ss, toa_threshold, upsample
from .locate import PositionEstimate, linear_init, nlls_solve
from .protocol import CrngParams, ExchangeRecord, Node, NoiseKnobs, cfo_adjust, compensate_tx, crng_exchange, sstwr
from .radio import Cir, Clock, ClockModel, RadioTimestamp, capture_cir, lde_first_path, measure_cfo, quantize_tx, timestamp_rx
from .ranging import DistanceEstimate, calibrate_offset, distance, rx_timestamp_of
from .records import CirLogRecord, read_records, write_records
from .sim import RunSummary, Scenario, run_static, run_trajectory, summarize
