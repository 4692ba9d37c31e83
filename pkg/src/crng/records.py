"""CIR log records: newline-delimited JSON with a base64 int16 payload.

The format round-trips bit-exactly: integer tick fields, a real first-path
index (shortest-repr JSON float), and the 1016 complex samples as
little-endian (real, imag) int16 pairs.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .constants import CIR_LEN, TIMESTAMP_MASK
from .errors import CorruptRecord
from .protocol import CrngParams, ExchangeRecord
from .radio import Cir

_FIELDS = ("exchange_id", "poll_tx_ticks", "fp_index", "fp_ticks", "n_responders",
           "samples", "ground_truth_m")


@dataclass
class CirLogRecord:
    exchange_id: int
    poll_tx_ticks: int
    fp_index: float
    fp_ticks: int
    n_responders: int
    samples: np.ndarray  # (1016, 2) int16, columns (real, imag)
    ground_truth_m: list[float] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int16)
        if self.samples.shape != (CIR_LEN, 2):
            raise ValueError(f"samples must be ({CIR_LEN}, 2) int16")
        for name in ("poll_tx_ticks", "fp_ticks"):
            if not (0 <= getattr(self, name) <= TIMESTAMP_MASK):
                raise ValueError(f"{name} outside the 40-bit range")

    @classmethod
    def from_exchange(cls, rec: ExchangeRecord) -> "CirLogRecord":
        samples = np.column_stack(
            [rec.cir.samples.real.astype(np.int16), rec.cir.samples.imag.astype(np.int16)]
        )
        return cls(
            exchange_id=rec.exchange_id,
            poll_tx_ticks=rec.poll_tx_ts,
            fp_index=float(rec.cir.fp_index),
            fp_ticks=rec.cir.fp_ticks,
            n_responders=rec.params.n_responders,
            samples=samples,
            ground_truth_m=rec.ground_truth_m,
        )

    def to_exchange(self, params: CrngParams) -> ExchangeRecord:
        cx = self.samples[:, 0].astype(float) + 1j * self.samples[:, 1].astype(float)
        cir = Cir(samples=cx, fp_index=self.fp_index, fp_ticks=self.fp_ticks)
        return ExchangeRecord(
            poll_tx_ts=self.poll_tx_ticks,
            cir=cir,
            params=params,
            ground_truth_m=self.ground_truth_m,
            exchange_id=self.exchange_id,
        )

    def to_json(self) -> str:
        payload = base64.b64encode(self.samples.astype("<i2").tobytes()).decode("ascii")
        obj = {
            "exchange_id": self.exchange_id,
            "poll_tx_ticks": self.poll_tx_ticks,
            "fp_index": self.fp_index,
            "fp_ticks": self.fp_ticks,
            "n_responders": self.n_responders,
            "samples": payload,
            "ground_truth_m": self.ground_truth_m,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str, index: int) -> "CirLogRecord":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"bad JSON: {exc}", index) from exc
        if tuple(obj.keys()) != _FIELDS:
            raise CorruptRecord(f"unexpected fields {tuple(obj.keys())}", index)
        try:
            raw = base64.b64decode(obj["samples"], validate=True)
            samples = np.frombuffer(raw, dtype="<i2").reshape(CIR_LEN, 2)
        except (ValueError, TypeError) as exc:
            raise CorruptRecord(f"bad sample payload: {exc}", index) from exc
        try:
            return cls(
                exchange_id=int(obj["exchange_id"]),
                poll_tx_ticks=int(obj["poll_tx_ticks"]),
                fp_index=float(obj["fp_index"]),
                fp_ticks=int(obj["fp_ticks"]),
                n_responders=int(obj["n_responders"]),
                samples=samples.copy(),
                ground_truth_m=obj["ground_truth_m"],
            )
        except (ValueError, TypeError) as exc:
            raise CorruptRecord(str(exc), index) from exc


def write_records(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path):
    """Yield records; raises CorruptRecord with the failing index."""
    with open(path) as fh:
        for i, line in enumerate(fh):
            if line.strip() == "":
                if line.endswith("\n"):
                    continue
                raise CorruptRecord("truncated final line", i)
            if not line.endswith("\n"):
                raise CorruptRecord("truncated final line", i)
            yield CirLogRecord.from_json(line.strip(), i)
