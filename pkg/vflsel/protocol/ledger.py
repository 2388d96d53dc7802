import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict

BYTES_PER_SCALAR = 4


class Phase(str, Enum):
    PRETRAIN = "pretrain"
    STAGE2_UPLOAD = "stage2_upload"
    STAGE3 = "stage3"
    POST_FS = "post_fs"
    # single-phase baselines (standard VFL, group lasso)
    TRAIN = "train"


def payload_bytes(n_scalars: int) -> int:
    """Wire size of a float payload priced at 32 bits per scalar."""
    return int(n_scalars) * BYTES_PER_SCALAR


@dataclass
class PhaseCounter:
    bytes_up: int = 0
    bytes_down: int = 0
    rounds: int = 0

    @property
    def total(self) -> int:
        return self.bytes_up + self.bytes_down


class CommLedger:
    """Monotone byte counters per phase and direction.

    Only embeddings (party -> server) and embedding gradients (server -> party) are priced; indices,
    metadata and the significant component sets travel for free. Writes are serialized by a lock so that
    parallel party work cannot interleave counter updates.
    """

    def __init__(self, phase: Phase = Phase.PRETRAIN):
        self.counters: Dict[Phase, PhaseCounter] = {p: PhaseCounter() for p in Phase}
        self.phase = Phase(phase)
        self._lock = threading.Lock()

    def set_phase(self, phase: Phase) -> None:
        self.phase = Phase(phase)

    def record_upload(self, n_scalars: int) -> int:
        nbytes = payload_bytes(n_scalars)
        if nbytes < 0:
            raise ValueError("Cannot record a negative payload.")
        with self._lock:
            self.counters[self.phase].bytes_up += nbytes
        return nbytes

    def record_download(self, n_scalars: int) -> int:
        nbytes = payload_bytes(n_scalars)
        if nbytes < 0:
            raise ValueError("Cannot record a negative payload.")
        with self._lock:
            self.counters[self.phase].bytes_down += nbytes
        return nbytes

    def record_round(self) -> None:
        with self._lock:
            self.counters[self.phase].rounds += 1

    @property
    def bytes_up(self) -> int:
        return sum(x.bytes_up for x in self.counters.values())

    @property
    def bytes_down(self) -> int:
        return sum(x.bytes_down for x in self.counters.values())

    @property
    def total_bytes(self) -> int:
        return sum(x.total for x in self.counters.values())

    @property
    def rounds(self) -> int:
        return sum(x.rounds for x in self.counters.values())

    def phase_bytes(self, phase: Phase) -> int:
        return self.counters[Phase(phase)].total

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        return {
            p.value: {"bytes_up": c.bytes_up, "bytes_down": c.bytes_down, "rounds": c.rounds}
            for p, c in self.counters.items()
        }

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


def ledger_total_mb(ledger: CommLedger) -> float:
    """Total traffic in decimal megabytes."""
    return ledger.total_bytes / 1e6
