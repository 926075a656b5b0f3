"""Per-payload transport accounting."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError

LEDGER_COLUMNS = ("round", "kind", "sender", "receiver", "bytes", "sha256")


@dataclass(frozen=True)
class Payload:
    round: int
    kind: str  # "share", "relay", "upload", "broadcast"
    sender: int
    receiver: int
    bytes: int
    sha256: str


@dataclass
class TransportLedger:
    records: list[Payload] = field(default_factory=list)

    def record(self, round_index: int, kind: str, sender: int, receiver: int, payload: bytes) -> None:
        self.records.append(
            Payload(round_index, kind, sender, receiver, len(payload),
                    hashlib.sha256(payload).hexdigest())
        )

    def __len__(self) -> int:
        return len(self.records)

    def in_round(self, round_index: int) -> list[Payload]:
        return [r for r in self.records if r.round == round_index]

    def totals(self) -> dict[int, dict[str, int]]:
        """bytes_sent / bytes_received / bytes_transmitted per node id."""
        out: dict[int, dict[str, int]] = {}
        for r in self.records:
            for node in (r.sender, r.receiver):
                out.setdefault(node, {"bytes_sent": 0, "bytes_received": 0, "bytes_transmitted": 0})
            out[r.sender]["bytes_sent"] += r.bytes
            out[r.receiver]["bytes_received"] += r.bytes
        for v in out.values():
            v["bytes_transmitted"] = v["bytes_sent"] + v["bytes_received"]
        return dict(sorted(out.items()))

    def total_bytes(self) -> int:
        return sum(r.bytes for r in self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for r in self.records:
            w.writerow([r.round, r.kind, r.sender, r.receiver, r.bytes, r.sha256])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "TransportLedger":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != LEDGER_COLUMNS:
                raise ParseError(f"ledger header must be {','.join(LEDGER_COLUMNS)}", path, 1)
            records = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    rnd, kind, s, r, b, digest = row
                    records.append(Payload(int(rnd), kind, int(s), int(r), int(b), digest))
                except ValueError as exc:
                    raise ParseError(f"bad ledger row ({exc})", path, lineno) from None
        return cls(records)
