import hashlib

import pytest

from fedts.errors import ParseError
from fedts.ledger import TransportLedger


def test_record_fields():
    led = TransportLedger()
    led.record(2, "relay", 1, 3, b"payload")
    r = led.records[0]
    assert (r.round, r.kind, r.sender, r.receiver, r.bytes) == (2, "relay", 1, 3, 7)
    assert r.sha256 == hashlib.sha256(b"payload").hexdigest()


def test_totals_recomputed_from_records():
    led = TransportLedger()
    for i, (s, d, n) in enumerate([(0, 1, 10), (1, 2, 20), (2, 0, 5), (0, 2, 1)]):
        led.record(i, "share", s, d, bytes(n))
    totals = led.totals()
    assert totals[0] == {"bytes_sent": 11, "bytes_received": 5, "bytes_transmitted": 16}
    assert sum(v["bytes_sent"] for v in totals.values()) == sum(v["bytes_received"] for v in totals.values())
    assert led.total_bytes() == 36
    assert [p.round for p in led.in_round(1)] == [1]


def test_csv_round_trip(tmp_path):
    led = TransportLedger()
    led.record(0, "upload", 1, 0, b"x" * 5)
    led.record(0, "broadcast", 0, 1, b"y" * 5)
    led.save(tmp_path / "l.csv")
    assert TransportLedger.load(tmp_path / "l.csv") == led


def test_bad_header(tmp_path):
    (tmp_path / "l.csv").write_text("a,b\n")
    with pytest.raises(ParseError):
        TransportLedger.load(tmp_path / "l.csv")


def test_bad_row(tmp_path):
    (tmp_path / "l.csv").write_text("round,kind,sender,receiver,bytes,sha256\n0,share,x,1,3,abc\n")
    with pytest.raises(ParseError) as exc:
        TransportLedger.load(tmp_path / "l.csv")
    assert exc.value.line == 2
