import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssi_access import hashchain
from ssi_access.crypto_core import canonicalize


def build(n, path=None):
    log = hashchain.JsonlLog(path)
    entries, prev = [], hashchain.GENESIS_PREV
    for i in range(1, n + 1):
        e = hashchain.seal({"seq_no": i, "prev_hash": prev, "payload": {"i": i}})
        log.append(e)
        entries.append(e)
        prev = e["txn_hash"]
    log.close()
    return entries


def test_genesis_prev_is_zero_digest():
    assert hashchain.GENESIS_PREV == "0" * 64


def test_empty_chain_ok(tmp_path):
    assert hashchain.check_entries([])
    assert hashchain.check_file(tmp_path / "missing.jsonl")
    (tmp_path / "empty.jsonl").write_bytes(b"")
    assert hashchain.check_file(tmp_path / "empty.jsonl")


@given(st.integers(1, 20), st.data())
def test_any_field_edit_detected(n, data):
    entries = build(n)
    assert hashchain.check_entries(entries)
    k = data.draw(st.integers(0, n - 1))
    bad = [dict(e) for e in entries]
    bad[k]["payload"] = {"i": -1}
    check = hashchain.check_entries(bad)
    assert not check and check.first_bad_seq == k + 1


def test_reorder_and_gap_detected():
    entries = build(4)
    assert hashchain.check_entries([entries[0], entries[2]]).first_bad_seq == 2
    assert hashchain.check_entries([entries[1], entries[0]]).first_bad_seq == 1


def test_file_round_trip(tmp_path):
    p = tmp_path / "log.jsonl"
    entries = build(5, p)
    assert list(hashchain.iter_file_entries(p)) == entries
    assert hashchain.JsonlLog(p).load() == entries
    assert p.read_bytes() == b"".join(canonicalize(e) + b"\n" for e in entries)


def test_every_byte_flip_names_a_link(tmp_path):
    p = tmp_path / "log.jsonl"
    build(5, p)
    raw = p.read_bytes()
    line_of = []
    line = 1
    for b in raw:
        line_of.append(line)
        if b == 0x0A:
            line += 1
    for i in range(len(raw)):
        flipped = bytearray(raw)
        flipped[i] ^= 0x01
        p.write_bytes(bytes(flipped))
        check = hashchain.check_file(p)
        assert not check.ok, i
        # a flipped newline merges or splits lines, so the named link may be the next one
        assert check.first_bad_seq in (line_of[i], line_of[i] + 1), (i, check)


def test_non_canonical_whitespace_detected(tmp_path):
    p = tmp_path / "log.jsonl"
    build(2, p)
    lines = p.read_bytes().split(b"\n")
    lines[1] = lines[1].replace(b":", b": ", 1)
    p.write_bytes(b"\n".join(lines))
    check = hashchain.check_file(p)
    assert check.first_bad_seq == 2 and "canonical" in check.detail
