import pytest
from hypothesis import given
from hypothesis import strategies as st

from qasm.wire import (
    MAX_CID_LENGTH,
    ConnectionId,
    HeaderForm,
    InvalidCidLength,
    NotLongHeader,
    NotShortHeader,
    QuicHeader,
    TruncatedPacket,
    decode_header,
    decode_long_header,
    decode_short_header,
    encode_header,
    encode_long_header,
    encode_short_header,
    peek_dcid,
)

cids = st.binary(min_size=0, max_size=MAX_CID_LENGTH)
nonempty_cids = st.binary(min_size=1, max_size=MAX_CID_LENGTH)
payloads = st.binary(max_size=64)


@given(st.integers(0, 0xFFFFFFFF), cids, cids, payloads)
def test_long_header_roundtrip(version, dcid, scid, payload):
    data = encode_long_header(version, dcid, scid, payload)
    hdr = decode_long_header(data)
    assert (hdr.form, hdr.version, hdr.dcid, hdr.scid, hdr.payload) == (
        HeaderForm.LONG, version, dcid, scid, payload,
    )
    assert encode_header(hdr) == data
    assert peek_dcid(data, 0) == dcid


@given(nonempty_cids, payloads)
def test_short_header_roundtrip(dcid, payload):
    data = encode_short_header(dcid, payload)
    hdr = decode_short_header(data, len(dcid))
    assert hdr == QuicHeader(HeaderForm.SHORT, ConnectionId(dcid), payload=payload)
    assert encode_header(hdr) == data
    assert decode_header(data, len(dcid)) == hdr
    assert peek_dcid(data, len(dcid)) == dcid


def test_first_bytes():
    assert encode_long_header(1, b"\x01", b"")[0] & 0xC0 == 0xC0
    assert encode_short_header(b"\x01")[0] & 0xC0 == 0x40


def test_long_header_layout():
    data = encode_long_header(1, bytes.fromhex("fa12ab"), b"\xee", b"zz")
    assert data == bytes.fromhex("c0 00000001 03 fa12ab 01 ee") + b"zz"


def test_cid_longer_than_20_is_rejected():
    with pytest.raises(InvalidCidLength):
        ConnectionId(bytes(21))
    with pytest.raises(InvalidCidLength):
        encode_short_header(bytes(21))
    bad = bytes([0xC0, 0, 0, 0, 1, 21]) + bytes(30)
    with pytest.raises(InvalidCidLength):
        decode_long_header(bad)
    assert peek_dcid(bad, 0) is None


def test_cid_of_exactly_20_is_fine():
    cid = bytes(range(20))
    assert decode_long_header(encode_long_header(1, cid, cid)).dcid == cid


@pytest.mark.parametrize("data", [b"", b"\xc0", b"\xc0\x00\x00\x00\x01", b"\xc0\x00\x00\x00\x01\x08abc"])
def test_truncated_long_headers(data):
    with pytest.raises(TruncatedPacket):
        decode_long_header(data)
    assert peek_dcid(data, 0) is None


def test_truncated_short_header():
    with pytest.raises(TruncatedPacket):
        decode_short_header(b"\x40abc", 8)
    assert peek_dcid(b"\x40abc", 8) is None


def test_wrong_form():
    with pytest.raises(NotLongHeader):
        decode_long_header(b"\x40" + bytes(8))
    with pytest.raises(NotShortHeader):
        decode_short_header(b"\xc0" + bytes(8), 4)
    # fixed bit clear: not a QUIC short header
    with pytest.raises(NotShortHeader):
        decode_short_header(b"\x00" + bytes(8), 4)
    assert peek_dcid(b"\x00" + bytes(8), 4) is None


@given(st.binary(max_size=40), st.integers(0, MAX_CID_LENGTH))
def test_peek_agrees_with_decode(data, dcid_len):
    # peek stops after the DCID, so it may succeed where a full decode fails
    # on a later field, but never the other way round
    peeked = peek_dcid(data, dcid_len)
    try:
        hdr = decode_header(data, dcid_len)
    except ValueError:
        return
    assert peeked == hdr.dcid


def test_connection_id_text():
    cid = ConnectionId.from_hex("fa12ab")
    assert str(cid) == "fa12ab"
    assert cid == b"\xfa\x12\xab"
