import json
import socket
import struct

import dpkt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malpaca import capture
from malpaca.capture import Direction, PacketRecord, extract_connections, parse_capture
from malpaca.errors import MalformedHeader, UnreadableFile


def _dpkt_tcp_pcap(path, n=10):
    """Independent writer: 10 TCP/IPv4 frames with assorted payload sizes."""
    with open(path, "wb") as fh:
        w = dpkt.pcap.Writer(fh)
        for i in range(n):
            tcp = dpkt.tcp.TCP(sport=40000 + i, dport=80, flags=dpkt.tcp.TH_ACK, data=b"x" * (i * 37))
            ip = dpkt.ip.IP(
                src=socket.inet_aton("10.0.0.2"), dst=socket.inet_aton("192.0.2.7"),
                p=dpkt.ip.IP_PROTO_TCP, data=tcp,
            )
            eth = dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\x04" * 6, type=dpkt.ethernet.ETH_TYPE_IP, data=ip)
            w.writepkt(bytes(eth), ts=1_600_000_000 + i * 0.25)


def test_empty_jsonl(tmp_path):
    p = tmp_path / "a.jsonl"
    p.write_text("")
    cap = parse_capture(p)
    assert cap.records == [] and cap.skipped_non_ip == 0 and cap.malformed == []


def test_jsonl_malformed_line_is_noted(tmp_path):
    p = tmp_path / "a.jsonl"
    good = {"ts": 1.5, "src_ip": "10.0.0.2", "dst_ip": "10.0.0.3", "src_port": 1, "dst_port": 2, "ip_size": 60}
    p.write_text(json.dumps(good) + "\n{not json\n")
    cap = parse_capture(p)
    assert len(cap.records) == 1
    assert len(cap.malformed) == 1 and cap.malformed[0].line_no == 2
    assert cap.records[0].sample_id == "a"


@pytest.mark.parametrize("bad", [
    {"ts": 1, "src_ip": "10.0.0.2", "dst_ip": "10.0.0.3", "src_port": 1, "dst_port": 2},
    {"ts": 1, "src_ip": "10.0.0.2", "dst_ip": "10.0.0.3", "src_port": 70000, "dst_port": 2, "ip_size": 60},
    {"ts": "x", "src_ip": "10.0.0.2", "dst_ip": "10.0.0.3", "src_port": 1, "dst_port": 2, "ip_size": 60},
    {"ts": 1, "src_ip": "nope", "dst_ip": "10.0.0.3", "src_port": 1, "dst_port": 2, "ip_size": 60},
])
def test_jsonl_field_validation(tmp_path, bad):
    p = tmp_path / "a.jsonl"
    p.write_text(json.dumps(bad) + "\n")
    cap = parse_capture(p)
    assert cap.records == [] and len(cap.malformed) == 1


def test_pcap_sizes_match_reference_dissector(tmp_path):
    p = tmp_path / "ref.pcap"
    _dpkt_tcp_pcap(p)
    with open(p, "rb") as fh:
        ref = [(ts, dpkt.ethernet.Ethernet(buf).data) for ts, buf in dpkt.pcap.Reader(fh)]
    cap = parse_capture(p)
    assert len(cap.records) == 10
    for rec, (ts, ip) in zip(cap.records, ref):
        assert rec.ip_size == ip.len
        assert (rec.src_port, rec.dst_port) == (ip.data.sport, ip.data.dport)
        assert rec.src_ip == "10.0.0.2" and rec.dst_ip == "192.0.2.7"
        assert rec.timestamp == pytest.approx(ts, abs=1e-6)


def test_written_pcap_reads_back_in_reference_dissector(tmp_path):
    recs = [PacketRecord(1.0 + i / 8, "10.0.0.2", "203.0.113.9", 5000, 53 + i, 40 + 13 * i, "x") for i in range(6)]
    recs.append(PacketRecord(3.0, "2001:db8::1", "2001:db8::2", 1234, 443, 100, "x"))
    p = tmp_path / "x.pcap"
    capture.write_pcap(recs, p)
    with open(p, "rb") as fh:
        frames = [dpkt.ethernet.Ethernet(buf) for _, buf in dpkt.pcap.Reader(fh)]
    assert [f.data.len for f in frames[:6]] == [r.ip_size for r in recs[:6]]
    assert frames[6].data.plen + 40 == 100
    assert parse_capture(p).records == recs


def test_pcap_and_jsonl_agree(tmp_path):
    recs = [PacketRecord(10 + i * 0.001234, "10.0.0.2", "198.51.100.1", 999, 80, 60 + i, "s") for i in range(25)]
    capture.write_pcap(recs, tmp_path / "s.pcap")
    capture.write_jsonl(recs, tmp_path / "s.jsonl")
    a = parse_capture(tmp_path / "s.pcap").records
    b = parse_capture(tmp_path / "s.jsonl").records
    assert a == b


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.pcap"
    p.write_bytes(b"\x00" * 40)
    with pytest.raises(MalformedHeader):
        parse_capture(p)


def test_non_ethernet_linktype(tmp_path):
    p = tmp_path / "raw.pcap"
    p.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101))
    with pytest.raises(MalformedHeader):
        parse_capture(p)


def test_missing_file(tmp_path):
    with pytest.raises(UnreadableFile):
        parse_capture(tmp_path / "nothing.pcap")


def test_big_endian_nanosecond_pcap(tmp_path):
    ip = dpkt.ip.IP(src=socket.inet_aton("10.0.0.2"), dst=socket.inet_aton("10.0.0.9"), p=17,
                    data=dpkt.udp.UDP(sport=5353, dport=5353, data=b"abc"))
    frame = bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_IP, data=ip))
    blob = struct.pack(">IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, 1)
    blob += struct.pack(">IIII", 100, 500_000_000, len(frame), len(frame)) + frame
    p = tmp_path / "be.pcap"
    p.write_bytes(blob)
    (rec,) = parse_capture(p).records
    assert rec.timestamp_us == 100_500_000 and rec.ip_size == 31 and rec.dst_port == 5353


def test_non_ip_frames_are_skipped(tmp_path):
    arp = bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_ARP, data=b"\x00" * 28))
    blob = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    blob += struct.pack("<IIII", 1, 0, len(arp), len(arp)) + arp
    p = tmp_path / "arp.pcap"
    p.write_bytes(blob)
    cap = parse_capture(p)
    assert cap.records == [] and cap.skipped_non_ip == 1


def _pk(t, src, dst, size=60, sample="s"):
    return PacketRecord(t, src, dst, 1000, 80, size, sample)


def test_directions_are_separate_connections():
    pk = [_pk(0.0, "A", "B"), _pk(0.1, "B", "A")]
    res = extract_connections(pk, length=20, min_len=1, localhost=("A",))
    assert [c.key for c in res.connections] == [("s", "A", "B"), ("s", "B", "A")]
    assert [c.direction for c in res.connections] == [Direction.OUTGOING, Direction.INCOMING]


def test_empty_packet_list():
    assert extract_connections([]).connections == []


def test_truncation_to_length():
    pk = [_pk(i * 0.01, "A", "B", size=40 + i) for i in range(25)]
    (c,) = extract_connections(pk, length=20, min_len=20).connections
    assert c.length == 20 and c.original_length == 25
    assert c.f_ps == tuple(range(40, 60))
    assert c.f_in[0] == 0.0 and c.f_in[1] == pytest.approx(10.0)


def test_short_connections_are_discarded():
    pk = [_pk(i, "A", "B") for i in range(5)] + [_pk(i, "A", "C") for i in range(20)]
    res = extract_connections(pk, length=20)
    assert [c.key[2] for c in res.connections] == ["C"]
    assert res.discarded_connections == 1 and res.discarded_packets == 5


def test_out_of_order_packets_sorted_by_time():
    pk = [_pk(0.3, "A", "B", 3), _pk(0.1, "A", "B", 1), _pk(0.2, "A", "B", 2)]
    (c,) = extract_connections(pk, length=3).connections
    assert c.f_ps == (1, 2, 3)
    assert c.f_in == pytest.approx((0.0, 100.0, 100.0))


def test_same_pair_in_two_samples_is_two_connections():
    pk = [_pk(0, "A", "B", sample="x"), _pk(0, "A", "B", sample="y")]
    assert len(extract_connections(pk, length=1).connections) == 2


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 10_000)), max_size=80),
       st.integers(1, 6))
def test_connections_partition_kept_packets(rows, length):
    pk = [_pk(t / 1000, f"h{a}", f"h{b}") for a, b, t in rows]
    res = extract_connections(pk, length=length, min_len=1)
    kept = sum(c.length for c in res.connections)
    assert kept + res.truncated_packets + res.discarded_packets == len(pk)
    for c in res.connections:
        assert 1 <= c.length <= length
        assert c.f_in[0] == 0.0 and all(x >= 0 for x in c.f_in)
    assert len({c.key for c in res.connections}) == len(res.connections)


def test_connections_csv_roundtrip(tmp_path, five_kind_fixture):
    conns, _ = five_kind_fixture
    capture.write_connections_csv(conns, tmp_path / "c.csv")
    assert capture.read_connections_csv(tmp_path / "c.csv") == conns


def test_key_format_roundtrip():
    key = ("run|1", "2001:db8::1", "10.0.0.1")
    assert capture.parse_key(capture.format_key(key)) == key
