import numpy as np
import pytest

from osnids.capture import (
    FlowRecord,
    deduplicate,
    extract_payload_features,
    label_packets,
    parse_capture,
    read_flow_csv,
    undersample_benign,
)
from osnids.errors import (
    BadMagic,
    EmptyFlowTable,
    NoAttackSamples,
    TruncatedHeader,
    UnreadableFile,
    ValueOutOfRange,
)
from osnids.samples import BENIGN_CLASS_ID, LabeledSample

from helpers import PCAP_MAGIC_NSEC, arp_frame, build_pcap, dedup_oracle, ipv4_packet, join_oracle


def _write(tmp_path, blob, name="capture.pcap"):
    path = tmp_path / name
    path.write_bytes(blob)
    return path


def _flow(src_ip, src_port, dst_ip, dst_port, proto, start, duration, label):
    return FlowRecord(src_ip, src_port, dst_ip, dst_port, proto, start, duration, label)


class TestParseCapture:
    def test_single_udp_packet(self, tmp_path):
        frame = ipv4_packet("10.0.0.1", "10.0.0.2", 1234, 53, "UDP", b"\x01\x02\x03\x04")
        result = parse_capture(_write(tmp_path, build_pcap([frame], timestamps=[12.5])))
        assert len(result.packets) == 1
        p = result.packets[0]
        assert p.protocol == "UDP"
        assert p.src_ip == "10.0.0.1" and p.dst_ip == "10.0.0.2"
        assert p.src_port == 1234 and p.dst_port == 53
        assert p.payload == b"\x01\x02\x03\x04"
        assert p.timestamp == pytest.approx(12.5)
        assert result.skip_count() == 0

    def test_arp_frame_skipped(self, tmp_path):
        frames = [arp_frame(), ipv4_packet("10.0.0.1", "10.0.0.2", 1, 2, "TCP", b"hi")]
        result = parse_capture(_write(tmp_path, build_pcap(frames)))
        assert len(result.packets) == 1
        assert result.packets[0].protocol == "TCP"
        assert result.skip_count() == 1
        assert result.skipped == {"non_ip": 1}

    def test_bad_magic(self, tmp_path):
        blob = (0xDEADBEEF).to_bytes(4, "big") + b"\x00" * 20
        with pytest.raises(BadMagic):
            parse_capture(_write(tmp_path, blob))

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFile):
            parse_capture(tmp_path / "missing.pcap")

    def test_truncated_global_header(self, tmp_path):
        blob = build_pcap([])[:10]
        with pytest.raises(TruncatedHeader):
            parse_capture(_write(tmp_path, blob))

    def test_truncated_record_header(self, tmp_path):
        frame = ipv4_packet("1.1.1.1", "2.2.2.2", 1, 2, "TCP", b"x")
        blob = build_pcap([frame])[:-len(frame) - 8]
        with pytest.raises(TruncatedHeader):
            parse_capture(_write(tmp_path, blob))

    def test_truncated_record_data(self, tmp_path):
        frame = ipv4_packet("1.1.1.1", "2.2.2.2", 1, 2, "TCP", b"x")
        blob = build_pcap([frame])[:-3]
        with pytest.raises(TruncatedHeader):
            parse_capture(_write(tmp_path, blob))

    def test_big_endian_and_nanosecond_variants(self, tmp_path):
        frame = ipv4_packet("10.0.0.1", "10.0.0.2", 5, 6, "UDP", b"ab")
        for le in (True, False):
            for magic in (0xA1B2C3D4, PCAP_MAGIC_NSEC):
                blob = build_pcap([frame], timestamps=[1.25], magic=magic, little_endian=le)
                result = parse_capture(_write(tmp_path, blob, f"v_{le}_{magic}.pcap"))
                assert len(result.packets) == 1
                assert result.packets[0].timestamp == pytest.approx(1.25)

    def test_non_ethernet_linktype_rejected(self, tmp_path):
        blob = build_pcap([], linktype=101)
        with pytest.raises(BadMagic):
            parse_capture(_write(tmp_path, blob))

    def test_fragment_skipped(self, tmp_path):
        frame = ipv4_packet("1.1.1.1", "2.2.2.2", 1, 2, "UDP", b"zz", frag_offset=3)
        result = parse_capture(_write(tmp_path, build_pcap([frame])))
        assert len(result.packets) == 0
        assert result.skipped == {"fragment": 1}

    def test_file_order_preserved(self, tmp_path):
        frames = [
            ipv4_packet("1.1.1.1", "2.2.2.2", 10 + i, 80, "TCP", bytes([i + 1]))
            for i in range(5)
        ]
        result = parse_capture(_write(tmp_path, build_pcap(frames)))
        assert [p.src_port for p in result.packets] == [10, 11, 12, 13, 14]


class TestExtractPayloadFeatures:
    def test_byte_mapping_and_padding(self, tmp_path):
        frame = ipv4_packet("1.1.1.1", "2.2.2.2", 1, 2, "UDP", b"\xab\x00\xff")
        packet = parse_capture(_write(tmp_path, build_pcap([frame]))).packets[0]
        vec = extract_payload_features(packet)
        assert vec.shape == (1500,)
        assert list(vec[:3]) == [171, 0, 255]
        assert not vec[3:].any()

    def test_empty_payload_absent(self, tmp_path):
        frame = ipv4_packet("1.1.1.1", "2.2.2.2", 1, 2, "TCP", b"")
        packet = parse_capture(_write(tmp_path, build_pcap([frame]))).packets[0]
        assert extract_payload_features(packet) is None

    def test_truncation_at_1500(self, tmp_path):
        frame = ipv4_packet("1.1.1.1", "2.2.2.2", 1, 2, "UDP", b"\x01" * 1600)
        packet = parse_capture(_write(tmp_path, build_pcap([frame]))).packets[0]
        vec = extract_payload_features(packet)
        assert vec.shape == (1500,)
        assert (vec == 1).all()


class TestLabelPackets:
    def test_unique_join(self, tmp_path):
        frame = ipv4_packet("10.0.0.1", "10.0.0.2", 1000, 80, "TCP", b"abc")
        packets = parse_capture(_write(tmp_path, build_pcap([frame], timestamps=[5.0]))).packets
        flows = [_flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 10.0, "DoS")]
        sample_set, report = label_packets(packets, flows)
        assert len(sample_set.samples) == 1
        assert sample_set.name_of(sample_set.samples[0].label) == "DoS"
        assert report.matched == 1 and report.no_match == 0

    def test_bidirectional_match(self, tmp_path):
        frame = ipv4_packet("10.0.0.2", "10.0.0.1", 80, 1000, "TCP", b"abc")
        packets = parse_capture(_write(tmp_path, build_pcap([frame], timestamps=[5.0]))).packets
        flows = [_flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 10.0, "PortScan")]
        sample_set, report = label_packets(packets, flows)
        assert report.matched == 1
        assert sample_set.name_of(sample_set.samples[0].label) == "PortScan"

    def test_window_tiebreak(self, tmp_path):
        frame = ipv4_packet("10.0.0.1", "10.0.0.2", 1000, 80, "TCP", b"abc")
        packets = parse_capture(_write(tmp_path, build_pcap([frame], timestamps=[25.0]))).packets
        flows = [
            _flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 10.0, "first"),
            _flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 20.0, 10.0, "second"),
        ]
        sample_set, _ = label_packets(packets, flows, benign_label="none")
        assert sample_set.name_of(sample_set.samples[0].label) == "second"
        assert join_oracle(packets, flows) == ["second"]

    def test_no_match_counted(self, tmp_path):
        frame = ipv4_packet("9.9.9.9", "8.8.8.8", 1, 2, "UDP", b"xy")
        packets = parse_capture(_write(tmp_path, build_pcap([frame]))).packets
        flows = [_flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 10.0, "BENIGN")]
        sample_set, report = label_packets(packets, flows)
        assert len(sample_set.samples) == 0
        assert report.no_match == 1

    def test_empty_payload_counted(self, tmp_path):
        frame = ipv4_packet("10.0.0.1", "10.0.0.2", 1000, 80, "TCP", b"")
        packets = parse_capture(_write(tmp_path, build_pcap([frame]))).packets
        flows = [_flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 10.0, "BENIGN")]
        sample_set, report = label_packets(packets, flows)
        assert len(sample_set.samples) == 0
        assert report.empty_payload == 1

    def test_empty_flow_table(self):
        with pytest.raises(EmptyFlowTable):
            label_packets([], [])

    def test_benign_is_class_zero(self, tmp_path):
        frames = [
            ipv4_packet("10.0.0.1", "10.0.0.2", 1000, 80, "TCP", b"a"),
            ipv4_packet("10.0.0.3", "10.0.0.4", 1001, 81, "TCP", b"b"),
        ]
        packets = parse_capture(_write(tmp_path, build_pcap(frames, timestamps=[1.0, 1.0]))).packets
        flows = [
            _flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 10.0, "BENIGN"),
            _flow("10.0.0.3", 1001, "10.0.0.4", 81, "TCP", 0.0, 10.0, "Bot"),
        ]
        sample_set, _ = label_packets(packets, flows)
        assert sample_set.class_names[BENIGN_CLASS_ID] == "BENIGN"
        labels = {sample_set.name_of(s.label) for s in sample_set.samples}
        assert labels == {"BENIGN", "Bot"}

    def test_matches_brute_force_oracle_on_random_fixtures(self, tmp_path):
        rng = np.random.default_rng(11)
        ips = [f"10.0.{i}.{j}" for i in range(3) for j in range(3)]
        flows = []
        for _ in range(100):
            a, b = rng.choice(len(ips), 2, replace=True)
            flows.append(
                _flow(
                    ips[a],
                    int(rng.integers(1, 6)) * 100,
                    ips[b],
                    int(rng.integers(1, 6)) * 100,
                    "TCP" if rng.random() < 0.5 else "UDP",
                    float(rng.integers(0, 50)),
                    float(rng.integers(0, 20)),
                    str(rng.choice(["BENIGN", "DoS", "Bot"])),
                )
            )
        frames, stamps = [], []
        for _ in range(1000):
            if rng.random() < 0.7 and flows:
                f = flows[int(rng.integers(len(flows)))]
                swap = rng.random() < 0.5
                src, dst = ((f.dst_ip, f.dst_port), (f.src_ip, f.src_port)) if swap else (
                    (f.src_ip, f.src_port),
                    (f.dst_ip, f.dst_port),
                )
                proto = f.protocol
            else:
                src = (str(rng.choice(ips)), int(rng.integers(1, 6)) * 100)
                dst = (str(rng.choice(ips)), int(rng.integers(1, 6)) * 100)
                proto = "TCP" if rng.random() < 0.5 else "UDP"
            frames.append(ipv4_packet(src[0], dst[0], src[1], dst[1], proto, bytes([int(rng.integers(1, 256))])))
            stamps.append(float(rng.integers(0, 80)))
        packets = parse_capture(_write(tmp_path, build_pcap(frames, timestamps=stamps))).packets
        assert len(packets) == 1000

        sample_set, report = label_packets(packets, flows)
        expected = join_oracle(packets, flows)
        got = iter(sample_set.samples)
        for want in expected:
            if want is None:
                continue
            assert sample_set.name_of(next(got).label) == want
        assert report.no_match == sum(1 for w in expected if w is None)
        assert report.matched == sum(1 for w in expected if w is not None)

    def test_pipeline_deterministic(self, tmp_path):
        rng = np.random.default_rng(3)
        frames = [
            ipv4_packet("10.0.0.1", "10.0.0.2", 1000, 80, "TCP", rng.bytes(40))
            for _ in range(20)
        ]
        path = _write(tmp_path, build_pcap(frames))
        flows = [_flow("10.0.0.1", 1000, "10.0.0.2", 80, "TCP", 0.0, 100.0, "BENIGN")]

        def run():
            packets = parse_capture(path).packets
            sample_set, _ = label_packets(packets, flows)
            return b"".join(s.features.tobytes() for s in sample_set.samples)

        assert run() == run()


def _sample(rng, label=0):
    feats = rng.integers(0, 256, 1500, dtype=np.int64).astype(np.uint8)
    feats[0] = max(int(feats[0]), 1)
    return LabeledSample(features=feats, label=label)


class TestDeduplicate:
    def test_exact_duplicates_collapse(self):
        rng = np.random.default_rng(0)
        s = _sample(rng)
        dup = LabeledSample(features=s.features.copy(), label=s.label)
        assert deduplicate([s, dup]) == [s]

    def test_same_features_different_labels_kept(self):
        rng = np.random.default_rng(1)
        s = _sample(rng, label=0)
        other = LabeledSample(features=s.features.copy(), label=1)
        assert len(deduplicate([s, other])) == 2

    def test_first_occurrence_order(self):
        rng = np.random.default_rng(2)
        a, b = _sample(rng), _sample(rng)
        out = deduplicate([a, b, a, b, a])
        assert out == [a, b]

    def test_planted_duplicates_match_oracle(self):
        rng = np.random.default_rng(4)
        base = [_sample(rng, label=int(rng.integers(0, 3))) for _ in range(900)]
        planted = [
            LabeledSample(features=base[i].features.copy(), label=base[i].label)
            for i in rng.choice(900, 100, replace=False)
        ]
        mixed = base + planted
        out = deduplicate(mixed)
        assert len(out) == 900
        # definition-level O(n^2) oracle on a subset (full scan is slow)
        subset = mixed[:250]
        assert deduplicate(subset) == dedup_oracle(subset)

    def test_count_equals_distinct_keys(self):
        rng = np.random.default_rng(5)
        samples = [_sample(rng, label=int(rng.integers(0, 2))) for _ in range(50)]
        samples += [LabeledSample(features=samples[i].features.copy(), label=samples[i].label) for i in range(10)]
        keys = {(s.features.tobytes(), s.label) for s in samples}
        assert len(deduplicate(samples)) == len(keys)


class TestUndersampleBenign:
    def _corpus(self, n_benign, n_attack, seed=0):
        rng = np.random.default_rng(seed)
        benign = [_sample(rng, 0) for _ in range(n_benign)]
        attacks = [_sample(rng, 1) for _ in range(n_attack)]
        return benign + attacks

    def test_exact_cap(self):
        samples = self._corpus(1000, 100)
        out = undersample_benign(samples, 1.0, seed=7)
        assert sum(1 for s in out if s.label == 0) == 100
        assert sum(1 for s in out if s.label != 0) == 100

    def test_noop_below_cap(self):
        samples = self._corpus(50, 100)
        assert undersample_benign(samples, 1.0, seed=7) == samples

    def test_deterministic(self):
        samples = self._corpus(500, 50)
        a = undersample_benign(samples, 1.0, seed=9)
        b = undersample_benign(samples, 1.0, seed=9)
        assert a == b

    def test_no_attacks_error(self):
        samples = self._corpus(10, 0)
        with pytest.raises(NoAttackSamples):
            undersample_benign(samples, 1.0, seed=0)

    def test_infinite_ratio_noop(self):
        samples = self._corpus(10, 0)
        assert undersample_benign(samples, float("inf"), seed=0) == samples

    def test_attacks_untouched_order_preserved(self):
        samples = self._corpus(30, 10)
        out = undersample_benign(samples, 1.0, seed=1)
        assert [s for s in out if s.label != 0] == [s for s in samples if s.label != 0]
        kept = [s for s in out if s.label == 0]
        positions = [samples.index(s) for s in kept]
        assert positions == sorted(positions)


class TestFlowCsv:
    def test_column_mapping(self, tmp_path):
        csv_path = tmp_path / "flows.csv"
        csv_path.write_text(
            "Src IP,Src Port,Dst IP,Dst Port,Protocol,Timestamp,Flow Duration,Label\n"
            "10.0.0.1,1000,10.0.0.2,80,6,100.5,3.5,BENIGN\n"
            "10.0.0.3,1001,10.0.0.4,81,UDP,200.0,1.0,DoS\n"
        )
        column_map = {
            "src_ip": "Src IP",
            "src_port": "Src Port",
            "dst_ip": "Dst IP",
            "dst_port": "Dst Port",
            "protocol": "Protocol",
            "start_time": "Timestamp",
            "duration": "Flow Duration",
            "label": "Label",
        }
        flows = read_flow_csv(csv_path, column_map)
        assert len(flows) == 2
        assert flows[0].protocol == "TCP" and flows[1].protocol == "UDP"
        assert flows[0].start_time == pytest.approx(100.5)

    def test_missing_mapped_column(self, tmp_path):
        csv_path = tmp_path / "flows.csv"
        csv_path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueOutOfRange):
            read_flow_csv(csv_path, {c: c for c in ("src_ip", "src_port", "dst_ip", "dst_port", "protocol", "start_time", "duration", "label")})
