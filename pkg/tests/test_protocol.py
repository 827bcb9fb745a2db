"""Protocol module: wire format, sifting operations, session state machine."""

import dataclasses
import math
import threading

import numpy as np
import pytest

from fsbb84.errors import (CorruptFrameError, InconclusiveSessionError,
                           NeedMoreBytes, ProtocolViolationError)
from fsbb84.protocol import (Abort, DetectionReport, Done, Hello, MatchMask,
                             MsgType, QberResult, SampleBits, SampleIndices,
                             SessionParams, SessionParamsMsg, SiftedKey,
                             alice_match, bob_detection_report, bob_sift,
                             decode_frame, encode_frame, estimate_qber,
                             loopback_pair, run_session)
from fsbb84.protocol.session import ROLE_ALICE, ROLE_BOB, select_sample
from fsbb84.source import LazyPulseTrain, SourceConfig, build_pulse_train


def _random_message(rng):
    t = rng.integers(0, 9)
    n = int(rng.integers(0, 50))
    if t == 0:
        return Hello(session_id=int(rng.integers(0, 2**63)), role=int(rng.integers(0, 2)),
                     scenario_hash=bytes(rng.integers(0, 256, size=32, dtype=np.uint8)))
    if t == 1:
        return SessionParamsMsg(session_id=int(rng.integers(0, 2**32)),
                                n_pulses=int(rng.integers(1, 2**40)),
                                qber_abort_threshold=float(rng.random() * 0.4),
                                sample_fraction=float(rng.random()),
                                benchmark_mode=bool(rng.integers(0, 2)),
                                sample_seed=int(rng.integers(0, 2**63)))
    if t == 2:
        idx = np.sort(rng.choice(2**40, size=n, replace=False)).astype(np.int64)
        return DetectionReport(pulse_index=idx, basis=rng.integers(0, 2, n, dtype=np.uint8))
    if t == 3:
        return MatchMask(mask=rng.integers(0, 2, n, dtype=np.uint8))
    if t == 4:
        return SampleIndices(positions=np.sort(rng.choice(2**30, size=n, replace=False)).astype(np.int64))
    if t == 5:
        return SampleBits(bits=rng.integers(0, 2, n, dtype=np.uint8))
    if t == 6:
        return QberResult(disclosed_count=n, error_count=int(rng.integers(0, n + 1)),
                          qber=float(rng.random()), abort=bool(rng.integers(0, 2)))
    if t == 7:
        return Abort(reason="".join(chr(c) for c in rng.integers(32, 127, size=n)))
    return Done(session_id=int(rng.integers(0, 2**63)))


# --- wire format ---------------------------------------------------------------

def test_empty_report_roundtrip():
    msg = DetectionReport(pulse_index=np.array([], dtype=np.int64),
                          basis=np.array([], dtype=np.uint8))
    decoded, consumed = decode_frame(encode_frame(msg))
    assert decoded == msg
    assert consumed == len(encode_frame(msg))


def test_large_mask_roundtrip_and_size():
    n = 1_000_000
    bits = np.random.default_rng(1).integers(0, 2, n, dtype=np.uint8)
    frame = encode_frame(MatchMask(mask=bits))
    # header(10) + count(8) + ceil(n/8) + crc(4)
    assert len(frame) == 10 + 8 + math.ceil(n / 8) + 4
    decoded, _ = decode_frame(frame)
    assert np.array_equal(decoded.mask, bits)


def test_roundtrip_randomized_all_types():
    rng = np.random.default_rng(2)
    for _ in range(2_000):
        msg = _random_message(rng)
        decoded, consumed = decode_frame(encode_frame(msg))
        assert decoded == msg
        assert consumed == len(encode_frame(msg))


def test_truncated_frame_needs_more():
    frame = encode_frame(Done(session_id=7))
    for cut in range(len(frame)):
        with pytest.raises(NeedMoreBytes):
            decode_frame(frame[:cut])


def test_checksum_corruption_detected():
    frame = bytearray(encode_frame(Hello(session_id=1, role=0, scenario_hash=bytes(32))))
    frame[15] ^= 0xFF
    with pytest.raises(CorruptFrameError):
        decode_frame(bytes(frame))


def test_bad_magic_version_type():
    good = bytearray(encode_frame(Done(session_id=1)))
    bad_magic = bytearray(good)
    bad_magic[0] = ord("X")
    with pytest.raises(CorruptFrameError):
        decode_frame(bytes(bad_magic))
    import zlib

    def refrm(version=1, mtype=0x31):
        import struct
        payload = struct.pack("<Q", 1)
        header = struct.pack("<4sBBI", b"QKD1", version, mtype, len(payload))
        crc = zlib.crc32(header + payload)
        return header + payload + struct.pack("<I", crc)

    with pytest.raises(CorruptFrameError):
        decode_frame(refrm(version=9))
    with pytest.raises(CorruptFrameError):
        decode_frame(refrm(mtype=0x7F))


def test_fuzz_no_crashes():
    rng = np.random.default_rng(3)
    rejected = 0
    for _ in range(100_000):
        n = int(rng.integers(0, 64))
        buf = bytes(rng.integers(0, 256, size=n, dtype=np.uint8))
        try:
            decode_frame(buf)
        except (NeedMoreBytes, CorruptFrameError):
            rejected += 1
    assert rejected == 100_000  # random bytes never parse as a valid frame


def test_multiple_frames_in_buffer():
    a, b = Done(session_id=1), Abort(reason="x")
    buf = encode_frame(a) + encode_frame(b)
    m1, off = decode_frame(buf)
    m2, off = decode_frame(buf, off)
    assert m1 == a and m2 == b and off == len(buf)


# --- sifting operations ----------------------------------------------------------

def test_detection_report_sorted_and_bases():
    rep = bob_detection_report(np.array([9, 3, 7]), np.array([0, 3, 2], dtype=np.uint8))
    assert list(rep.pulse_index) == [3, 7, 9]
    assert list(rep.basis) == [1, 1, 0]  # detectors A,D -> diag; H -> rect


def test_detection_report_rejects_duplicates():
    with pytest.raises(ProtocolViolationError):
        bob_detection_report(np.array([3, 3]), np.array([0, 1], dtype=np.uint8))


def test_alice_match_all_or_none():
    train = build_pulse_train(SourceConfig(rng_seed=5), 1_000)
    idx = np.arange(0, 1_000, 7, dtype=np.int64)
    rep = DetectionReport(pulse_index=idx, basis=train.basis[idx])
    mask, key = alice_match(train, rep, 1_000)
    assert mask.mask.all()
    assert np.array_equal(key.bits, train.bit[idx])
    rep2 = DetectionReport(pulse_index=idx, basis=1 - train.basis[idx])
    mask2, key2 = alice_match(train, rep2, 1_000)
    assert not mask2.mask.any()
    assert len(key2) == 0


def test_alice_match_uniform_bases_keep_half():
    n = 400_000
    train = build_pulse_train(SourceConfig(rng_seed=6), n)
    idx = np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(7)
    rep = DetectionReport(pulse_index=idx, basis=rng.integers(0, 2, n, dtype=np.uint8))
    mask, _ = alice_match(train, rep, n)
    frac = mask.mask.mean()
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / n)


def test_alice_match_out_of_range_aborts():
    train = LazyPulseTrain(SourceConfig(rng_seed=8), 100)
    rep = DetectionReport(pulse_index=np.array([50, 100]),
                          basis=np.array([0, 0], dtype=np.uint8))
    with pytest.raises(ProtocolViolationError):
        alice_match(train, rep, 100)


def test_bob_sift_bit_convention():
    # H->0, V->1, D->0, A->1
    rep = DetectionReport(pulse_index=np.array([0, 1, 2, 3]),
                          basis=np.array([0, 0, 1, 1], dtype=np.uint8))
    detectors = np.array([0, 1, 2, 3], dtype=np.uint8)
    key = bob_sift(rep, detectors, MatchMask(mask=np.ones(4, dtype=np.uint8)))
    assert list(key.bits) == [0, 1, 0, 1]


def test_bob_sift_mask_length_mismatch():
    rep = DetectionReport(pulse_index=np.array([0]), basis=np.array([0], dtype=np.uint8))
    with pytest.raises(ProtocolViolationError):
        bob_sift(rep, np.array([0], dtype=np.uint8), MatchMask(mask=np.ones(2, dtype=np.uint8)))


def test_noiseless_end_to_end_keys_identical():
    n = 200_000
    train = build_pulse_train(SourceConfig(rng_seed=9), n)
    # Bob measures every pulse in a random basis with ideal detectors
    rng = np.random.default_rng(10)
    bob_basis = rng.integers(0, 2, n, dtype=np.uint8)
    detectors = (2 * bob_basis + np.where(bob_basis == train.basis, train.bit,
                                          rng.integers(0, 2, n))).astype(np.uint8)
    rep = bob_detection_report(np.arange(n), detectors)
    mask, alice_key = alice_match(train, rep, n)
    bob_key = bob_sift(rep, detectors, mask)
    assert np.array_equal(alice_key.bits, bob_key.bits)
    assert np.array_equal(alice_key.pulse_indices, bob_key.pulse_indices)


def test_single_flip_detected():
    n = 10_000
    train = build_pulse_train(SourceConfig(rng_seed=11), n)
    detectors = (2 * train.basis + train.bit).astype(np.uint8)
    detectors[1234] ^= 1  # flip one outcome within its basis
    rep = bob_detection_report(np.arange(n), detectors)
    mask, alice_key = alice_match(train, rep, n)
    bob_key = bob_sift(rep, detectors, mask)
    mism = np.nonzero(alice_key.bits != bob_key.bits)[0]
    assert len(mism) == 1
    assert alice_key.pulse_indices[mism[0]] == 1234


# --- QBER estimation ----------------------------------------------------------------

def _keys(bits_a, bits_b):
    idx = np.arange(len(bits_a), dtype=np.int64)
    return (SiftedKey(bits=np.asarray(bits_a, dtype=np.uint8), pulse_indices=idx),
            SiftedKey(bits=np.asarray(bits_b, dtype=np.uint8), pulse_indices=idx))


def test_qber_identical_keys():
    a, b = _keys([0, 1, 1, 0] * 50, [0, 1, 1, 0] * 50)
    params = SessionParams(benchmark_mode=True)
    rep, rem_a, rem_b = estimate_qber(a, b, params, np.random.default_rng(0))
    assert rep.qber == 0.0 and not rep.abort
    assert len(rem_a) == 0  # benchmark discloses everything


def test_qber_above_threshold_aborts():
    rng = np.random.default_rng(1)
    n = 10_000
    a_bits = rng.integers(0, 2, n, dtype=np.uint8)
    flips = rng.random(n) < 0.12
    b_bits = a_bits ^ flips
    a, b = _keys(a_bits, b_bits)
    rep, _, _ = estimate_qber(a, b, SessionParams(), np.random.default_rng(2))
    assert rep.abort
    assert abs(rep.qber - flips.mean()) < 1e-12


def test_qber_exact_at_threshold_no_abort():
    # abort iff qber > threshold, strictly
    a, b = _keys([0] * 100, [1] * 10 + [0] * 90)
    rep, _, _ = estimate_qber(a, b, SessionParams(qber_abort_threshold=0.10),
                              np.random.default_rng(3))
    assert rep.qber == 0.10
    assert not rep.abort


def test_qber_known_flip_rate_counted_exactly():
    rng = np.random.default_rng(4)
    n = 20_000
    a_bits = rng.integers(0, 2, n, dtype=np.uint8)
    flip_at = rng.choice(n, size=n // 20, replace=False)  # exactly 5%
    b_bits = a_bits.copy()
    b_bits[flip_at] ^= 1
    a, b = _keys(a_bits, b_bits)
    rep, _, _ = estimate_qber(a, b, SessionParams(benchmark_mode=True),
                              np.random.default_rng(5))
    assert rep.error_count == n // 20
    assert rep.qber == 0.05


def test_qber_sampled_mode_removes_disclosed():
    rng = np.random.default_rng(6)
    n = 10_000
    bits = rng.integers(0, 2, n, dtype=np.uint8)
    a, b = _keys(bits, bits)
    params = SessionParams(sample_fraction=0.25, benchmark_mode=False, rng_seed=7)
    rep, rem_a, rem_b = estimate_qber(a, b, params, np.random.default_rng(7))
    assert rep.disclosed_count == 2_500
    assert len(rem_a) == 7_500
    assert np.array_equal(rem_a.bits, rem_b.bits)


def test_qber_empty_key_inconclusive():
    a, b = _keys([], [])
    with pytest.raises(InconclusiveSessionError):
        estimate_qber(a, b, SessionParams(), np.random.default_rng(8))


def test_select_sample_sizes():
    rng = np.random.default_rng(9)
    assert len(select_sample(100, SessionParams(benchmark_mode=True), rng)) == 100
    params = SessionParams(sample_fraction=0.1, benchmark_mode=False)
    pos = select_sample(1000, params, rng)
    assert len(pos) == 100
    assert len(np.unique(pos)) == 100
    assert np.all(np.diff(pos) > 0)
