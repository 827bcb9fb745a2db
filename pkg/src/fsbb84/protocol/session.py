"""Two-party BB84 post-processing over a framed byte stream.

Both roles walk the same phase sequence::

    HELLO -> SESSION_PARAMS -> (quantum phase) -> DETECTION_REPORT
          -> MATCH_MASK -> SAMPLE_INDICES + SAMPLE_BITS -> QBER_RESULT
          -> DONE (or ABORT at any decision point)

Bob measures and reports pulse indices with the measurement basis only.
Alice answers with the basis-match mask. Bob then discloses a random
sample of his sifted bits; Alice counts mismatches, publishes the QBER,
and both abort if it exceeds the threshold. In benchmark mode the whole
sifted key is disclosed, which reproduces the reference measurements'
bookkeeping (sifted rate counts all basis-matched bits).

A handshake mismatch (session id or scenario hash) ends the session in an
abort state; only transport death or malformed flow raise
:class:`SessionFailedError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from ..errors import (InconclusiveSessionError, ProtocolViolationError,
                      SessionFailedError)
from ..simulate import QuantumPhase, alice_train, simulate_quantum_phase
from .framing import (Abort, DetectionReport, Done, Hello, MatchMask,
                      QberResult, SampleBits, SampleIndices, SessionParamsMsg)
from .params import QberReport, SessionParams, SiftedKey

if TYPE_CHECKING:
    from ..scenario import Scenario

ROLE_ALICE = "alice"
ROLE_BOB = "bob"
_ROLE_CODE = {ROLE_ALICE: 0, ROLE_BOB: 1}


def bob_detection_report(pulse_index: np.ndarray, detector: np.ndarray) -> DetectionReport:
    """Build Bob's report: sorted pulse indices plus measurement bases.

    Input must already be deduplicated (one detector per pulse, see
    classify_clicks); the bit value (detector & 1) never leaves Bob.
    """
    idx = np.asarray(pulse_index, dtype=np.int64)
    det = np.asarray(detector, dtype=np.uint8)
    order = np.argsort(idx, kind="stable")
    idx, det = idx[order], det[order]
    if len(idx) > 1 and np.any(np.diff(idx) == 0):
        raise ProtocolViolationError("detection report contains duplicate pulse indices")
    return DetectionReport(pulse_index=idx, basis=(det >> 1).astype(np.uint8))


def alice_match(train, report: DetectionReport, n_pulses: int) -> tuple[MatchMask, SiftedKey]:
    """Alice's basis reconciliation: mask plus her sifted key."""
    idx = report.pulse_index
    if len(idx):
        if idx.min() < 0 or idx.max() >= n_pulses:
            raise ProtocolViolationError(
                f"report index out of range (n_pulses={n_pulses})")
        if len(idx) > 1 and np.any(np.diff(idx) <= 0):
            raise ProtocolViolationError("report indices must be strictly increasing")
    basis, bits = train.states_at(idx)
    keep = basis == report.basis
    return (MatchMask(mask=keep.astype(np.uint8)),
            SiftedKey(bits=bits[keep], pulse_indices=idx[keep]))


def bob_sift(report: DetectionReport, detectors: np.ndarray, mask: MatchMask) -> SiftedKey:
    """Bob's key: the bit encoded by his detector at every kept pulse."""
    if len(mask) != len(report):
        raise ProtocolViolationError(
            f"mask length {len(mask)} != report length {len(report)}")
    keep = mask.mask.astype(bool)
    det = np.asarray(detectors, dtype=np.uint8)
    return SiftedKey(bits=(det[keep] & 1).astype(np.uint8),
                     pulse_indices=report.pulse_index[keep])


def select_sample(key_length: int, params: SessionParams,
                  rng: np.random.Generator) -> np.ndarray:
    """Bob's disclosed positions (sorted) into the sifted key."""
    if params.benchmark_mode or params.sample_fraction >= 1.0:
        return np.arange(key_length, dtype=np.int64)
    n = int(np.ceil(params.sample_fraction * key_length))
    return np.sort(rng.choice(key_length, size=n, replace=False)).astype(np.int64)


def estimate_qber(alice_key: SiftedKey, bob_key: SiftedKey, params: SessionParams,
                  rng: np.random.Generator) -> tuple[QberReport, SiftedKey, SiftedKey]:
    """Reference single-process QBER estimation (both halves in one call).

    Returns the report plus both parties' remaining keys (disclosed
    positions removed; empty in benchmark mode).
    """
    if len(alice_key) != len(bob_key):
        raise ProtocolViolationError("sifted keys have different lengths")
    if len(alice_key) == 0:
        raise InconclusiveSessionError("no sifted bits to estimate QBER from")
    positions = select_sample(len(bob_key), params, rng)
    report = _count_errors(alice_key, positions, bob_key.bits[positions], params)
    keep = np.ones(len(alice_key), dtype=bool)
    keep[positions] = False
    rem_a = SiftedKey(bits=alice_key.bits[keep], pulse_indices=alice_key.pulse_indices[keep])
    rem_b = SiftedKey(bits=bob_key.bits[keep], pulse_indices=bob_key.pulse_indices[keep])
    return report, rem_a, rem_b


def _count_errors(alice_key: SiftedKey, positions: np.ndarray, disclosed_bits: np.ndarray,
                  params: SessionParams) -> QberReport:
    if len(positions) != len(disclosed_bits):
        raise ProtocolViolationError("sample indices/bits length mismatch")
    if len(positions) == 0:
        raise InconclusiveSessionError("empty QBER sample")
    if len(positions) and (positions.min() < 0 or positions.max() >= len(alice_key)):
        raise ProtocolViolationError("sample position out of range")
    errors = int(np.sum(alice_key.bits[positions] != disclosed_bits))
    qber = errors / len(positions)
    return QberReport(disclosed_count=int(len(positions)), error_count=errors,
                      qber=qber, abort=qber > params.qber_abort_threshold)


@dataclass
class SessionReport:
    """Role-independent session outcome (canonically serializable)."""

    scenario_name: str
    scenario_hash: str
    session_id: int
    role: str
    completed: bool
    abort: bool
    abort_reason: str
    n_pulses: int
    duration_s: float
    sifted_key_length: int
    sifted_key_rate_bps: float
    remaining_key_length: int
    qber: QberReport
    counts: dict = field(default_factory=dict)
    loss_accounting: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario_name": self.scenario_name,
            "scenario_hash": self.scenario_hash,
            "session_id": self.session_id,
            "role": self.role,
            "completed": self.completed,
            "abort": self.abort,
            "abort_reason": self.abort_reason,
            "n_pulses": self.n_pulses,
            "duration_s": self.duration_s,
            "sifted_key_length": self.sifted_key_length,
            "sifted_key_rate_bps": self.sifted_key_rate_bps,
            "remaining_key_length": self.remaining_key_length,
            "qber": self.qber.to_dict(),
            "counts": self.counts,
            "loss_accounting": self.loss_accounting,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_dict(d: dict) -> "SessionReport":
        q = d["qber"]
        return SessionReport(
            scenario_name=d["scenario_name"],
            scenario_hash=d["scenario_hash"],
            session_id=d["session_id"],
            role=d["role"],
            completed=d["completed"],
            abort=d["abort"],
            abort_reason=d["abort_reason"],
            n_pulses=d["n_pulses"],
            duration_s=d["duration_s"],
            sifted_key_length=d["sifted_key_length"],
            sifted_key_rate_bps=d["sifted_key_rate_bps"],
            remaining_key_length=d["remaining_key_length"],
            qber=QberReport(disclosed_count=q["disclosed_count"], error_count=q["error_count"],
                            qber=q["qber"], abort=q["abort"]),
            counts=d["counts"],
            loss_accounting=d["loss_accounting"],
        )


def _loss_accounting(scenario: Scenario) -> dict:
    from ..channel import loss_breakdown

    acct = loss_breakdown(scenario.channel, scenario.source.wavelength_nm).to_dict()
    acct["receiver_efficiency_db"] = scenario.receiver.efficiency_db
    return acct


def _abort_report(scenario: Scenario, role: str, reason: str) -> SessionReport:
    return SessionReport(
        scenario_name=scenario.name,
        scenario_hash=scenario.hash_hex(),
        session_id=scenario.protocol.session_id,
        role=role,
        completed=True,
        abort=True,
        abort_reason=reason,
        n_pulses=scenario.n_pulses,
        duration_s=scenario.simulated_duration_s,
        sifted_key_length=0,
        sifted_key_rate_bps=0.0,
        remaining_key_length=0,
        qber=QberReport(disclosed_count=0, error_count=0, qber=0.0, abort=True),
        counts={},
        loss_accounting=_loss_accounting(scenario),
    )


def _session_params_msg(scenario: Scenario) -> SessionParamsMsg:
    p = scenario.protocol
    return SessionParamsMsg(
        session_id=p.session_id,
        n_pulses=scenario.n_pulses,
        qber_abort_threshold=p.qber_abort_threshold,
        sample_fraction=p.sample_fraction,
        benchmark_mode=p.benchmark_mode,
        sample_seed=p.rng_seed,
    )


def _expect(message, expected_type, phase: str):
    if isinstance(message, Abort):
        raise _PeerAborted(message.reason)
    if not isinstance(message, expected_type):
        raise SessionFailedError(
            f"expected {expected_type.__name__}, got {type(message).__name__}", phase=phase)
    return message


class _PeerAborted(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def run_session(role: str, transport, scenario: Scenario,
                replay_tags=None, quantum: Optional[QuantumPhase] = None) -> SessionReport:
    """Execute one party of a session over ``transport``.

    ``quantum`` lets the caller inject a precomputed quantum phase (the
    in-process runner shares one simulation between threads); otherwise
    Bob simulates it from the scenario (or replays ``replay_tags``).
    """
    if role not in (ROLE_ALICE, ROLE_BOB):
        raise ValueError(f"role must be '{ROLE_ALICE}' or '{ROLE_BOB}'")
    phase_box = ["handshake"]
    try:
        # --- HELLO exchange -------------------------------------------------
        transport.send_message(Hello(session_id=scenario.protocol.session_id,
                                     role=_ROLE_CODE[role],
                                     scenario_hash=scenario.hash_bytes()))
        peer = _expect(transport.recv_message(), Hello, phase_box[0])
        if peer.role == _ROLE_CODE[role]:
            transport.send_message(Abort(reason="both parties claim the same role"))
            return _abort_report(scenario, role, "role-conflict")
        if peer.session_id != scenario.protocol.session_id:
            transport.send_message(Abort(reason="session id mismatch"))
            return _abort_report(scenario, role, "session-id-mismatch")
        if peer.scenario_hash != scenario.hash_bytes():
            transport.send_message(Abort(reason="scenario hash mismatch"))
            return _abort_report(scenario, role, "parameter-mismatch")

        # --- SESSION_PARAMS (Alice authoritative, Bob verifies) -------------
        phase_box[0] = "params"
        local_params = _session_params_msg(scenario)
        if role == ROLE_ALICE:
            transport.send_message(local_params)
        else:
            got = _expect(transport.recv_message(), SessionParamsMsg, phase_box[0])
            if got != local_params:
                transport.send_message(Abort(reason="session parameter mismatch"))
                return _abort_report(scenario, role, "parameter-mismatch")

        if role == ROLE_BOB:
            return _run_bob(transport, scenario, replay_tags, quantum, phase_box)
        return _run_alice(transport, scenario, phase_box)

    except _PeerAborted as e:
        return _abort_report(scenario, role, f"peer-abort: {e.reason}")
    except SessionFailedError as e:
        if e.phase == "unknown":
            raise SessionFailedError(str(e), phase=phase_box[0]) from e
        raise


def _finish_report(scenario: Scenario, role: str, qber: QberReport, sifted_len: int,
                   remaining_len: int, counts: dict) -> SessionReport:
    duration = scenario.simulated_duration_s
    return SessionReport(
        scenario_name=scenario.name,
        scenario_hash=scenario.hash_hex(),
        session_id=scenario.protocol.session_id,
        role=role,
        completed=True,
        abort=qber.abort,
        abort_reason="qber-above-threshold" if qber.abort else "",
        n_pulses=scenario.n_pulses,
        duration_s=duration,
        sifted_key_length=sifted_len,
        sifted_key_rate_bps=sifted_len / duration,
        remaining_key_length=remaining_len,
        qber=qber,
        counts=counts,
        loss_accounting=_loss_accounting(scenario),
    )


def _run_bob(transport, scenario: Scenario, replay_tags, quantum, phase_box) -> SessionReport:
    phase_box[0] = "quantum"
    if quantum is None:
        quantum = simulate_quantum_phase(scenario, replay_tags=replay_tags)

    phase_box[0] = "report"
    # classified arrays are already index-sorted, exactly the report order
    report = bob_detection_report(quantum.classified_index, quantum.classified_detector)
    transport.send_message(report)

    phase_box[0] = "sift"
    mask = _expect(transport.recv_message(), MatchMask, phase_box[0])
    key = bob_sift(report, quantum.classified_detector, mask)

    phase_box[0] = "qber"
    if len(key) == 0:
        transport.send_message(Abort(reason="no sifted bits"))
        raise InconclusiveSessionError("no sifted bits to estimate QBER from")
    rng = np.random.default_rng(scenario.protocol.rng_seed)
    positions = select_sample(len(key), scenario.protocol, rng)
    transport.send_message(SampleIndices(positions=positions))
    transport.send_message(SampleBits(bits=key.bits[positions]))

    result = _expect(transport.recv_message(), QberResult, phase_box[0])
    qber = QberReport(disclosed_count=result.disclosed_count, error_count=result.error_count,
                      qber=result.qber, abort=result.abort)

    phase_box[0] = "done"
    transport.send_message(Done(session_id=scenario.protocol.session_id))
    _expect(transport.recv_message(), Done, phase_box[0])

    remaining = len(key) - len(positions)
    return _finish_report(scenario, ROLE_BOB, qber, len(key), remaining, quantum.counts())


def _run_alice(transport, scenario: Scenario, phase_box) -> SessionReport:
    phase_box[0] = "quantum"
    train = alice_train(scenario)

    phase_box[0] = "report"
    report = _expect(transport.recv_message(), DetectionReport, phase_box[0])
    try:
        mask, key = alice_match(train, report, scenario.n_pulses)
    except ProtocolViolationError as e:
        transport.send_message(Abort(reason=str(e)))
        return _abort_report(scenario, ROLE_ALICE, f"protocol-violation: {e}")
    transport.send_message(mask)

    phase_box[0] = "qber"
    if len(key) == 0:
        msg = transport.recv_message()
        if isinstance(msg, Abort):
            raise InconclusiveSessionError("no sifted bits to estimate QBER from")
        raise SessionFailedError("expected abort on empty key", phase=phase_box[0])
    sample_idx = _expect(transport.recv_message(), SampleIndices, phase_box[0])
    sample_bits = _expect(transport.recv_message(), SampleBits, phase_box[0])
    qber = _count_errors(key, sample_idx.positions, sample_bits.bits, scenario.protocol)
    transport.send_message(QberResult(disclosed_count=qber.disclosed_count,
                                      error_count=qber.error_count,
                                      qber=qber.qber, abort=qber.abort))

    phase_box[0] = "done"
    _expect(transport.recv_message(), Done, phase_box[0])
    transport.send_message(Done(session_id=scenario.protocol.session_id))

    remaining = len(key) - qber.disclosed_count
    return _finish_report(scenario, ROLE_ALICE, qber, len(key), remaining, {})
