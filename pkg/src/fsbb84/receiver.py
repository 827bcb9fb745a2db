"""Bob's analyzer bench: passive basis choice, four APDs, time tagging.

Detection chain for every arriving photon:

1. lumped receiver efficiency (spectral filter, fiber coupling, APD
   quantum efficiency) as one Bernoulli trial;
2. passive 50/50 basis choice;
3. polarization projection onto the chosen analyzer axis pair with a
   residual misalignment rotation, Malus-law probabilities;
4. Gaussian timing jitter and quantization to the tagger resolution.

Background (solar + dark) counts are injected as four independent Poisson
processes, one per APD, at a common configured rate. Each detector then
applies non-paralyzable dead-time suppression in time order, and the four
streams merge into one non-decreasing tag stream.

Detector indices follow the state encoding: H=0, V=1, D=2, A=3, so
``basis = detector >> 1`` and ``bit = detector & 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import PhotonArrivals
from .errors import ConfigError, ContractViolationError
from .seeds import STREAM_BACKGROUND, STREAM_RECEIVER, spawn
from .source import FWHM_TO_SIGMA, STATE_ANGLES_DEG

DET_H, DET_V, DET_D, DET_A = 0, 1, 2, 3
DETECTOR_NAMES = "HVDA"

RANDOM_BIT = "random_bit"
DISCARD = "discard"


@dataclass(frozen=True)
class ReceiverConfig:
    efficiency_db: float = 12.0
    misalignment_deg: float = 0.0
    background_rate_cps_per_apd: float = 0.0
    jitter_fwhm_ps: float = 350.0
    dead_time_ns: float = 50.0
    tag_resolution_ps: int = 1
    double_click_policy: str = RANDOM_BIT
    rng_seed: int = 0

    def __post_init__(self):
        if self.efficiency_db < 0:
            raise ConfigError("must be >= 0 (a loss)", "receiver.efficiency_db")
        if self.background_rate_cps_per_apd < 0:
            raise ConfigError("must be >= 0", "receiver.background_rate_cps_per_apd")
        if self.jitter_fwhm_ps < 0:
            raise ConfigError("must be >= 0", "receiver.jitter_fwhm_ps")
        if self.dead_time_ns < 0:
            raise ConfigError("must be >= 0", "receiver.dead_time_ns")
        if self.tag_resolution_ps < 1:
            raise ConfigError("must be >= 1", "receiver.tag_resolution_ps")
        if self.double_click_policy not in (RANDOM_BIT, DISCARD):
            raise ConfigError(f"unknown policy {self.double_click_policy!r}",
                              "receiver.double_click_policy")

    @property
    def efficiency(self) -> float:
        return 10.0 ** (-self.efficiency_db / 10.0)

    @property
    def jitter_sigma_ps(self) -> float:
        return self.jitter_fwhm_ps / FWHM_TO_SIGMA


@dataclass
class TimeTags:
    """Merged tagger output (times non-decreasing).

    ``truth_pulse_index`` is simulation-only provenance: the originating
    pulse for signal tags, -1 for background. The protocol never reads it.
    """

    detector: np.ndarray  # uint8
    time_ps: np.ndarray  # int64
    truth_pulse_index: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.time_ps)

    def per_detector_counts(self) -> dict[str, int]:
        return {DETECTOR_NAMES[d]: int(np.sum(self.detector == d)) for d in range(4)}


def project(angle_deg: float, analyzer_basis: int, misalignment_deg: float,
            rng: np.random.Generator) -> int:
    """Project one photon onto the analyzer; returns the clicking detector.

    Probability of the basis' first detector (H or D) is cos^2 of the
    angle between the photon polarization and that analyzer axis.
    """
    axis = 45.0 * analyzer_basis + misalignment_deg
    p_first = math.cos(math.radians(angle_deg - axis)) ** 2
    return 2 * analyzer_basis + int(rng.random() >= p_first)


def _projection_table(misalignment_deg: float) -> np.ndarray:
    """p(first detector) indexed [state, basis]."""
    table = np.empty((4, 2))
    for s in range(4):
        for b in range(2):
            axis = 45.0 * b + misalignment_deg
            table[s, b] = math.cos(math.radians(STATE_ANGLES_DEG[s] - axis)) ** 2
    return table


def _dead_time_filter(times: np.ndarray, dead_ps: int) -> np.ndarray:
    """Boolean keep-mask for a sorted per-detector time array."""
    n = len(times)
    keep = np.ones(n, dtype=bool)
    if dead_ps <= 0 or n < 2:
        return keep
    last = -np.inf
    t = times  # local alias; plain loop, rates keep n small
    for i in range(n):
        if t[i] - last >= dead_ps or last == -np.inf:
            last = t[i]
        else:
            keep[i] = False
    return keep


def detect(arrivals: PhotonArrivals, config: ReceiverConfig, session_duration_s: float,
           window_ps: Optional[tuple[int, int]] = None,
           with_truth: bool = False) -> TimeTags:
    """Turn photon arrivals into the merged, dead-time-filtered tag stream.

    ``window_ps`` bounds the background injection (defaults to
    [0, duration)); pass the session's receiver-clock window so background
    covers the same span as the signal.
    """
    t_arr = arrivals.arrival_time_ps
    if len(t_arr) > 1 and np.any(np.diff(t_arr) < 0):
        raise ContractViolationError("arrivals must be sorted by time")

    g = spawn(config.rng_seed, STREAM_RECEIVER)
    res = int(config.tag_resolution_ps)

    # Efficiency thinning
    n = len(arrivals)
    passed = g.random(n) < config.efficiency if config.efficiency < 1.0 else np.ones(n, bool)
    states = arrivals.state[passed]
    sig_times = t_arr[passed].astype(np.float64)
    sig_truth = arrivals.pulse_index[passed]

    # Passive basis choice + Malus projection
    m = len(states)
    bases = g.integers(0, 2, size=m, dtype=np.uint8)
    p_first = _projection_table(config.misalignment_deg)[states, bases]
    detectors = (2 * bases + (g.random(m) >= p_first)).astype(np.uint8)

    # Timing jitter, then tagger quantization
    if config.jitter_sigma_ps > 0.0 and m:
        sig_times = sig_times + g.normal(0.0, config.jitter_sigma_ps, size=m)
    sig_times = (np.rint(sig_times / res) * res).astype(np.int64)

    # Background: one Poisson process per APD over the observation window
    if window_ps is None:
        window_ps = (0, int(round(session_duration_s * 1e12)))
    w0, w1 = int(window_ps[0]), int(window_ps[1])
    bg = spawn(config.rng_seed, STREAM_BACKGROUND)
    bg_per_det = []
    for d in range(4):
        n_bg = bg.poisson(config.background_rate_cps_per_apd * session_duration_s)
        t = bg.integers(w0, max(w1, w0 + 1), size=n_bg, dtype=np.int64)
        bg_per_det.append((np.rint(t / res) * res).astype(np.int64))

    # Per-detector merge + dead time, then global merge
    dead_ps = int(round(config.dead_time_ns * 1000.0))
    out_det, out_t, out_truth = [], [], []
    for d in range(4):
        sel = detectors == d
        t_all = np.concatenate([sig_times[sel], bg_per_det[d]])
        tr_all = np.concatenate([sig_truth[sel],
                                 np.full(len(bg_per_det[d]), -1, dtype=np.int64)])
        order = np.argsort(t_all, kind="stable")
        t_all, tr_all = t_all[order], tr_all[order]
        keep = _dead_time_filter(t_all, dead_ps)
        out_t.append(t_all[keep])
        out_truth.append(tr_all[keep])
        out_det.append(np.full(int(keep.sum()), d, dtype=np.uint8))

    det = np.concatenate(out_det)
    t = np.concatenate(out_t)
    tr = np.concatenate(out_truth)
    order = np.argsort(t, kind="stable")
    return TimeTags(detector=det[order], time_ps=t[order],
                    truth_pulse_index=tr[order] if with_truth else None)


def classify_clicks(pulse_index: np.ndarray, detector: np.ndarray, policy: str,
                    rng: np.random.Generator):
    """Resolve per-pulse click multiplicity.

    Groups gate-accepted tags by assigned pulse. Pulses with one tag pass
    through; multi-click pulses are either dropped (``discard``) or
    resolved to a uniformly chosen detector among the distinct clicking
    detectors (``random_bit``). Returns
    (pulse_index, detector, n_multi, n_discarded), sorted by pulse index.
    """
    if policy not in (RANDOM_BIT, DISCARD):
        raise ConfigError(f"unknown policy {policy!r}", "double_click_policy")
    if len(pulse_index) == 0:
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8), 0, 0)

    order = np.argsort(pulse_index, kind="stable")
    idx = np.asarray(pulse_index, dtype=np.int64)[order]
    det = np.asarray(detector, dtype=np.uint8)[order]
    uniq, starts, counts = np.unique(idx, return_index=True, return_counts=True)

    singles = counts == 1
    out_idx = [uniq[singles]]
    out_det = [det[starts[singles]]]
    n_multi = int(np.sum(~singles))
    n_discarded = 0

    if n_multi:
        if policy == DISCARD:
            n_discarded = n_multi
        else:
            m_idx, m_det = [], []
            for s, c, u in zip(starts[~singles], counts[~singles], uniq[~singles]):
                choices = np.unique(det[s:s + c])
                m_idx.append(u)
                m_det.append(choices[rng.integers(0, len(choices))])
            out_idx.append(np.asarray(m_idx, dtype=np.int64))
            out_det.append(np.asarray(m_det, dtype=np.uint8))

    idx_out = np.concatenate(out_idx)
    det_out = np.concatenate(out_det)
    order = np.argsort(idx_out, kind="stable")
    return idx_out[order], det_out[order], n_multi, n_discarded


# ---------------------------------------------------------------------------
# Binary tag dump (detector u8, time_ps i64 LE)
# ---------------------------------------------------------------------------

_TAG_DTYPE = np.dtype([("detector", "u1"), ("time_ps", "<i8")])


def dump_tags(tags: TimeTags, path) -> None:
    rec = np.empty(len(tags), dtype=_TAG_DTYPE)
    rec["detector"] = tags.detector
    rec["time_ps"] = tags.time_ps
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def load_tags(path) -> TimeTags:
    with open(path, "rb") as f:
        rec = np.frombuffer(f.read(), dtype=_TAG_DTYPE)
    return TimeTags(detector=rec["detector"].copy(), time_ps=rec["time_ps"].copy())
