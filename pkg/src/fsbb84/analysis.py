"""Closed-form link-budget predictions for cross-validating the Monte Carlo.

For a scenario with per-state mean photon numbers ``mu_s``, end-to-end
transmittance ``eta`` (channel loss plus lumped receiver efficiency) and a
temporal gate of width ``g``:

* in-gate signal click probability per pulse::

      p_sig = mean_s(1 - exp(-mu_s * eta)) * A_gate

  where ``A_gate = erf(g / (2 sqrt(2) sigma_t))`` is the gate acceptance
  of the total Gaussian timing spread (pulse duration plus detector
  jitter, FWHMs added in quadrature);

* in-gate background probability per pulse over all four APDs::

      p_bg = 4 * rate * g

* QBER decomposition: background clicks land on a random detector
  (error probability 1/2 after sifting), misaligned analyzers flip
  matched-basis outcomes with probability ``e_pol = sin^2(m)``::

      qber = (0.5 p_bg + e_pol p_sig) / (p_sig + p_bg)

* sifted rate: half of all in-gate clicks survive basis reconciliation::

      sifted_rate = rep_rate * (p_sig + p_bg) / 2

Deliberate approximations (each far below the Monte-Carlo statistical
floor at the scales this oracle is used): multi-photon double clicks,
dead-time losses, clock-recovery residuals, gate spill into neighboring
slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .channel import loss_breakdown
from .errors import ComparisonRefusedError
from .scenario import Scenario
from .source import FWHM_TO_SIGMA


def gate_acceptance(gate_width_ps: float, pulse_fwhm_ps: float, jitter_fwhm_ps: float) -> float:
    """Fraction of the Gaussian arrival-time spread inside the gate."""
    fwhm = math.hypot(pulse_fwhm_ps, jitter_fwhm_ps)
    if fwhm == 0.0:
        return 1.0
    sigma = fwhm / FWHM_TO_SIGMA
    return math.erf(gate_width_ps / 2.0 / (sigma * math.sqrt(2.0)))


@dataclass(frozen=True)
class PredictedMetrics:
    p_signal_click_per_pulse: float
    p_background_per_pulse: float
    qber_background_part: float
    qber_misalignment_part: float
    qber_total: float
    sifted_rate_bps: float
    total_loss_db: float
    scenario_hash: str

    def to_dict(self) -> dict:
        return {
            "p_signal_click_per_pulse": self.p_signal_click_per_pulse,
            "p_background_per_pulse": self.p_background_per_pulse,
            "qber_background_part": self.qber_background_part,
            "qber_misalignment_part": self.qber_misalignment_part,
            "qber_total": self.qber_total,
            "sifted_rate_bps": self.sifted_rate_bps,
            "total_loss_db": self.total_loss_db,
            "scenario_hash": self.scenario_hash,
        }


def predict(scenario: Scenario) -> PredictedMetrics:
    """Pure analytic prediction; no RNG involved."""
    src, ch, rx = scenario.source, scenario.channel, scenario.receiver
    link_db = loss_breakdown(ch, src.wavelength_nm).total_db
    eta = 10.0 ** (-(link_db + rx.efficiency_db) / 10.0)

    acc = gate_acceptance(scenario.sync.gate_width_ps, src.pulse_fwhm_ps, rx.jitter_fwhm_ps)
    p_click = sum(1.0 - math.exp(-mu * eta) for mu in src.mu_per_state) / 4.0
    p_sig = p_click * acc
    p_bg = 4.0 * rx.background_rate_cps_per_apd * scenario.sync.gate_width_ps * 1e-12

    total = p_sig + p_bg
    e_pol = math.sin(math.radians(rx.misalignment_deg)) ** 2
    qber_bg = 0.5 * p_bg / total if total > 0 else 0.0
    qber_mis = e_pol * p_sig / total if total > 0 else 0.0

    return PredictedMetrics(
        p_signal_click_per_pulse=p_sig,
        p_background_per_pulse=p_bg,
        qber_background_part=qber_bg,
        qber_misalignment_part=qber_mis,
        qber_total=qber_bg + qber_mis,
        sifted_rate_bps=src.rep_rate_hz * total * 0.5,
        total_loss_db=link_db,
        scenario_hash=scenario.hash_hex(),
    )


@dataclass(frozen=True)
class MetricDeviation:
    metric: str
    predicted: float
    observed: float
    deviation: float  # relative for rates, absolute for QBER
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "predicted": self.predicted,
            "observed": self.observed,
            "deviation": self.deviation,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class DeviationReport:
    scenario_hash: str
    entries: tuple[MetricDeviation, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failed_metrics(self) -> list[str]:
        return [e.metric for e in self.entries if not e.passed]

    def to_dict(self) -> dict:
        return {
            "scenario_hash": self.scenario_hash,
            "passed": self.passed,
            "entries": [e.to_dict() for e in self.entries],
        }


def compare(predicted: PredictedMetrics, session_report,
            rate_tolerance: float = 0.15,
            qber_tolerance_pts: float = 0.4,
            stat_floor_sigmas: float = 3.0) -> DeviationReport:
    """Check a Monte-Carlo session against the analytic prediction.

    Tolerances are the configured bands widened to at least
    ``stat_floor_sigmas`` binomial standard deviations, so small sessions
    are judged by statistics, long ones by the configured band. Refuses to
    compare results from different scenarios.
    """
    if predicted.scenario_hash != session_report.scenario_hash:
        raise ComparisonRefusedError(
            f"scenario hash mismatch: prediction {predicted.scenario_hash[:12]}..., "
            f"report {session_report.scenario_hash[:12]}...")

    n_sifted = session_report.sifted_key_length
    rate_floor = stat_floor_sigmas / math.sqrt(n_sifted) if n_sifted else math.inf
    rate_tol = max(rate_tolerance, rate_floor)
    rate_obs = session_report.sifted_key_rate_bps
    rate_dev = (abs(rate_obs - predicted.sifted_rate_bps) / predicted.sifted_rate_bps
                if predicted.sifted_rate_bps > 0 else abs(rate_obs))

    q = predicted.qber_total
    n_disc = session_report.qber.disclosed_count
    qber_floor = (stat_floor_sigmas * math.sqrt(q * (1.0 - q) / n_disc)
                  if n_disc else math.inf)
    qber_tol = max(qber_tolerance_pts / 100.0, qber_floor)
    qber_dev = abs(session_report.qber.qber - q)

    entries = (
        MetricDeviation("sifted_rate_bps", predicted.sifted_rate_bps, rate_obs,
                        rate_dev, rate_tol, rate_dev <= rate_tol),
        MetricDeviation("qber", q, session_report.qber.qber,
                        qber_dev, qber_tol, qber_dev <= qber_tol),
    )
    return DeviationReport(scenario_hash=predicted.scenario_hash, entries=entries)
