"""Free-space propagation: link budget and Monte-Carlo photon survival.

Loss model
----------
Three physical contributions plus a calibration residual:

* geometric capture of a Gaussian beam by a circular aperture:
  ``loss = -10 log10(1 - exp(-2 a^2 / w(z)^2))`` with ``w(z)`` the 1/e^2
  beam radius after propagating ``z`` from a waist ``w0 = tx_diameter/2``,
  ``w(z) = w0 sqrt(1 + (z/z_R)^2)``, ``z_R = pi w0^2 / lambda``;
* atmospheric extinction from meteorological visibility (Kim model):
  ``sigma = (3.91/V) (lambda_nm/550)^-q`` per km (natural units), with the
  piecewise size parameter ``q(V)``; in dB: ``4.343 sigma d_km``;
* ``extra_loss_db``: optics train, filter insertion, pointing residual --
  whatever the calibrated scenario needs to match the measured total.

In retro-reflected mode the beam traverses the path twice, so geometric
and atmospheric legs double and the beam-splitter penalty is added.

Transmission is Monte-Carlo per photon: each photon of a pulse survives
independently with probability ``10^(-total/10)`` times a slow log-normal
fading factor resampled every ``fading_block_ms`` (mean 1, so fading
redistributes but does not change average loss).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .seeds import STREAM_CHANNEL, STREAM_EMIT_JITTER, STREAM_FADING, spawn
from .source import (SHARD_SIZE, STATE_ANGLES_DEG, PulseShard, PulseTrain,
                     SourceConfig, emit_jitter_ps, iter_shards)

SPEED_OF_LIGHT_M_S = 299_792_458.0


@dataclass(frozen=True)
class ChannelConfig:
    """Free-space link description.

    Beam sizes are 1/e^2 *diameters* in cm, as usually quoted for
    collimators and beam expanders. ``propagation_delay_ps`` defaults to
    the geometric value (doubled path in retro mode) when left as None.
    """

    distance_m: float
    tx_beam_diameter_e2_cm: float
    rx_aperture_diameter_e2_cm: float
    visibility_km: float = 10.0
    extra_loss_db: float = 0.0
    retro_mode: bool = False
    splitter_penalty_db: float = 6.0
    retro_flip_prob: float = 0.0
    fading_sigma: float = 0.0
    fading_block_ms: float = 10.0
    propagation_delay_ps: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.distance_m < 0:
            raise ConfigError("must be >= 0", "channel.distance_m")
        if self.tx_beam_diameter_e2_cm <= 0:
            raise ConfigError("must be > 0", "channel.tx_beam_diameter_e2_cm")
        if self.rx_aperture_diameter_e2_cm <= 0:
            raise ConfigError("must be > 0", "channel.rx_aperture_diameter_e2_cm")
        if self.visibility_km <= 0:
            raise ConfigError("must be > 0", "channel.visibility_km")
        if self.splitter_penalty_db < 0:
            raise ConfigError("must be >= 0", "channel.splitter_penalty_db")
        if self.fading_sigma < 0:
            raise ConfigError("must be >= 0", "channel.fading_sigma")
        if self.fading_block_ms <= 0:
            raise ConfigError("must be > 0", "channel.fading_block_ms")
        if not 0.0 <= self.retro_flip_prob <= 1.0:
            raise ConfigError("must be in [0, 1]", "channel.retro_flip_prob")

    @property
    def path_length_m(self) -> float:
        return 2.0 * self.distance_m if self.retro_mode else self.distance_m

    def delay_ps(self) -> int:
        if self.propagation_delay_ps is not None:
            return int(self.propagation_delay_ps)
        return int(round(self.path_length_m / SPEED_OF_LIGHT_M_S * 1e12))


def beam_radius_m(waist_radius_m: float, distance_m: float, wavelength_m: float) -> float:
    """1/e^2 Gaussian beam radius after free propagation from the waist."""
    if waist_radius_m <= 0:
        raise ConfigError("beam waist must be > 0", "channel.tx_beam_diameter_e2_cm")
    z_r = math.pi * waist_radius_m**2 / wavelength_m
    return waist_radius_m * math.sqrt(1.0 + (distance_m / z_r) ** 2)


def geometric_loss_db(config: ChannelConfig, wavelength_nm: float) -> float:
    """One-way aperture-capture loss in dB at ``config.distance_m``."""
    w0 = config.tx_beam_diameter_e2_cm / 200.0  # cm diameter -> m radius
    a = config.rx_aperture_diameter_e2_cm / 200.0
    w = beam_radius_m(w0, config.distance_m, wavelength_nm * 1e-9)
    captured = 1.0 - math.exp(-2.0 * a * a / (w * w))
    return -10.0 * math.log10(captured)


def _kim_q(visibility_km: float) -> float:
    v = visibility_km
    if v > 50.0:
        return 1.6
    if v > 6.0:
        return 1.3
    if v > 1.0:
        return 0.16 * v + 0.34
    if v > 0.5:
        return v - 0.5
    return 0.0


def atmospheric_loss_db(visibility_km: float, wavelength_nm: float, distance_m: float) -> float:
    """Kim-model extinction over ``distance_m`` in dB."""
    if visibility_km <= 0:
        raise ConfigError("must be > 0", "channel.visibility_km")
    sigma_per_km = (3.91 / visibility_km) * (wavelength_nm / 550.0) ** (-_kim_q(visibility_km))
    return 10.0 / math.log(10.0) * sigma_per_km * (distance_m / 1000.0)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-contribution link loss, already including path doubling."""

    geometric_db: float
    atmospheric_db: float
    extra_db: float
    splitter_db: float

    @property
    def total_db(self) -> float:
        return self.geometric_db + self.atmospheric_db + self.extra_db + self.splitter_db

    def to_dict(self) -> dict:
        return {
            "geometric_db": self.geometric_db,
            "atmospheric_db": self.atmospheric_db,
            "extra_db": self.extra_db,
            "splitter_db": self.splitter_db,
            "total_db": self.total_db,
        }


def loss_breakdown(config: ChannelConfig, wavelength_nm: float) -> LossBreakdown:
    legs = 2.0 if config.retro_mode else 1.0
    return LossBreakdown(
        geometric_db=legs * geometric_loss_db(config, wavelength_nm),
        atmospheric_db=legs * atmospheric_loss_db(config.visibility_km, wavelength_nm, config.distance_m),
        extra_db=config.extra_loss_db,
        splitter_db=config.splitter_penalty_db if config.retro_mode else 0.0,
    )


def total_link_loss_db(config: ChannelConfig, wavelength_nm: float) -> float:
    return loss_breakdown(config, wavelength_nm).total_db


@dataclass
class PhotonArrivals:
    """Photons reaching Bob's bench, on Bob's (pre-tagger) clock.

    ``pulse_index`` keeps the originating pulse for ground-truth checks;
    ``state`` is the polarization state after any retro flip.
    """

    pulse_index: np.ndarray  # int64
    state: np.ndarray  # uint8
    arrival_time_ps: np.ndarray  # int64

    def __len__(self) -> int:
        return len(self.pulse_index)

    @property
    def polarization_angle_deg(self) -> np.ndarray:
        return STATE_ANGLES_DEG[self.state]


def fading_factor(config: ChannelConfig, block_index: int) -> float:
    """Log-normal transmittance factor for one fading block (mean 1)."""
    if config.fading_sigma == 0.0:
        return 1.0
    s2 = math.log1p(config.fading_sigma**2)
    g = spawn(config.rng_seed, STREAM_FADING, block_index)
    return float(np.exp(g.normal(-0.5 * s2, math.sqrt(s2))))


def _survivors(counts: np.ndarray, p_survive,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(pulse positions with >=1 survivor, survivor count there).

    ``p_survive`` is a scalar (no fading) or a per-pulse array.
    Single-photon pulses (the vast majority at mu ~ 0.1) take a fast
    Bernoulli path; higher counts use binomial draws.
    """
    nz = np.nonzero(counts)[0]
    if nz.size == 0:
        return nz, np.empty(0, dtype=np.int64)
    c = counts[nz]
    scalar_p = np.isscalar(p_survive)
    p = p_survive if scalar_p else p_survive[nz]
    out = np.zeros(nz.size, dtype=np.int64)
    single = c == 1
    if single.any():
        u = rng.random(int(single.sum()))
        out[single] = u < (p if scalar_p else p[single])
    multi = ~single
    if multi.any():
        out[multi] = rng.binomial(c[multi].astype(np.int64), p if scalar_p else p[multi])
    keep = out > 0
    return nz[keep], out[keep]


def _block_survival_prob(start: int, n: int, period_ps: float, transmittance: float,
                         config: ChannelConfig):
    """Per-pulse survival probability including block-constant fading.

    Returns a scalar when fading is off, else a per-pulse array.
    """
    if config.fading_sigma == 0.0:
        return min(transmittance, 1.0)
    block_ps = int(config.fading_block_ms * 1e9)
    local = np.arange(n, dtype=np.int64)
    blocks = ((start + local) * int(period_ps)) // block_ps
    uniq = np.unique(blocks)
    factors = np.array([fading_factor(config, int(b)) for b in uniq])
    return np.clip(transmittance * factors, 0.0, 1.0)[np.searchsorted(uniq, blocks)]


def _mc_shard(start: int, states: np.ndarray, counts: np.ndarray, emit_time_of,
              config: ChannelConfig, transmittance: float, period_ps: float,
              true_clock):
    """Monte-Carlo one index range.

    ``emit_time_of(pos)`` maps surviving local pulse positions to emission
    times in ps (float64). Returns (pulse_index, state, arrival_time_ps)
    arrays, one entry per surviving photon.
    """
    g = spawn(config.rng_seed, STREAM_CHANNEL, start // SHARD_SIZE)
    p_pulse = _block_survival_prob(start, len(counts), period_ps, transmittance, config)
    pos, n_phot = _survivors(counts, p_pulse, g)
    if pos.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, np.empty(0, dtype=np.uint8), empty

    kept = states[pos].copy()
    if config.retro_mode and config.retro_flip_prob > 0.0:
        flips = g.random(pos.size) < config.retro_flip_prob
        kept[flips] ^= 1

    t = emit_time_of(pos) + config.delay_ps()
    if true_clock is not None:
        t = true_clock.to_receiver(t)
    t = np.rint(t).astype(np.int64)

    return np.repeat(start + pos, n_phot), np.repeat(kept, n_phot), np.repeat(t, n_phot)


def _finalize_arrivals(parts) -> PhotonArrivals:
    if parts:
        idx = np.concatenate([p[0] for p in parts])
        states = np.concatenate([p[1] for p in parts])
        times = np.concatenate([p[2] for p in parts])
    else:
        idx = np.empty(0, dtype=np.int64)
        states = np.empty(0, dtype=np.uint8)
        times = np.empty(0, dtype=np.int64)
    if len(times) > 1 and np.any(np.diff(times) < 0):
        order = np.argsort(times, kind="stable")
        idx, states, times = idx[order], states[order], times[order]
    return PhotonArrivals(pulse_index=idx, state=states, arrival_time_ps=times)


def transmit(train: PulseTrain, config: ChannelConfig, true_clock=None) -> PhotonArrivals:
    """Propagate a materialized pulse train.

    Keeps the train's own emission times; shards only the survival draws.
    Output is sorted by arrival time with pulse order preserved on ties.
    """
    transmittance = 10.0 ** (-total_link_loss_db(config, train.config.wavelength_nm) / 10.0)
    period = train.config.period_ps
    parts = []
    for s0 in range(0, len(train), SHARD_SIZE):
        s1 = min(s0 + SHARD_SIZE, len(train))
        states = (2 * train.basis[s0:s1] + train.bit[s0:s1]).astype(np.uint8)
        emit = train.emit_time_ps[s0:s1]
        part = _mc_shard(s0, states, train.photon_count[s0:s1],
                         lambda pos, e=emit: e[pos].astype(np.float64),
                         config, transmittance, period, true_clock)
        if len(part[0]):
            parts.append(part)
    return _finalize_arrivals(parts)


def transmit_stream(source_config: SourceConfig, config: ChannelConfig, n_pulses: int,
                    true_clock=None) -> PhotonArrivals:
    """Sharded source+channel pipeline for large sessions.

    Statistically identical to ``transmit(build_pulse_train(...), ...)``
    but never materializes the train; emission jitter is drawn only for
    surviving pulses. Basis/bit choices are bit-identical to the
    materialized path, so Alice can regenerate them lazily.
    """
    transmittance = 10.0 ** (-total_link_loss_db(config, source_config.wavelength_nm) / 10.0)
    period = source_config.period_ps

    def emit_time_factory(shard: PulseShard):
        def emit_time_of(pos: np.ndarray) -> np.ndarray:
            jg = spawn(source_config.rng_seed, STREAM_EMIT_JITTER, shard.start // SHARD_SIZE)
            jitter = emit_jitter_ps(source_config, jg, pos.size)
            return (shard.start + pos) * period + jitter

        return emit_time_of

    parts = []
    for shard in iter_shards(source_config, n_pulses):
        part = _mc_shard(shard.start, shard.states, shard.photon_count,
                         emit_time_factory(shard), config, transmittance, period, true_clock)
        if len(part[0]):
            parts.append(part)
    return _finalize_arrivals(parts)
