"""Alice's pulsed polarization source.

Generates the transmitter pulse train: one pulse per period of the
repetition clock, each carrying a uniformly random basis/bit choice, the
matching polarization angle, and a Poisson-distributed photon number whose
mean may differ per polarization state (a weak emitter for one state is a
real failure mode of multi-laser sources).

State encoding used throughout the package::

    state = 2 * basis + bit      H=0  V=1  D=2  A=3
    basis: 0 = rectilinear (H/V), 1 = diagonal (D/A)

Pulse trains are generated in fixed-size shards, each with its own RNG
derived from ``(rng_seed, shard_index)``. This makes generation
reproducible, restartable at any shard boundary, and cheap to re-derive:
the basis/bit choices of any pulse can be regenerated later without
storing the full train (see :class:`LazyPulseTrain`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .seeds import STREAM_EMIT_JITTER, STREAM_SOURCE, spawn

RECTILINEAR = 0
DIAGONAL = 1

STATE_H, STATE_V, STATE_D, STATE_A = 0, 1, 2, 3
STATE_NAMES = "HVDA"

# Polarizer orientations per state, degrees.
STATE_ANGLES_DEG = np.array([0.0, 90.0, 45.0, -45.0])

# Gaussian FWHM -> sigma.
FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Pulses per generation shard. Part of the reproducibility contract.
SHARD_SIZE = 1 << 22

# 30-bit uniform granularity used by the inversion sampler.
_UBITS = 30
_USCALE = float(1 << _UBITS)
# Above this mean the tabulated inversion is not worth it; use rng.poisson.
_MU_TABLE_LIMIT = 2.0


def polarization_angle(basis: int, bit: int) -> float:
    """Polarizer angle in degrees for a basis/bit choice."""
    if basis not in (RECTILINEAR, DIAGONAL) or bit not in (0, 1):
        raise ValueError(f"invalid basis/bit: {basis}/{bit}")
    return float(STATE_ANGLES_DEG[2 * basis + bit])


def sample_photon_count(mu: float, rng: np.random.Generator) -> int:
    """Draw one Poisson photon number with mean ``mu``."""
    if mu < 0:
        raise ValueError("mu must be >= 0")
    return int(rng.poisson(mu))


@dataclass(frozen=True)
class SourceConfig:
    """Transmitter parameters.

    mu_per_state holds the mean photon number per pulse for the H, V, D, A
    states in that order; pulse_fwhm_ps is the optical pulse duration and
    sets the emission-time spread around the repetition grid.
    """

    rep_rate_hz: float = 100e6
    pulse_fwhm_ps: float = 200.0
    wavelength_nm: float = 852.0
    mu_per_state: tuple[float, float, float, float] = (0.1, 0.1, 0.1, 0.1)
    rng_seed: int = 0

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ConfigError("must be > 0", "source.rep_rate_hz")
        if self.wavelength_nm <= 0:
            raise ConfigError("must be > 0", "source.wavelength_nm")
        if len(self.mu_per_state) != 4:
            raise ConfigError("needs exactly 4 entries (H, V, D, A)", "source.mu_per_state")
        if any(m < 0 for m in self.mu_per_state):
            raise ConfigError("entries must be >= 0", "source.mu_per_state")
        if self.pulse_fwhm_ps < 0:
            raise ConfigError("must be >= 0", "source.pulse_fwhm_ps")
        if self.pulse_fwhm_ps >= self.period_ps:
            raise ConfigError("pulse duration must be shorter than the period", "source.pulse_fwhm_ps")

    @property
    def period_ps(self) -> float:
        return 1e12 / self.rep_rate_hz

    @property
    def emit_sigma_ps(self) -> float:
        return self.pulse_fwhm_ps / FWHM_TO_SIGMA


@dataclass(frozen=True)
class PulseRecord:
    """One emitted pulse (Alice-side ground truth)."""

    index: int
    basis: int
    bit: int
    photon_count: int
    emit_time_ps: int

    @property
    def state(self) -> int:
        return 2 * self.basis + self.bit

    @property
    def angle_deg(self) -> float:
        return float(STATE_ANGLES_DEG[self.state])


@dataclass
class PulseTrain:
    """Materialized pulse train (struct of arrays, index = 0..n-1)."""

    config: SourceConfig
    basis: np.ndarray
    bit: np.ndarray
    photon_count: np.ndarray
    emit_time_ps: np.ndarray

    def __len__(self) -> int:
        return len(self.basis)

    @property
    def n_pulses(self) -> int:
        return len(self.basis)

    @property
    def state(self) -> np.ndarray:
        return (2 * self.basis + self.bit).astype(np.uint8)

    def record(self, i: int) -> PulseRecord:
        return PulseRecord(
            index=i,
            basis=int(self.basis[i]),
            bit=int(self.bit[i]),
            photon_count=int(self.photon_count[i]),
            emit_time_ps=int(self.emit_time_ps[i]),
        )

    def states_at(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(basis, bit) arrays for the given pulse indices."""
        idx = np.asarray(indices, dtype=np.int64)
        return self.basis[idx], self.bit[idx]


class LazyPulseTrain:
    """Pulse-train view that regenerates basis/bit choices on demand.

    Stores nothing per pulse; lookups re-run the per-shard RNG draw that
    produced the states. Used by Alice in large sessions where only the
    pulses Bob reports ever need to be inspected.
    """

    def __init__(self, config: SourceConfig, n_pulses: int):
        if n_pulses <= 0:
            raise ConfigError("must be > 0", "n_pulses")
        self.config = config
        self.n_pulses = n_pulses

    def __len__(self) -> int:
        return self.n_pulses

    def states_at(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_pulses):
            raise IndexError("pulse index out of range")
        basis = np.empty(idx.size, dtype=np.uint8)
        bit = np.empty(idx.size, dtype=np.uint8)
        for shard in np.unique(idx // SHARD_SIZE):
            sel = np.nonzero(idx // SHARD_SIZE == shard)[0]
            states = _shard_states(self.config, int(shard))
            local = states[idx[sel] - shard * SHARD_SIZE]
            basis[sel] = local >> 1
            bit[sel] = local & 1
        return basis, bit


# ---------------------------------------------------------------------------
# Shard generation internals
# ---------------------------------------------------------------------------


@dataclass
class PulseShard:
    """One generation shard: global index range plus per-pulse draws."""

    start: int
    states: np.ndarray  # uint8, 0..3
    photon_count: np.ndarray  # uint16
    rng: np.random.Generator = field(repr=False)

    def __len__(self) -> int:
        return len(self.states)


def _poisson_thresholds(mu: float) -> np.ndarray:
    """Cumulative Poisson thresholds scaled to the 30-bit uniform grid.

    count(u) = #{k : u >= thr[k]}; the table is truncated where the tail
    probability drops below the grid resolution (2^-30).
    """
    thr = []
    pmf = math.exp(-mu)
    cum = pmf
    k = 0
    while cum < 1.0 - 2.0 ** (-_UBITS) and k < 64:
        thr.append(min(round(cum * _USCALE), (1 << _UBITS) - 1))
        k += 1
        pmf *= mu / k
        cum += pmf
    if not thr:  # mu == 0: count always 0
        thr.append((1 << _UBITS) - 1 + 1)
    return np.asarray(thr, dtype=np.int64)


def _sample_counts(states: np.ndarray, uniforms: np.ndarray, config: SourceConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Photon counts per pulse via tabulated Poisson inversion.

    Uses one 30-bit uniform per pulse. Exact to the grid resolution for
    mu <= 2; larger means fall back to the generator's Poisson sampler.
    Only the (rare) pulses clearing the zero-photon threshold see any
    extra work.
    """
    mus = config.mu_per_state
    counts = np.zeros(len(states), dtype=np.uint16)
    if any(mu > _MU_TABLE_LIMIT for mu in mus):
        for s in range(4):
            mask = states == s
            if mus[s] > 0.0 and mask.any():
                counts[mask] = rng.poisson(mus[s], size=int(mask.sum())).astype(np.uint16)
        return counts

    tables = [_poisson_thresholds(mu) for mu in mus]
    kmax = max(len(t) for t in tables)
    # Pad to a rectangular table; the sentinel 2^30 is never reached.
    thr = np.full((kmax, 4), 1 << _UBITS, dtype=np.int64)
    for s, t in enumerate(tables):
        thr[: len(t), s] = t
    uniform_mu = len(set(mus)) == 1

    u = uniforms.astype(np.int64)
    ge = u >= (thr[0, 0] if uniform_mu else thr[0][states])
    idx = np.nonzero(ge)[0]
    if idx.size == 0:
        return counts
    su = u[idx]
    ss = None if uniform_mu else states[idx]
    c = np.ones(idx.size, dtype=np.uint16)
    for k in range(1, kmax):
        above = su >= (thr[k, 0] if uniform_mu else thr[k][ss])
        if not above.any():
            break
        c += above
    counts[idx] = c
    return counts


def _shard_rng(config: SourceConfig, shard_index: int) -> np.random.Generator:
    return spawn(config.rng_seed, STREAM_SOURCE, shard_index)


def _shard_raw(config: SourceConfig, shard_index: int, n: int):
    """(states, 30-bit uniforms, generator) for one shard; first draws."""
    g = _shard_rng(config, shard_index)
    u = g.integers(0, 1 << 32, size=n, dtype=np.uint32)
    states = (u & 3).astype(np.uint8)
    return states, (u >> 2), g


def _shard_states(config: SourceConfig, shard_index: int) -> np.ndarray:
    states, _, _ = _shard_raw(config, shard_index, SHARD_SIZE)
    return states


def generate_shard(config: SourceConfig, shard_index: int, n: int) -> PulseShard:
    """Generate states and photon counts for shard ``shard_index``.

    ``n`` may be smaller than SHARD_SIZE only for the final shard. Emission
    jitter is not drawn here; consumers pull it from the returned generator
    (for all pulses or only for channel survivors) via
    :func:`emit_jitter_ps`.
    """
    states, uv, g = _shard_raw(config, shard_index, SHARD_SIZE)
    states, uv = states[:n], uv[:n]
    counts = _sample_counts(states, uv, config, g)
    return PulseShard(start=shard_index * SHARD_SIZE, states=states, photon_count=counts, rng=g)


def emit_jitter_ps(config: SourceConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """Gaussian emission-time offsets around the grid, in ps (float64)."""
    if config.pulse_fwhm_ps == 0.0 or n == 0:
        return np.zeros(n)
    return rng.normal(0.0, config.emit_sigma_ps, size=n)


def shard_count(n_pulses: int) -> int:
    return (n_pulses + SHARD_SIZE - 1) // SHARD_SIZE


def iter_shards(config: SourceConfig, n_pulses: int):
    """Yield consecutive PulseShards covering ``n_pulses``."""
    for i in range(shard_count(n_pulses)):
        n = min(SHARD_SIZE, n_pulses - i * SHARD_SIZE)
        yield generate_shard(config, i, n)


def build_pulse_train(config: SourceConfig, n_pulses: int) -> PulseTrain:
    """Materialize a full pulse train.

    Deterministic in config.rng_seed: the same seed yields a bit-identical
    train regardless of how many pulses other runs requested.
    """
    if n_pulses <= 0:
        raise ConfigError("must be > 0 (empty train)", "n_pulses")
    period = config.period_ps
    bases, bits, counts, emits = [], [], [], []
    for shard in iter_shards(config, n_pulses):
        n = len(shard)
        # Dedicated jitter stream so that emission times are independent of
        # how counts were consumed.
        jg = spawn(config.rng_seed, STREAM_EMIT_JITTER, shard.start // SHARD_SIZE)
        jitter = emit_jitter_ps(config, jg, n)
        idx = shard.start + np.arange(n, dtype=np.int64)
        emits.append(np.rint(idx * period + jitter).astype(np.int64))
        bases.append((shard.states >> 1).astype(np.uint8))
        bits.append((shard.states & 1).astype(np.uint8))
        counts.append(shard.photon_count)
    return PulseTrain(
        config=config,
        basis=np.concatenate(bases),
        bit=np.concatenate(bits),
        photon_count=np.concatenate(counts),
        emit_time_ps=np.concatenate(emits),
    )


# ---------------------------------------------------------------------------
# Binary dump (index u64, basis u8, bit u8, count u8, emit_time_ps i64; LE)
# ---------------------------------------------------------------------------

_DUMP_DTYPE = np.dtype([
    ("index", "<u8"),
    ("basis", "u1"),
    ("bit", "u1"),
    ("count", "u1"),
    ("emit_time_ps", "<i8"),
])


def dump_pulse_train(train: PulseTrain, path) -> None:
    """Write the replay/debug record stream for a train."""
    rec = np.empty(len(train), dtype=_DUMP_DTYPE)
    rec["index"] = np.arange(len(train), dtype=np.uint64)
    rec["basis"] = train.basis
    rec["bit"] = train.bit
    rec["count"] = np.minimum(train.photon_count, 255).astype(np.uint8)
    rec["emit_time_ps"] = train.emit_time_ps
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def load_pulse_train(path, config: SourceConfig) -> PulseTrain:
    with open(path, "rb") as f:
        rec = np.frombuffer(f.read(), dtype=_DUMP_DTYPE)
    return PulseTrain(
        config=config,
        basis=rec["basis"].copy(),
        bit=rec["bit"].copy(),
        photon_count=rec["count"].astype(np.uint16),
        emit_time_ps=rec["emit_time_ps"].copy(),
    )
