"""Synthetic multi-scenario CSI generation from a clustered multipath model.

A cell is partitioned into disc-shaped subregions, one per subtask.  Each
sample draws scattering clusters inside the subregion's angle/delay ranges,
discretizes every cluster into equal-weight subpaths, and sums their
plane-wave contributions over a uniform linear array and an OFDM subcarrier
grid.  Per-sample seeds are counter-based hashes, so generation order and
parallelism never change the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeding import DOMAIN_SAMPLE, mix_seed, rng_from

LIGHT_SPEED = 2.998e8


class ChannelConfigError(ValueError):
    """Raised for inconsistent array/region parameters."""


@dataclass(frozen=True)
class ArrayConfig:
    """ULA and OFDM grid parameters.

    The array lies along the y-axis with broadside pointing along +x, so a
    user at (x, y) is seen under azimuth atan2(y, x), which must stay inside
    (-pi/2, pi/2).  Subcarrier tones are uniformly spaced across the band,
    both edges included.
    """

    n_tx: int = 32
    n_subcarriers: int = 512
    center_freq: float = 2.655e9
    bandwidth: float = 10e6
    element_spacing: float | None = None  # meters; None = half wavelength
    light_speed: float = LIGHT_SPEED

    def __post_init__(self):
        if self.n_tx < 1 or self.n_subcarriers < 1:
            raise ChannelConfigError("n_tx and n_subcarriers must be >= 1")
        if self.center_freq <= 0 or self.bandwidth <= 0:
            raise ChannelConfigError("center_freq and bandwidth must be positive")
        if self.element_spacing is not None and self.element_spacing <= 0:
            raise ChannelConfigError("element_spacing must be positive")

    @property
    def spacing(self) -> float:
        if self.element_spacing is not None:
            return self.element_spacing
        return self.light_speed / (2.0 * self.center_freq)

    def subcarrier_frequencies(self) -> np.ndarray:
        if self.n_subcarriers == 1:
            return np.array([self.center_freq])
        half = self.bandwidth / 2.0
        return np.linspace(self.center_freq - half, self.center_freq + half,
                           self.n_subcarriers)

    @property
    def resolvable_delay(self) -> float:
        """Aliasing limit of the subcarrier grid (1 / tone spacing)."""
        if self.n_subcarriers == 1:
            return math.inf
        return (self.n_subcarriers - 1) / self.bandwidth


@dataclass(frozen=True)
class PathCluster:
    """One scattering cluster: mean AoD/delay, spreads, amplitude, subpaths."""

    mean_aod: float           # radians, in (-pi/2, pi/2)
    angular_spread: float     # radians, half width of the AoD interval
    mean_delay: float         # seconds
    delay_spread: float       # seconds, half width of the delay interval
    amplitude: float
    subpath_count: int = 20

    def __post_init__(self):
        if not (-math.pi / 2 < self.mean_aod < math.pi / 2):
            raise ChannelConfigError("mean_aod must lie in (-pi/2, pi/2)")
        if self.angular_spread < 0 or self.delay_spread < 0:
            raise ChannelConfigError("spreads must be nonnegative")
        if self.mean_delay - self.delay_spread < 0:
            raise ChannelConfigError("delay interval must stay nonnegative")
        if self.amplitude < 0:
            raise ChannelConfigError("amplitude must be nonnegative")
        if self.subpath_count < 1:
            raise ChannelConfigError("subpath_count must be >= 1")


@dataclass(frozen=True)
class SubregionConfig:
    """Per-task scenario: a disc of users sharing one propagation profile.

    Cluster means are drawn uniformly from the interior of ``aod_range`` /
    ``delay_range`` shrunk by the per-cluster spreads, so every subpath draw
    stays inside the configured ranges (regions with disjoint ranges produce
    disjoint draws).
    """

    task_id: int
    center: tuple[float, float]
    diameter: float
    cluster_count: int
    los: bool
    aod_range: tuple[float, float]     # radians
    delay_range: tuple[float, float]   # seconds
    sample_count: int
    cluster_angular_spread: float = math.radians(2.0)
    cluster_delay_spread: float = 40e-9
    subpath_count: int = 20
    correlation_distance: float = 20.0
    power_decay: float | None = None   # seconds; None = half the delay span

    def __post_init__(self):
        if self.task_id < 1:
            raise ChannelConfigError("task_id must be >= 1")
        if not (0 < self.diameter <= self.correlation_distance):
            raise ChannelConfigError(
                "diameter must be positive and at most the correlation distance")
        if self.cluster_count < 1:
            raise ChannelConfigError("cluster_count must be >= 1")
        alo, ahi = self.aod_range
        if not (-math.pi / 2 < alo < ahi < math.pi / 2):
            raise ChannelConfigError("aod_range must be an interval inside (-pi/2, pi/2)")
        tlo, thi = self.delay_range
        if not (0 <= tlo < thi):
            raise ChannelConfigError("delay_range must be a nonnegative interval")
        if self.sample_count < 1:
            raise ChannelConfigError("sample_count must be >= 1")
        if ahi - alo < 2 * self.cluster_angular_spread:
            raise ChannelConfigError("aod_range narrower than twice the angular spread")
        if thi - tlo < 2 * self.cluster_delay_spread:
            raise ChannelConfigError("delay_range narrower than twice the delay spread")

    def n_nlos_clusters(self) -> int:
        return self.cluster_count - 1 if self.los else self.cluster_count


@dataclass
class ChannelSample:
    """Spatial-frequency channel matrix (n_tx x n_subcarriers) with its label."""

    matrix: np.ndarray
    task_id: int
    seed: int


@dataclass
class CsiDataset:
    """Materialized dataset: stacked matrices plus labels and per-sample seeds."""

    matrices: np.ndarray     # (N, n_tx, n_subcarriers) complex64
    labels: np.ndarray       # (N,) uint16
    seeds: np.ndarray        # (N,) uint64
    task_counts: dict[int, int]
    array_config: ArrayConfig


def array_response(phi: float, freq: float, cfg: ArrayConfig) -> np.ndarray:
    """ULA steering vector at azimuth ``phi`` and frequency ``freq``.

    Element m equals exp(-j * varpi * m * sin(phi)) / n_tx with
    varpi = 2*pi*d*freq/c, so the squared L2 norm is 1/n_tx.
    """
    if not (np.isfinite(phi) and np.isfinite(freq)):
        raise ChannelConfigError("phi and freq must be finite")
    if not (-math.pi / 2 < phi < math.pi / 2):
        raise ChannelConfigError("phi must lie in (-pi/2, pi/2)")
    if freq <= 0:
        raise ChannelConfigError("freq must be positive")
    varpi = 2.0 * math.pi * cfg.spacing * freq / cfg.light_speed
    m = np.arange(cfg.n_tx)
    return np.exp(-1j * varpi * m * math.sin(phi)) / cfg.n_tx


def synthesize(weights: np.ndarray, aods: np.ndarray, delays: np.ndarray,
               phases: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    """Evaluate the discretized clustered response over all subpaths.

    h[m, n] = sum_p w_p * exp(j*(theta_p - 2*pi*f_n*tau_p)) * conj(a(phi_p))[m]

    Returns an (n_tx, n_subcarriers) complex128 matrix.  The antenna factor
    exp(+j*varpi_n*m*sin(phi_p)) is accumulated as a running product over m,
    which avoids materializing the full (m, n, p) phase tensor.
    """
    weights = np.asarray(weights, dtype=np.float64)
    aods = np.asarray(aods, dtype=np.float64)
    delays = np.asarray(delays, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.float64)
    freqs = cfg.subcarrier_frequencies()

    # per-(subcarrier, subpath) scatter phasor, weighted
    scatter = np.exp(1j * (phases[None, :] - 2.0 * math.pi * np.outer(freqs, delays)))
    scatter *= weights[None, :] / cfg.n_tx
    # per-antenna-step phase increment
    kappa = (2.0 * math.pi * cfg.spacing / cfg.light_speed) * np.sin(aods)
    step = np.exp(1j * np.outer(freqs, kappa))

    out = np.empty((cfg.n_tx, cfg.n_subcarriers), dtype=np.complex128)
    acc = scatter
    out[0] = acc.sum(axis=1)
    for m in range(1, cfg.n_tx):
        acc = acc * step
        out[m] = acc.sum(axis=1)
    return out


@dataclass
class ClusterDraw:
    """All randomized subpath parameters for one sample (flattened)."""

    clusters: list[PathCluster]
    weights: np.ndarray    # (P,) amplitude / sqrt(subpaths), per subpath
    aods: np.ndarray       # (P,) radians
    delays: np.ndarray     # (P,) seconds
    phases: np.ndarray     # (P,) radians


def _geometry(region: SubregionConfig, ue_position: tuple[float, float]):
    x, y = ue_position
    dist = math.hypot(x, y)
    azimuth = math.atan2(y, x)
    return dist, azimuth


def draw_clusters(region: SubregionConfig, ue_position: tuple[float, float],
                  seed: int, cfg: ArrayConfig) -> ClusterDraw:
    """Draw cluster means, subpath offsets, and phases for one sample."""
    dx = ue_position[0] - region.center[0]
    dy = ue_position[1] - region.center[1]
    if math.hypot(dx, dy) > region.diameter / 2 + 1e-9:
        raise ChannelConfigError("ue_position outside the subregion disc")

    rng = rng_from(seed)
    n_nlos = region.n_nlos_clusters()
    alo, ahi = region.aod_range
    tlo, thi = region.delay_range
    d_phi = region.cluster_angular_spread
    d_tau = region.cluster_delay_spread

    mean_aods = rng.uniform(alo + d_phi, ahi - d_phi, size=n_nlos)
    mean_delays = rng.uniform(tlo + d_tau, thi - d_tau, size=n_nlos)

    clusters: list[PathCluster] = []
    if region.los:
        dist, azimuth = _geometry(region, ue_position)
        if not (-math.pi / 2 < azimuth < math.pi / 2):
            raise ChannelConfigError("LOS user is behind the array broadside")
        clusters.append(PathCluster(mean_aod=azimuth, angular_spread=0.0,
                                    mean_delay=dist / cfg.light_speed,
                                    delay_spread=0.0, amplitude=1.0,
                                    subpath_count=1))
    for phi, tau in zip(mean_aods, mean_delays):
        clusters.append(PathCluster(mean_aod=float(phi), angular_spread=d_phi,
                                    mean_delay=float(tau), delay_spread=d_tau,
                                    amplitude=1.0,
                                    subpath_count=region.subpath_count))

    # exponentially decaying power profile over mean delay, total power 1
    taus = np.array([c.mean_delay for c in clusters])
    decay = region.power_decay
    if decay is None:
        decay = max((thi - tlo) / 2.0, 1e-12)
    powers = np.exp(-(taus - taus.min()) / decay)
    powers /= powers.sum()
    amps = np.sqrt(powers)
    clusters = [PathCluster(mean_aod=c.mean_aod, angular_spread=c.angular_spread,
                            mean_delay=c.mean_delay, delay_spread=c.delay_spread,
                            amplitude=float(a), subpath_count=c.subpath_count)
                for c, a in zip(clusters, amps)]

    weights, aods, delays, phases = [], [], [], []
    for c in clusters:
        s = c.subpath_count
        if c.angular_spread == 0.0 and c.delay_spread == 0.0 and s == 1:
            sub_phi = np.array([c.mean_aod])
            sub_tau = np.array([c.mean_delay])
            sub_theta = np.array([0.0])  # deterministic cluster carries no scatter phase
        else:
            sub_phi = rng.uniform(c.mean_aod - c.angular_spread,
                                  c.mean_aod + c.angular_spread, size=s)
            sub_tau = rng.uniform(c.mean_delay - c.delay_spread,
                                  c.mean_delay + c.delay_spread, size=s)
            sub_theta = rng.uniform(0.0, 2.0 * math.pi, size=s)
        weights.append(np.full(s, c.amplitude / math.sqrt(s)))
        aods.append(sub_phi)
        delays.append(sub_tau)
        phases.append(sub_theta)

    delays_flat = np.concatenate(delays)
    if delays_flat.max() > cfg.resolvable_delay:
        raise ChannelConfigError(
            f"drawn delay {delays_flat.max():.3e}s exceeds the resolvable window "
            f"{cfg.resolvable_delay:.3e}s; delay_range is misconfigured")
    return ClusterDraw(clusters=clusters,
                       weights=np.concatenate(weights),
                       aods=np.concatenate(aods),
                       delays=delays_flat,
                       phases=np.concatenate(phases))


def generate_channel(region: SubregionConfig, ue_position: tuple[float, float],
                     seed: int, cfg: ArrayConfig) -> ChannelSample:
    """Generate one spatial-frequency channel sample (pure in its arguments)."""
    draw = draw_clusters(region, ue_position, seed, cfg)
    matrix = synthesize(draw.weights, draw.aods, draw.delays, draw.phases, cfg)
    return ChannelSample(matrix=matrix.astype(np.complex64), task_id=region.task_id,
                         seed=seed)


def sample_position(region: SubregionConfig, seed: int) -> tuple[float, float]:
    """Uniform position on the subregion disc, keyed by the sample seed."""
    rng = rng_from(seed, 1)
    radius = region.diameter / 2.0 * math.sqrt(rng.uniform())
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return (region.center[0] + radius * math.cos(angle),
            region.center[1] + radius * math.sin(angle))


def regenerate_sample(region: SubregionConfig, cfg: ArrayConfig,
                      sample_seed: int) -> ChannelSample:
    """Rebuild one sample from its stored per-sample seed alone."""
    pos = sample_position(region, sample_seed)
    sample = generate_channel(region, pos, mix_seed(sample_seed, 2), cfg)
    return ChannelSample(matrix=sample.matrix, task_id=region.task_id,
                         seed=sample_seed)


def sample_seed(base_seed: int, task_id: int, index: int) -> int:
    """Per-sample seed: counter-based hash of (base_seed, task, index)."""
    return mix_seed(base_seed, DOMAIN_SAMPLE, task_id, index)


def validate_cell(cell: list[SubregionConfig]) -> None:
    ids = sorted(r.task_id for r in cell)
    if ids != list(range(1, len(cell) + 1)):
        raise ChannelConfigError("task_ids must be unique and contiguous 1..T")


def iter_dataset(cell: list[SubregionConfig], cfg: ArrayConfig, base_seed: int):
    """Yield ChannelSamples task-major; each sample depends only on its seed."""
    validate_cell(cell)
    for region in sorted(cell, key=lambda r: r.task_id):
        for index in range(region.sample_count):
            yield regenerate_sample(region, cfg,
                                    sample_seed(base_seed, region.task_id, index))


def generate_dataset(cell: list[SubregionConfig], cfg: ArrayConfig,
                     base_seed: int) -> CsiDataset:
    """Materialize the full labeled dataset (see iter_dataset for streaming)."""
    validate_cell(cell)
    total = sum(r.sample_count for r in cell)
    matrices = np.empty((total, cfg.n_tx, cfg.n_subcarriers), dtype=np.complex64)
    labels = np.empty(total, dtype=np.uint16)
    seeds = np.empty(total, dtype=np.uint64)
    for i, s in enumerate(iter_dataset(cell, cfg, base_seed)):
        matrices[i] = s.matrix
        labels[i] = s.task_id
        seeds[i] = s.seed
    counts = {r.task_id: r.sample_count for r in sorted(cell, key=lambda r: r.task_id)}
    return CsiDataset(matrices=matrices, labels=labels, seeds=seeds,
                      task_counts=counts, array_config=cfg)


def geometric_region(task_id: int, center: tuple[float, float], diameter: float,
                     cluster_count: int, los: bool, cfg: ArrayConfig,
                     excess_delay: float = 0.25e-6,
                     angle_margin: float = math.radians(2.5),
                     sample_count: int = 1000,
                     correlation_distance: float | None = None,
                     **kwargs) -> SubregionConfig:
    """Region whose angle/delay ranges follow from its disc geometry.

    The AoD range is the angular span of the disc seen from the array plus a
    scattering margin; delays run from the nearest direct path to the farthest
    one plus a fixed excess.  Used by the sampling-range sweep, where the disc
    diameter is the only independent variable.
    """
    dist = math.hypot(*center)
    azimuth = math.atan2(center[1], center[0])
    radius = diameter / 2.0
    if radius >= dist:
        raise ChannelConfigError("region disc must not contain the array")
    span = math.asin(min(radius / dist, 0.999))
    alo = max(azimuth - span - angle_margin, -math.pi / 2 + 1e-3)
    ahi = min(azimuth + span + angle_margin, math.pi / 2 - 1e-3)
    tlo = (dist - radius) / cfg.light_speed
    thi = (dist + radius) / cfg.light_speed + excess_delay
    return SubregionConfig(task_id=task_id, center=center, diameter=diameter,
                           cluster_count=cluster_count, los=los,
                           aod_range=(alo, ahi), delay_range=(tlo, thi),
                           sample_count=sample_count,
                           correlation_distance=(correlation_distance
                                                 if correlation_distance is not None
                                                 else max(diameter, 20.0)),
                           **kwargs)
