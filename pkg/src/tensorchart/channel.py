"""CDL-style MIMO-OFDM channel generator with ground-truth trajectories.

Channel tensors have shape ``(n_rx, n_pol, n_tx, n_sub)``. Each entry is a sum
over propagation paths of a per-polarization complex gain, a frequency phase
``exp(-j 2 pi tau (i_sc delta_f))`` with zero-based subcarrier index, and the
steering phases ``exp(j 2 pi f_c r^T d / c)`` at both ends of the link.

Datasets follow a smooth 2-D random walk of the UE. The BS sits above the
walk area with a vertical planar array facing +x. Path 0 is the line-of-sight
path computed from the exact geometry. The remaining paths are clusters whose
angles, excess delays, powers and phases are bilinearly interpolated from a
seeded coarse grid over the area, so nearby positions see similar channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

SPEED_OF_LIGHT = 299792458.0


class ConfigError(ValueError):
    pass


class InvalidInputError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    n_rx: int = 32
    n_pol: int = 2
    n_tx: int = 2
    n_sub: int = 408
    delta_f: float = 240e3
    f_c: float = 3.5e9
    c: float = SPEED_OF_LIGHT
    path_count: int = 8

    def __post_init__(self):
        for name in ("n_rx", "n_pol", "n_tx", "n_sub", "path_count"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.delta_f <= 0 or self.f_c <= 0 or self.c <= 0:
            raise ConfigError("delta_f, f_c and c must be positive")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n_rx, self.n_pol, self.n_tx, self.n_sub)

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c


@dataclass(frozen=True)
class TrajectoryConfig:
    """UE walk area and scene layout (all lengths in meters)."""

    x_min: float = 20.0
    x_max: float = 40.0
    y_min: float = -10.0
    y_max: float = 10.0
    step: float = 1.0
    heading_sigma: float = 0.35
    bs_height: float = 30.0
    ue_height: float = 1.5
    array_rows: int = 8
    array_cols: int = 4
    element_spacing: float = 0.5
    field_grid: int = 4
    nlos_power_db: tuple[float, float] = (-16.0, -8.0)
    nlos_excess_delay: tuple[float, float] = (30e-9, 400e-9)
    nlos_azimuth_spread: float = float(np.deg2rad(60.0))
    nlos_zenith_spread: float = float(np.deg2rad(15.0))

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError("trajectory bounds must satisfy min < max")
        if self.step <= 0 or self.heading_sigma < 0:
            raise ConfigError("step must be positive and heading_sigma non-negative")
        if self.step >= min(self.x_max - self.x_min, self.y_max - self.y_min):
            raise ConfigError("step must be smaller than the walk area")
        if self.bs_height <= self.ue_height:
            raise ConfigError("bs_height must exceed ue_height")
        if self.array_rows < 1 or self.array_cols < 1 or self.field_grid < 2:
            raise ConfigError("array dimensions must be positive and field_grid >= 2")


@dataclass(frozen=True)
class ArrayGeometry:
    element_positions: np.ndarray  # (n, 3) meters
    polarization_count: int = 1

    def __post_init__(self):
        pos = np.asarray(self.element_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidInputError("element positions must be an (n, 3) array")
        object.__setattr__(self, "element_positions", pos)

    @property
    def size(self) -> int:
        return self.element_positions.shape[0]


@dataclass(frozen=True)
class CdlPath:
    gains: np.ndarray  # complex, one per polarization
    delay: float
    aoa_az: float
    zoa: float
    aod_az: float
    zod: float

    def __post_init__(self):
        object.__setattr__(self, "gains", np.atleast_1d(np.asarray(self.gains, dtype=complex)))
        if not self.delay >= 0:
            raise InvalidInputError("path delay must be non-negative")
        angles = (self.aoa_az, self.zoa, self.aod_az, self.zod)
        if not np.all(np.isfinite(angles)):
            raise InvalidInputError("path angles must be finite")


@dataclass
class Sample:
    position: np.ndarray  # ground-truth (x, y), evaluation only
    channel: np.ndarray
    mask: np.ndarray = field(default=None)  # observed subcarriers
    hopping_offset: int | None = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.channel.shape[-1], dtype=bool)


def spherical_unit_vector(azimuth, zenith) -> np.ndarray:
    """``(sin z cos a, sin z sin a, cos z)``; broadcasts over array inputs."""
    azimuth = np.asarray(azimuth, dtype=float)
    zenith = np.asarray(zenith, dtype=float)
    st = np.sin(zenith)
    return np.stack([st * np.cos(azimuth), st * np.sin(azimuth), np.cos(zenith)], axis=-1)


def rectangular_array(rows: int, cols: int, spacing: float, n_pol: int = 1) -> ArrayGeometry:
    """Planar array in the y-z plane (broadside along +x), centered at the origin."""
    ys = (np.arange(cols) - (cols - 1) / 2) * spacing
    zs = (np.arange(rows) - (rows - 1) / 2) * spacing
    # column index fastest
    yy, zz = np.meshgrid(ys, zs, indexing="xy")
    pos = np.column_stack([np.zeros(yy.size), yy.ravel(), zz.ravel()])
    return ArrayGeometry(pos, n_pol)


def default_arrays(cfg: SystemConfig, traj: TrajectoryConfig) -> tuple[ArrayGeometry, ArrayGeometry]:
    if traj.array_rows * traj.array_cols != cfg.n_rx:
        raise ConfigError(
            f"array {traj.array_rows}x{traj.array_cols} does not hold n_rx={cfg.n_rx} elements"
        )
    rx = rectangular_array(traj.array_rows, traj.array_cols, traj.element_spacing * cfg.wavelength, cfg.n_pol)
    # colocated UE elements
    tx = ArrayGeometry(np.zeros((cfg.n_tx, 3)), 1)
    return rx, tx


def cdl_channel(paths, rx: ArrayGeometry, tx: ArrayGeometry, cfg: SystemConfig) -> np.ndarray:
    """Sum of path responses, shape ``(n_rx, n_pol, n_tx, n_sub)``."""
    paths = list(paths)
    if not paths:
        raise InvalidInputError("path list is empty")
    if rx.size != cfg.n_rx or tx.size != cfg.n_tx:
        raise InvalidInputError("array sizes do not match the system config")
    gains = np.array([np.broadcast_to(p.gains, (cfg.n_pol,)) for p in paths])  # (L, pol)
    delays = np.array([p.delay for p in paths])
    r_rx = spherical_unit_vector([p.aoa_az for p in paths], [p.zoa for p in paths])  # (L, 3)
    r_tx = spherical_unit_vector([p.aod_az for p in paths], [p.zod for p in paths])
    k = 2j * np.pi * cfg.f_c / cfg.c
    a_rx = np.exp(k * (r_rx @ rx.element_positions.T))  # (L, n_rx)
    a_tx = np.exp(k * (r_tx @ tx.element_positions.T))  # (L, n_tx)
    freq = np.exp(-2j * np.pi * np.outer(delays, np.arange(cfg.n_sub) * cfg.delta_f))  # (L, n_sub)
    return np.einsum("lr,lp,lt,ls->rpts", a_rx, gains, a_tx, freq, optimize=True)


class ClusterField:
    """Seeded coarse-grid parameter surfaces for the non-LOS clusters.

    Each cluster owns grids of azimuth/zenith offsets, departure angles,
    excess delay, power (dB) and per-polarization phase, interpolated
    bilinearly at the UE position.
    """

    def __init__(self, rng: np.random.Generator, n_clusters: int, traj: TrajectoryConfig):
        g = traj.field_grid
        shape = (n_clusters, g, g)
        center_az = rng.uniform(-traj.nlos_azimuth_spread, traj.nlos_azimuth_spread, n_clusters)
        center_zen = rng.uniform(-traj.nlos_zenith_spread, traj.nlos_zenith_spread, n_clusters)
        lo, hi = traj.nlos_power_db
        dlo, dhi = traj.nlos_excess_delay
        self.traj = traj
        self.grids = {
            "aoa": center_az[:, None, None] + rng.uniform(-0.25, 0.25, shape),
            "zoa": center_zen[:, None, None] + rng.uniform(-0.08, 0.08, shape),
            "aod": rng.uniform(-np.pi, np.pi, n_clusters)[:, None, None] + rng.uniform(-0.3, 0.3, shape),
            "zod": rng.uniform(np.pi / 3, 2 * np.pi / 3, n_clusters)[:, None, None]
            + rng.uniform(-0.1, 0.1, shape),
            "delay": rng.uniform(dlo, dhi, n_clusters)[:, None, None] * rng.uniform(0.8, 1.2, shape),
            "power": rng.uniform(lo, hi, n_clusters)[:, None, None] + rng.uniform(-2.0, 2.0, shape),
            "phase0": rng.uniform(0, 2 * np.pi, shape),
            "phase1": rng.uniform(0, 2 * np.pi, shape),
        }

    def at(self, xy) -> dict[str, np.ndarray]:
        t = self.traj
        g = t.field_grid
        u = np.clip((xy[0] - t.x_min) / (t.x_max - t.x_min), 0.0, 1.0) * (g - 1)
        v = np.clip((xy[1] - t.y_min) / (t.y_max - t.y_min), 0.0, 1.0) * (g - 1)
        i0 = min(int(u), g - 2)
        j0 = min(int(v), g - 2)
        fu, fv = u - i0, v - j0
        w = np.array([[(1 - fu) * (1 - fv), (1 - fu) * fv], [fu * (1 - fv), fu * fv]])
        return {
            key: np.einsum("cij,ij->c", grid[:, i0 : i0 + 2, j0 : j0 + 2], w)
            for key, grid in self.grids.items()
        }


def random_walk(rng: np.random.Generator, n: int, traj: TrajectoryConfig) -> np.ndarray:
    """Smooth heading-diffusion walk, reflected at the rectangle edges."""
    pos = np.empty((n, 2))
    p = np.array([rng.uniform(traj.x_min, traj.x_max), rng.uniform(traj.y_min, traj.y_max)])
    heading = rng.uniform(-np.pi, np.pi)
    lo = np.array([traj.x_min, traj.y_min])
    hi = np.array([traj.x_max, traj.y_max])
    for i in range(n):
        pos[i] = p
        heading += rng.normal(0.0, traj.heading_sigma)
        d = traj.step * np.array([np.cos(heading), np.sin(heading)])
        q = p + d
        # mirror at the walls and flip the matching heading component
        for ax in range(2):
            if q[ax] < lo[ax]:
                q[ax] = 2 * lo[ax] - q[ax]
                d[ax] = -d[ax]
            elif q[ax] > hi[ax]:
                q[ax] = 2 * hi[ax] - q[ax]
                d[ax] = -d[ax]
        heading = np.arctan2(d[1], d[0])
        p = q
    return pos


class Scene:
    """Deterministic map from UE position to CDL paths for one seed."""

    def __init__(self, seed: int, cfg: SystemConfig, traj: TrajectoryConfig):
        self.cfg = cfg
        self.traj = traj
        self.rx, self.tx = default_arrays(cfg, traj)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
        self.field = ClusterField(rng, cfg.path_count - 1, traj)
        self.los_phase = rng.uniform(0, 2 * np.pi, cfg.n_pol)

    def paths_at(self, xy) -> list[CdlPath]:
        cfg, traj = self.cfg, self.traj
        dx, dy = float(xy[0]), float(xy[1])
        dz = traj.ue_height - traj.bs_height
        dist = float(np.sqrt(dx * dx + dy * dy + dz * dz))
        az = float(np.arctan2(dy, dx))
        zen = float(np.arccos(dz / dist))
        los_delay = dist / cfg.c
        amp = 1.0 / dist
        pol = np.resize(self.los_phase, cfg.n_pol)
        paths = [
            CdlPath(
                gains=amp * np.exp(1j * pol),
                delay=los_delay,
                aoa_az=az,
                zoa=zen,
                aod_az=az + np.pi,
                zod=np.pi - zen,
            )
        ]
        f = self.field.at(xy)
        for c in range(cfg.path_count - 1):
            phases = np.resize([f["phase0"][c], f["phase1"][c]], cfg.n_pol)
            gain = amp * 10.0 ** (f["power"][c] / 20.0) * np.exp(1j * phases)
            paths.append(
                CdlPath(
                    gains=gain,
                    delay=los_delay + f["delay"][c],
                    aoa_az=az + f["aoa"][c],
                    zoa=zen + f["zoa"][c],
                    aod_az=f["aod"][c],
                    zod=f["zod"][c],
                )
            )
        return paths

    def channel_at(self, xy) -> np.ndarray:
        return cdl_channel(self.paths_at(xy), self.rx, self.tx, self.cfg)


def add_awgn(x: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Add circular complex Gaussian noise at the given tensor-wide SNR."""
    if not np.isfinite(snr_db):
        raise InvalidInputError("snr_db must be finite")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x)
    noise_var = np.vdot(x, x).real / x.size / 10.0 ** (snr_db / 10.0)
    scale = np.sqrt(noise_var / 2.0)
    noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return x + scale * noise


def hopping_mask(n_sub: int, h_p: int, offset: int) -> np.ndarray:
    if h_p < 1 or n_sub % h_p:
        raise ConfigError(f"h_p={h_p} does not divide n_sub={n_sub}")
    if not 0 <= offset < h_p:
        raise ConfigError(f"offset {offset} outside [0, {h_p})")
    width = n_sub // h_p
    mask = np.zeros(n_sub, dtype=bool)
    mask[offset * width : (offset + 1) * width] = True
    return mask


def apply_hopping(x: np.ndarray, h_p: int, offset: int) -> tuple[np.ndarray, np.ndarray]:
    """Observe one consecutive block of ``n_sub / h_p`` subcarriers.

    Returns the observed channel and its subcarrier mask. Unobserved
    subcarriers are set to NaN so that any code reading them fails loudly;
    downstream consumers go through the mask.
    """
    mask = hopping_mask(x.shape[-1], h_p, offset)
    out = np.array(x, dtype=complex, copy=True)
    out[..., ~mask] = np.nan
    return out, mask


def iter_dataset(
    seed: int,
    n_samples: int,
    cfg: SystemConfig | None = None,
    traj: TrajectoryConfig | None = None,
    snr_db: float | None = None,
    h_p: int = 1,
) -> Iterator[Sample]:
    """Yield samples one at a time (a 1000-sample default set is ~0.8 GB)."""
    cfg = cfg or SystemConfig()
    traj = traj or TrajectoryConfig()
    if n_samples < 1:
        raise InvalidInputError("n_samples must be at least 1")
    if h_p < 1 or cfg.n_sub % h_p:
        raise ConfigError(f"h_p={h_p} does not divide n_sub={cfg.n_sub}")
    scene = Scene(seed, cfg, traj)
    walk_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    positions = random_walk(walk_rng, n_samples, traj)
    noise_seeds = np.random.SeedSequence([int(seed), 2]).spawn(n_samples)
    for i, xy in enumerate(positions):
        h = scene.channel_at(xy)
        if snr_db is not None:
            h = add_awgn(h, snr_db, np.random.default_rng(noise_seeds[i]))
        if h_p > 1:
            offset = i % h_p
            h, mask = apply_hopping(h, h_p, offset)
            yield Sample(position=xy.copy(), channel=h, mask=mask, hopping_offset=offset)
        else:
            yield Sample(position=xy.copy(), channel=h)


def generate_dataset(seed, n_samples, cfg=None, traj=None, snr_db=None, h_p=1) -> list[Sample]:
    return list(iter_dataset(seed, n_samples, cfg, traj, snr_db, h_p))


def config_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}
