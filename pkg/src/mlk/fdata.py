"""Velocity-space grids, histogram datasets, the synthetic generator, and
dataset file I/O.

A dataset holds one 2D particle histogram ("image") per (plane, node) pair,
all sharing a single velocity grid.  The synthetic generator produces
bi-Maxwellian images whose analytic moments equal the four derived
quantities (density, parallel flow, perpendicular/parallel temperature),
so generated corpora come with built-in ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mlk.errors import ConfigError, SizeMismatchError

__all__ = [
    "VelocityGrid",
    "FDataset",
    "SyntheticParams",
    "make_grid",
    "gen_synthetic",
    "synth_qoi_fields",
    "save_dataset",
    "load_dataset",
    "dataset_nbytes",
]


@dataclass(frozen=True)
class VelocityGrid:
    """Quadrature data for the 2D (v_perp, v_par) histogram cells."""

    v_perp: np.ndarray   # (rows,) non-negative, strictly increasing
    v_par: np.ndarray    # (cols,) strictly increasing
    vol: np.ndarray      # (rows, cols) positive quadrature weights
    mass: float

    def __post_init__(self):
        v_perp = np.asarray(self.v_perp, dtype=np.float64)
        v_par = np.asarray(self.v_par, dtype=np.float64)
        vol = np.asarray(self.vol, dtype=np.float64)
        if v_perp.ndim != 1 or v_par.ndim != 1 or v_perp.size < 2 or v_par.size < 2:
            raise ConfigError("grid needs at least 2 bins per velocity axis")
        if vol.shape != (v_perp.size, v_par.size):
            raise ConfigError("vol shape does not match velocity axes")
        if v_perp[0] < 0 or np.any(np.diff(v_perp) <= 0) or np.any(np.diff(v_par) <= 0):
            raise ConfigError("velocity axes must be strictly increasing, v_perp >= 0")
        if np.any(vol <= 0):
            raise ConfigError("all volume weights must be positive")
        if not self.mass > 0:
            raise ConfigError("particle mass must be positive")
        object.__setattr__(self, "v_perp", v_perp)
        object.__setattr__(self, "v_par", v_par)
        object.__setattr__(self, "vol", vol)

    @property
    def rows(self) -> int:
        return self.v_perp.size

    @property
    def cols(self) -> int:
        return self.v_par.size


@dataclass(frozen=True)
class FDataset:
    """planes x nodes stack of histogram images on a shared grid."""

    grid: VelocityGrid
    data: np.ndarray     # (n_planes, n_nodes, rows, cols) float64, >= 0
    timestep: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ConfigError("data must have shape (planes, nodes, rows, cols)")
        if data.shape[2:] != (self.grid.rows, self.grid.cols):
            raise ConfigError("image shape does not match the grid")
        if np.any(data < 0):
            raise ConfigError("histogram values must be non-negative")
        object.__setattr__(self, "data", data)

    @property
    def n_planes(self) -> int:
        return self.data.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.data.shape[1]

    def images(self) -> np.ndarray:
        """(planes*nodes, rows, cols) view in plane-major order."""
        p, n, r, c = self.data.shape
        return self.data.reshape(p * n, r, c)

    def empty_mask(self) -> np.ndarray:
        """True where an image has no strictly positive entry."""
        return ~np.any(self.images() > 0, axis=(1, 2))


@dataclass(frozen=True)
class SyntheticParams:
    """Controls for the bi-Maxwellian corpus generator.

    ``smoothness`` is the correlation scale of the per-node fields as a
    fraction of the node range; the value-range targets pin the global
    maximum entry exactly and the minimum approximately (the minimum falls
    out of the Gaussian tails).  ``rho`` is the bounded multiplicative
    cross-plane perturbation; ``noise`` adds per-cell noise relative to
    each image's peak.  The remaining knobs shape the quiet-bulk versus
    turbulent-patch structure of the corpus.
    """

    smoothness: float = 0.2
    value_min: float = 2.19e3
    value_max: float = 6.57e17
    rho: float = 5e-4
    noise: float = 0.0
    seed: int = 0
    n_surfaces: int = 12                 # contiguous node groups sharing density
    density_ln_span: float = 3.0         # ln-spread of the surface densities
    bulk_amplitude: float = 1e-4         # quiet intra-surface QoI variation
    turbulent_fraction: float = 0.01     # fraction of nodes inside patches
    turbulence_temp: float = 2.3         # log-amplitude of hot T excursions
    turbulence_flow: float = 0.9         # parallel-flow excursions (thermal units)
    blob_fraction: float = 0.18          # thermal width / grid extent

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ConfigError("rho must be in [0, 1)")
        if self.noise < 0 or self.bulk_amplitude < 0 or self.turbulence_temp < 0 \
                or self.turbulence_flow < 0:
            raise ConfigError("amplitudes must be non-negative")
        if not 0 < self.smoothness <= 1:
            raise ConfigError("smoothness must be in (0, 1]")
        if not 0 < self.blob_fraction < 0.5:
            raise ConfigError("blob_fraction must be in (0, 0.5)")
        if self.n_surfaces < 1:
            raise ConfigError("need at least one surface")
        if not 0 <= self.turbulent_fraction < 1:
            raise ConfigError("turbulent_fraction must be in [0, 1)")
        if not 0 < self.value_min < self.value_max:
            raise ConfigError("need 0 < value_min < value_max")


def make_grid(rows: int, cols: int, v_perp_max: float, v_par_max: float,
              mass: float) -> VelocityGrid:
    """Uniform velocity grid with trapezoidal quadrature weights."""
    if rows < 2 or cols < 2:
        raise ConfigError("rows and cols must both be >= 2")
    if v_perp_max <= 0 or v_par_max <= 0 or mass <= 0:
        raise ConfigError("velocity scales and mass must be positive")
    v_perp = np.linspace(0.0, v_perp_max, rows)
    v_par = np.linspace(-v_par_max, v_par_max, cols)
    w_r = np.ones(rows)
    w_r[0] = w_r[-1] = 0.5
    w_c = np.ones(cols)
    w_c[0] = w_c[-1] = 0.5
    d_perp = v_perp_max / (rows - 1)
    d_par = 2.0 * v_par_max / (cols - 1)
    vol = np.outer(w_r, w_c) * d_perp * d_par
    return VelocityGrid(v_perp=v_perp, v_par=v_par, vol=vol, mass=mass)


def _fourier_field(n_nodes: int, smoothness: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Smooth random 1D field over node index, max-normalized to [-1, 1]."""
    n_modes = max(1, int(round(1.0 / smoothness)))
    x = np.arange(n_nodes) / n_nodes
    out = np.zeros(n_nodes)
    for m in range(1, n_modes + 1):
        a, b = rng.standard_normal(2)
        out += (a * np.cos(2 * np.pi * m * x)
                + b * np.sin(2 * np.pi * m * x)) / (1.0 + m)
    peak = np.max(np.abs(out))
    if peak > 0:
        out /= peak
    return out


def _turbulence_window(n_nodes: int, fraction: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Steep-skirted [0, 1] mask covering roughly ``fraction`` of the nodes.

    Patches sit in the inner (high-density) half of the node range: the
    hot core region carries the strong activity.
    """
    w = np.zeros(n_nodes)
    if fraction <= 0:
        return w
    n_patches = 2
    width = max(4, int(fraction * n_nodes / n_patches))
    x = np.arange(n_nodes)
    for _ in range(n_patches):
        center = rng.integers(width, max(n_nodes // 2, width + 1))
        w = np.maximum(w, np.exp(-((x - center) / (0.7 * width)) ** 4))
    return w


def surface_layout(n_nodes: int, n_surfaces: int, ln_span: float,
                   grading: float = 1.5):
    """Per-surface ln-density levels and node counts.

    Densities are log-spaced over ``ln_span`` (densest first) and node
    counts grow toward the low-density edge as density^-grading:
    realistic thin hot cores next to broad cold edges, with a
    heavy-tailed density distribution across nodes.
    """
    n_surfaces = min(n_surfaces, n_nodes)
    if n_surfaces == 1:
        return np.zeros(1), np.array([n_nodes])
    ln_levels = -ln_span * np.arange(n_surfaces) / (n_surfaces - 1)
    weights = np.exp(-grading * ln_levels)
    counts = np.maximum(np.floor(n_nodes * weights / weights.sum()), 1.0)
    counts = counts.astype(np.int64)
    counts[-1] += n_nodes - counts.sum()   # absorb rounding in the edge
    if counts[-1] < 1:
        # tiny corpora: fall back to a near-equal split
        counts = np.full(n_surfaces, n_nodes // n_surfaces, dtype=np.int64)
        counts[:n_nodes % n_surfaces] += 1
    return ln_levels, counts


def surface_of_node(n_nodes: int, n_surfaces: int,
                    ln_span: float = 3.0) -> np.ndarray:
    """Surface index per node.

    Mesh node ordering is not radial, so each surface's nodes are spread
    evenly across the index range (golden-ratio stratification); any
    contiguous block of nodes then samples every surface.
    """
    _, counts = surface_layout(n_nodes, n_surfaces, ln_span)
    pos = (np.arange(n_nodes) * 0.6180339887498949) % 1.0
    bounds = np.cumsum(counts)[:-1] / n_nodes
    return np.searchsorted(bounds, pos, side="right")


def synth_qoi_fields(n_nodes: int, grid: VelocityGrid, params: SyntheticParams):
    """Per-node (density, u_par, t_perp, t_par) fields of the generator.

    Nodes are grouped into contiguous "surfaces" (mesh nodes on one flux
    surface see the same plasma state) whose densities are log-spaced over
    density_ln_span with node counts shrinking as density grows, giving a
    heavy-tailed density distribution while every quiet image remains a
    scalar multiple of one shape.  The turbulent patches add node-level
    excursions with a guaranteed hot-temperature amplitude of
    exp(turbulence_temp) and a flow amplitude of turbulence_flow thermal
    speeds, giving the other derived quantities a healthy corpus-wide
    range.  The density field is returned pre-scaled so the global
    maximum histogram entry of the noiseless corpus equals ``value_max``.
    """
    rng = np.random.Generator(np.random.PCG64(params.seed))
    # Gaussian width blob_fraction * v_perp_max <=> t0 = m w^2 / 2
    t0 = 0.5 * grid.mass * (params.blob_fraction * grid.v_perp[-1]) ** 2
    ln_levels, _ = surface_layout(n_nodes, params.n_surfaces,
                                  params.density_ln_span)
    surf = surface_of_node(n_nodes, params.n_surfaces, params.density_ln_span)
    ln_n = ln_levels[surf]
    # relative fluctuations are an edge phenomenon: restrict the patches to
    # the few coldest low-density surfaces
    edge = surf >= params.n_surfaces - max(min(3, params.n_surfaces // 2), 1)
    w = _turbulence_window(n_nodes, params.turbulent_fraction, rng) * edge

    def _excursion(signed):
        # cubed smooth field: concentrated near 0 with rare strong bursts;
        # max-normalizing the windowed product pins the realized amplitude
        f = _fourier_field(n_nodes, params.smoothness / 2, rng) ** 3
        if not signed:
            f = np.abs(f)
        prod = w * f
        peak = np.max(np.abs(prod))
        return prod / peak if peak > 0 else prod

    def _bulk():
        return params.bulk_amplitude * _fourier_field(n_nodes,
                                                      params.smoothness, rng)

    turb_u = _excursion(signed=True)
    turb_tp = _excursion(signed=False)
    turb_tl = _excursion(signed=False)

    vth = np.sqrt(2.0 * t0 / grid.mass)
    u = vth * (_bulk() + params.turbulence_flow * turb_u)
    xi_p = np.clip(_bulk() + params.turbulence_temp * turb_tp, -1.5, 3.5)
    xi_l = np.clip(_bulk() + params.turbulence_temp * turb_tl, -1.5, 3.5)
    t_perp = t0 * np.exp(xi_p)
    t_par = t0 * np.exp(xi_l)
    n = np.exp(ln_n)

    # rescale density so the tallest histogram entry hits the target max
    shapes, z = _shape_images(grid, u, t_perp, t_par)
    peaks = np.max(shapes, axis=(1, 2))
    cur_max = np.max(n / z * peaks)
    n = n * (params.value_max / cur_max)
    return n, u, t_perp, t_par


def _shape_images(grid: VelocityGrid, u, t_perp, t_par):
    """Unnormalized bi-Maxwellian shapes (n_nodes, rows, cols) and their
    discrete normalizers z = sum(shape * vol).

    The temperature moments carry a 1/2 factor against a scalar volume
    weight, so a Gaussian whose second moment equals t uses 2t/m variance:
    exp(-m v^2 / (4 t)).  The generating fields then coincide with the
    computed moments up to quadrature error.
    """
    m = grid.mass
    ep = m * grid.v_perp[:, None] ** 2             # (rows, 1)
    dpar = grid.v_par[None, None, :] - u[:, None, None]
    expo = (-ep[None, :, :] / (4.0 * t_perp[:, None, None])
            - m * dpar ** 2 / (4.0 * t_par[:, None, None]))
    shapes = np.exp(expo)
    z = np.einsum("nrc,rc->n", shapes, grid.vol)
    return shapes, z


def gen_synthetic(n_planes: int, n_nodes: int, grid: VelocityGrid,
                  params: SyntheticParams) -> FDataset:
    """Deterministic synthetic corpus; planes differ only by the rho term."""
    if n_planes < 1 or n_nodes < 1:
        raise ConfigError("need at least one plane and one node")
    n, u, t_perp, t_par = synth_qoi_fields(n_nodes, grid, params)
    shapes, z = _shape_images(grid, u, t_perp, t_par)
    base = shapes * (n / z)[:, None, None]
    del shapes

    data = np.empty((n_planes, n_nodes, grid.rows, grid.cols), dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(params.seed + 0x9E3779B97F4A7C15))
    for p in range(n_planes):
        img = base.copy()
        if params.rho > 0:
            eta = rng.uniform(-1.0, 1.0, size=img.shape)
            img *= 1.0 + params.rho * eta
        if params.noise > 0:
            zeta = rng.uniform(-1.0, 1.0, size=img.shape)
            img += params.noise * np.max(img, axis=(1, 2), keepdims=True) * zeta
        img = np.maximum(img, 0.0)
        # emulate the count floor of real histograms: bins whose expected
        # occupancy falls below the minimum target hold no particles
        img[img < params.value_min] = 0.0
        data[p] = img
    return FDataset(grid=grid, data=data, timestep=0)


# ---------------------------------------------------------------------------
# dataset files: <name>.json manifest + <name>.f64 raw little-endian payload

def save_dataset(ds: FDataset, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    payload_path = path.with_suffix(".f64")
    manifest = {
        "n_planes": ds.n_planes,
        "n_nodes": ds.n_nodes,
        "rows": ds.grid.rows,
        "cols": ds.grid.cols,
        "timestep": ds.timestep,
        "endianness": "little",
        "payload": payload_path.name,
        "mass": ds.grid.mass,
        "v_perp": ds.grid.v_perp.tolist(),
        "v_par": ds.grid.v_par.tolist(),
        "vol": ds.grid.vol.tolist(),
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    payload_path.write_bytes(ds.data.astype("<f8").tobytes())


def load_dataset(path) -> FDataset:
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("endianness") != "little":
        raise SizeMismatchError("unsupported payload endianness tag")
    grid = VelocityGrid(
        v_perp=np.array(manifest["v_perp"], dtype=np.float64),
        v_par=np.array(manifest["v_par"], dtype=np.float64),
        vol=np.array(manifest["vol"], dtype=np.float64),
        mass=float(manifest["mass"]),
    )
    shape = (manifest["n_planes"], manifest["n_nodes"],
             manifest["rows"], manifest["cols"])
    raw = (path.parent / manifest["payload"]).read_bytes()
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise SizeMismatchError(
            f"payload is {len(raw)} bytes, manifest implies {expected}")
    data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return FDataset(grid=grid, data=data, timestep=int(manifest["timestep"]))


def dataset_nbytes(ds: FDataset) -> int:
    """Original byte size used by compression-ratio accounting."""
    manifest_like = {
        "n_planes": ds.n_planes, "n_nodes": ds.n_nodes,
        "rows": ds.grid.rows, "cols": ds.grid.cols,
        "timestep": ds.timestep, "endianness": "little",
        "payload": "payload.f64", "mass": ds.grid.mass,
        "v_perp": ds.grid.v_perp.tolist(), "v_par": ds.grid.v_par.tolist(),
        "vol": ds.grid.vol.tolist(),
    }
    return ds.data.size * 8 + len(json.dumps(manifest_like, indent=1))
