"""Problem parameters, velocity/sphere/spatial grids and the distribution container."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid problem configuration."""


class EvenNodeCount(ConfigError):
    """The velocity lattice needs an odd node count per axis."""


class BoundViolation(ValueError):
    """A distribution left the admissible range 0 <= F <= 1/delta."""

    def __init__(self, message, x_index=None, v_index=None, value=None):
        super().__init__(message)
        self.x_index = x_index
        self.v_index = v_index
        self.value = value


DEFAULTS = {
    "delta": 1.0,
    "rho": 1.0,
    "gamma": -1.0,
    "beta": 7.0,
    "angular_coefficient": 1.0,
    "v_max": 6.0,
    "n_per_axis": 13,
    "sphere_polar": 4,
    "sphere_azimuth": 8,
    "domain_mode": "homogeneous",
    "n_x": 1,
    "length": 1.0,
    "cutoff_m": 0.5,
}


@dataclass(frozen=True)
class ModelParams:
    delta: float = 1.0
    rho: float = 1.0
    gamma: float = -1.0
    beta: float = 7.0
    angular_coefficient: float = 1.0
    domain_mode: str = "homogeneous"

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.rho > 0.0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not -3.0 < self.gamma < 0.0:
            raise ConfigError(f"gamma must lie in (-3, 0), got {self.gamma}")
        if not self.beta > 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.angular_coefficient > 0.0:
            raise ConfigError("angular_coefficient must be positive")
        if self.domain_mode not in ("homogeneous", "torus1d"):
            raise ConfigError(f"unknown domain_mode {self.domain_mode!r}")

    @property
    def pauli_cap(self):
        """Upper bound 1/delta (inf in the classical case)."""
        return np.inf if self.delta == 0.0 else 1.0 / self.delta

    def replace(self, **changes):
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return ModelParams(**values)

    @classmethod
    def from_config(cls, config):
        cfg = {**DEFAULTS, **config}
        try:
            return cls(
                delta=float(cfg["delta"]),
                rho=float(cfg["rho"]),
                gamma=float(cfg["gamma"]),
                beta=float(cfg["beta"]),
                angular_coefficient=float(cfg["angular_coefficient"]),
                domain_mode=str(cfg["domain_mode"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class VelocityGrid:
    """Cartesian lattice on [-v_max, v_max]^3 with an odd node count per axis.

    Nodes are flattened in C order, so node ``(i, j, k)`` has index
    ``(i * n + j) * n + k`` and the mirror node ``-v`` has index ``N - 1 - idx``.
    """

    v_max: float
    n_per_axis: int

    def __post_init__(self):
        if not self.v_max > 0:
            raise ConfigError(f"v_max must be positive, got {self.v_max}")
        if int(self.n_per_axis) != self.n_per_axis or self.n_per_axis < 3:
            raise ConfigError(f"n_per_axis must be an integer >= 3, got {self.n_per_axis}")
        if self.n_per_axis % 2 == 0:
            raise EvenNodeCount(f"n_per_axis must be odd, got {self.n_per_axis}")

    @property
    def spacing(self):
        return 2.0 * self.v_max / (self.n_per_axis - 1)

    @property
    def cell_weight(self):
        return self.spacing ** 3

    @property
    def size(self):
        return self.n_per_axis ** 3

    @property
    def axis(self):
        return np.linspace(-self.v_max, self.v_max, self.n_per_axis)

    @property
    def nodes(self):
        a = self.axis
        vx, vy, vz = np.meshgrid(a, a, a, indexing="ij")
        return np.stack([vx.ravel(), vy.ravel(), vz.ravel()], axis=1)

    @property
    def speed_sq(self):
        return np.sum(self.nodes ** 2, axis=1)

    def mirror_index(self):
        return np.arange(self.size)[::-1].copy()

    def index_of(self, i, j, k):
        n = self.n_per_axis
        return (i * n + j) * n + k


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre in cos(theta) times uniform azimuth on the unit sphere."""

    nodes: np.ndarray
    weights: np.ndarray
    polar: int = 0
    azimuth: int = 0

    @classmethod
    def product_rule(cls, polar, azimuth):
        if polar < 1 or azimuth < 2:
            raise ConfigError("sphere rule needs polar >= 1 and azimuth >= 2")
        if azimuth % 2:
            raise ConfigError("sphere_azimuth must be even for an antipodal rule")
        x, wx = np.polynomial.legendre.leggauss(polar)
        # leggauss nodes are symmetric only up to roundoff
        x = 0.5 * (x - x[::-1])
        wx = 0.5 * (wx + wx[::-1])
        phi = 2.0 * np.pi * np.arange(azimuth) / azimuth
        cos_t = np.repeat(x, azimuth)
        sin_t = np.sqrt(np.clip(1.0 - cos_t ** 2, 0.0, None))
        ph = np.tile(phi, polar)
        nodes = np.stack([sin_t * np.cos(ph), sin_t * np.sin(ph), cos_t], axis=1)
        nodes /= np.linalg.norm(nodes, axis=1)[:, None]
        weights = np.repeat(wx, azimuth) * (2.0 * np.pi / azimuth)
        return cls(nodes=nodes, weights=weights, polar=polar, azimuth=azimuth)

    @property
    def size(self):
        return len(self.weights)

    def antipode_index(self):
        """Index of -omega for every node (the rule is antipodally closed)."""
        d = np.linalg.norm(self.nodes[:, None, :] + self.nodes[None, :, :], axis=2)
        idx = np.argmin(d, axis=1)
        if np.max(d[np.arange(self.size), idx]) > 1e-12:
            raise ConfigError("sphere rule is not antipodally symmetric")
        return idx


@dataclass(frozen=True)
class SpatialGrid:
    mode: str = "homogeneous"
    n_x: int = 1
    length: float = 1.0

    def __post_init__(self):
        if self.mode not in ("homogeneous", "torus1d"):
            raise ConfigError(f"unknown spatial mode {self.mode!r}")
        if self.n_x < 1:
            raise ConfigError("n_x must be >= 1")
        if not self.length > 0:
            raise ConfigError("length must be positive")
        if self.mode == "homogeneous" and self.n_x != 1:
            raise ConfigError("homogeneous mode uses a single spatial cell")

    @property
    def dx(self):
        return self.length / self.n_x if self.mode == "torus1d" else 1.0

    @property
    def points(self):
        if self.mode == "homogeneous":
            return np.zeros(1)
        return self.dx * np.arange(self.n_x)

    @property
    def volume(self):
        return self.length if self.mode == "torus1d" else 1.0


@dataclass
class DistributionField:
    """F sampled on (x-node, v-node); must satisfy 0 <= F <= 1/delta."""

    values: np.ndarray
    params: ModelParams
    clamp_events: int = field(default=0)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    def first_violation(self, tol=0.0):
        """Return (x, v, value) of the first out-of-range entry, or None."""
        vals = self.values
        bad = ~np.isfinite(vals) | (vals < -tol)
        if self.params.delta > 0:
            bad |= vals > self.params.pauli_cap + tol
        if not bad.any():
            return None
        flat = int(np.argmax(bad.ravel()))
        ix, iv = np.unravel_index(flat, vals.shape)
        return int(ix), int(iv), float(vals[ix, iv])

    def check(self, tol=0.0):
        hit = self.first_violation(tol)
        if hit is not None:
            ix, iv, val = hit
            raise BoundViolation(
                f"F[{ix}, {iv}] = {val!r} outside [0, {self.params.pauli_cap}]",
                x_index=ix, v_index=iv, value=val,
            )
        return self

    def copy(self):
        return DistributionField(self.values.copy(), self.params, self.clamp_events)


def build_grids(config):
    """Velocity lattice, sphere rule and spatial grid from a config mapping."""
    cfg = {**DEFAULTS, **config}
    try:
        v_max = float(cfg["v_max"])
        n = cfg["n_per_axis"]
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        if not isinstance(n, (int, np.integer)):
            raise ConfigError(f"n_per_axis must be an integer, got {n!r}")
        vgrid = VelocityGrid(v_max=v_max, n_per_axis=int(n))
        sphere = SphereQuadrature.product_rule(int(cfg["sphere_polar"]), int(cfg["sphere_azimuth"]))
        mode = str(cfg["domain_mode"])
        n_x = int(cfg["n_x"]) if mode == "torus1d" else 1
        space = SpatialGrid(mode=mode, n_x=n_x, length=float(cfg["length"]))
    except (TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return vgrid, sphere, space


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def weight_w_beta(v, beta):
    """(1 + |v|)^beta for one velocity or an (N, 3) array of them."""
    v = np.asarray(v, dtype=float)
    return (1.0 + np.linalg.norm(v, axis=-1)) ** beta


def _finite(f):
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains NaN or inf")
    return f


def weighted_sup_norm(f, vgrid, beta):
    """max over (x, v) of w_beta(v) |f(x, v)|."""
    f = np.atleast_2d(_finite(f))
    w = weight_w_beta(vgrid.nodes, beta)
    return float(np.max(np.abs(f) * w[None, :])) if f.size else 0.0


def linf_x_l1_v_norm(f, vgrid):
    """max over x of sum_v |f(x, v)| h^3."""
    f = np.atleast_2d(_finite(f))
    return float(np.max(np.sum(np.abs(f), axis=1)) * vgrid.cell_weight)
