"""Static link model: log-distance path loss, shadowing, bounded asymmetry, and
the reception/collision rules applied to overlapping transmissions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, RSSI_MAX, RSSI_MIN

# PRR at the top of the gray area (CC2420 reference figure).
GRAY_AREA_PRR = 0.85


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def distance(self, other: "Position") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class RadioParams:
    pl0: float = 40.0
    path_loss_exponent: float = 5.5
    shadowing_sigma: float = 1.0
    symmetry_sigma: float = 1.0
    asymmetry_bound: float = 5.0
    prr_plateau: float = 0.95
    gray_floor: float = -94.0
    capture_margin: float = 3.0
    # every audible frame is delivered and overlaps never collide
    ideal_channel: bool = False

    def validate(self, gamma_ga: float | None = None, prefix: str = "radio") -> None:
        if not 1.5 <= self.path_loss_exponent <= 6.0:
            raise ConfigError(f"{prefix}.path_loss_exponent", "must lie in [1.5, 6]")
        if not 0.0 < self.prr_plateau <= 1.0:
            raise ConfigError(f"{prefix}.prr_plateau", "must lie in (0, 1]")
        if self.capture_margin < 0:
            raise ConfigError(f"{prefix}.capture_margin_db", "must be >= 0")
        if self.shadowing_sigma < 0 or self.symmetry_sigma < 0:
            raise ConfigError(f"{prefix}.shadowing_sigma_db", "standard deviations must be >= 0")
        if self.asymmetry_bound < 0:
            raise ConfigError(f"{prefix}.asymmetry_bound_db", "must be >= 0")
        if gamma_ga is not None and not self.gray_floor < gamma_ga:
            raise ConfigError(f"{prefix}.gray_floor_dbm", "must be below gamma_ga")

    def mean_rssi(self, distance: float, tx_power: float) -> float:
        return tx_power - self.pl0 - 10.0 * self.path_loss_exponent * math.log10(max(distance, 1.0))

    def distance_for(self, rssi: float, tx_power: float) -> float:
        """Distance at which the zero-shadowing RSSI equals ``rssi``."""
        return 10.0 ** ((tx_power - self.pl0 - rssi) / (10.0 * self.path_loss_exponent))


class LinkTable:
    """Frozen per-direction RSSI; ``rssi[a, b]`` is what ``b`` hears from ``a``."""

    def __init__(self, rssi: np.ndarray):
        self.rssi = rssi
        self.rssi.setflags(write=False)
        self.size = rssi.shape[0]
        self._lists = rssi.tolist()

    def __call__(self, tx: int, rx: int) -> float:
        return self._lists[tx][rx]

    def audible_from(self, tx: int, floor: float) -> list[int]:
        row = self._lists[tx]
        return [rx for rx in range(self.size) if rx != tx and row[rx] > floor]

    def max_asymmetry(self) -> float:
        # values sit on a 0.1 dB grid; measure on that grid so float noise cannot exceed the bound
        return float(np.max(np.round(np.abs(self.rssi - self.rssi.T) * 10.0)) / 10.0)

    def __eq__(self, other) -> bool:
        return isinstance(other, LinkTable) and np.array_equal(self.rssi, other.rssi)


def build_link_table(positions: Sequence[Position], params: RadioParams, tx_power: float,
                     seed: int | np.random.Generator) -> LinkTable:
    if len(positions) < 2:
        raise ValueError("need at least two positions")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(positions)
    xyz = np.array([(p.x, p.y, p.z) for p in positions], dtype=float)
    dist = np.sqrt(((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=-1))
    mean = tx_power - params.pl0 - 10.0 * params.path_loss_exponent * np.log10(np.maximum(dist, 1.0))

    iu = np.triu_indices(n, k=1)
    shadow = np.zeros((n, n))
    offset = np.zeros((n, n))
    # draws are made even at sigma 0 so that enabling noise never shifts other streams
    shadow_draw = rng.standard_normal(len(iu[0])) * params.shadowing_sigma
    half_draw = rng.standard_normal(len(iu[0])) * params.symmetry_sigma / 2.0
    shadow[iu] = shadow_draw
    shadow = shadow + shadow.T

    # each direction carries +-half of the pair offset; the half is quantized and clamped
    # so that |rssi_ab - rssi_ba| never exceeds the asymmetry bound after rounding.
    half_cap = math.floor(params.asymmetry_bound / 2.0 * 10.0 + 1e-9) / 10.0
    half = np.clip(np.round(half_draw * 10.0) / 10.0, -half_cap, half_cap)
    offset[iu] = half
    offset = offset - offset.T

    base = np.round((mean - shadow) * 10.0) / 10.0
    rssi = np.round((base + offset) * 10.0) / 10.0
    rssi = np.clip(rssi, RSSI_MIN, RSSI_MAX)
    np.fill_diagonal(rssi, 0.0)
    return LinkTable(rssi)


def reception_probability(rssi: float, params: RadioParams, gamma_ga: float) -> float:
    """Packet reception rate for a lone frame heard at ``rssi``."""
    floor = params.gray_floor
    if rssi <= floor:
        return 0.0
    if params.ideal_channel:
        return 1.0
    if rssi >= gamma_ga:
        return params.prr_plateau
    top = min(GRAY_AREA_PRR, params.prr_plateau)
    return top * (rssi - floor) / (gamma_ga - floor)


def power_sum_dbm(levels: Sequence[float]) -> float:
    if not levels:
        return -math.inf
    return 10.0 * math.log10(sum(10.0 ** (v / 10.0) for v in levels))


@dataclass(eq=False)
class Transmission:
    tx: int
    frame: object
    start: int
    duration: int
    destination: int = -1
    kind: str = "data"

    @property
    def end(self) -> int:
        return self.start + self.duration

    def overlaps(self, other: "Transmission") -> bool:
        return self.start < other.end and other.start < self.end


def resolve_receptions(transmissions: Sequence[Transmission], receiver: int, table: LinkTable,
                       params: RadioParams, rng: np.random.Generator,
                       gamma_ga: float = -87.0) -> list:
    """Frames among ``transmissions`` (all overlapping in time) that ``receiver`` decodes."""
    return [t.frame for t in decodable(transmissions, receiver, table, params, rng, gamma_ga)]


def decodable(transmissions: Sequence[Transmission], receiver: int, table: LinkTable,
              params: RadioParams, rng: np.random.Generator,
              gamma_ga: float = -87.0) -> list[Transmission]:
    if any(t.tx == receiver for t in transmissions):
        return []
    audible = [(table(t.tx, receiver), t) for t in transmissions
               if table(t.tx, receiver) > params.gray_floor]
    if not audible:
        return []
    if params.ideal_channel:
        return [t for _, t in audible]
    audible.sort(key=lambda pair: pair[0], reverse=True)
    best_rssi, best = audible[0]
    if len(audible) > 1:
        interference = power_sum_dbm([r for r, _ in audible[1:]])
        if best_rssi - interference < params.capture_margin:
            return []
    if rng.random() < reception_probability(best_rssi, params, gamma_ga):
        return [best]
    return []
