"""Indoor link budget: WINNER II path loss, noise floor, SINR and Shannon SE."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

THERMAL_DENSITY_DBM_HZ = -174.0
MIN_DISTANCE_M = 0.1


@dataclass(frozen=True)
class RadioParams:
    carrier_freq: float = 2.0              # GHz
    internal_wall_loss: float = 5.0        # dB, serving link
    external_wall_loss_per_wall: float = 10.0
    n_external_walls_interference: int = 2
    shadowing_sigma: float = 6.0
    ms_noise_figure: float = 8.0
    channel_width: float = 180_000.0       # Hz
    se_cap: Optional[float] = None         # bps/Hz ceiling, None = pure Shannon

    def __post_init__(self):
        if self.carrier_freq <= 0 or self.channel_width <= 0:
            raise ValueError("carrier_freq and channel_width must be positive")
        losses = (self.internal_wall_loss, self.external_wall_loss_per_wall,
                  self.n_external_walls_interference, self.shadowing_sigma,
                  self.ms_noise_figure)
        if min(losses) < 0:
            raise ValueError("losses must be non-negative")

    @property
    def interference_wall_loss(self):
        return self.external_wall_loss_per_wall * self.n_external_walls_interference


@dataclass(frozen=True)
class LinkSample:
    carrier_power: float                    # dBm
    interference_powers: tuple = field(default_factory=tuple)  # dBm each
    noise_power: float = -math.inf

    def __post_init__(self):
        if not math.isfinite(self.noise_power):
            raise ValueError("noise power must be finite")


def db_to_linear(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0) if np.ndim(x) else 10.0 ** (x / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x) if np.ndim(x) else 10.0 * math.log10(x)


def _check_d(d):
    if np.any(np.asarray(d) <= 0):
        raise ValueError("distance must be positive")


def path_loss_los(d, f_c):
    _check_d(d)
    return 18.7 * np.log10(d) + 46.8 + 20.0 * np.log10(f_c / 5.0)


def path_loss_nlos(d, f_c, total_wall_loss):
    _check_d(d)
    if total_wall_loss < 0:
        raise ValueError("wall loss must be non-negative")
    return 20.0 * np.log10(d) + 46.4 + 20.0 * np.log10(f_c / 5.0) + total_wall_loss


def noise_power(params):
    return THERMAL_DENSITY_DBM_HZ + 10.0 * math.log10(params.channel_width) + params.ms_noise_figure


def received_power(tx, pl, shadowing_db=0.0):
    return tx - pl + shadowing_db


def shadowing_draws(rng, sigma, size):
    """Zero-mean Gaussian shadowing in dB from a caller-owned generator."""
    return rng.normal(0.0, sigma, size=size)


def sinr(link):
    c = 10.0 ** (link.carrier_power / 10.0)
    i = math.fsum(10.0 ** (p / 10.0) for p in link.interference_powers)
    n = 10.0 ** (link.noise_power / 10.0)
    return 10.0 * math.log10(c / (i + n))


def spectral_efficiency(sinr_db, cap=None):
    se = np.log2(1.0 + np.power(10.0, np.asarray(sinr_db, dtype=float) / 10.0))
    if cap is not None:
        se = np.minimum(se, cap)
    return float(se) if np.ndim(se) == 0 else se


def safety_distance_from_threshold(interference_threshold, interferer_tx, params):
    """Distance beyond which path loss alone keeps interference at or below
    ``interference_threshold`` (dBm).  Shadowing is ignored on purpose: this
    is the worst case used to pick the safety distance."""
    wall = params.interference_wall_loss
    needed_pl = interferer_tx - interference_threshold
    exponent = (needed_pl - 46.4 - 20.0 * math.log10(params.carrier_freq / 5.0) - wall) / 20.0
    d = 10.0 ** exponent
    if d < MIN_DISTANCE_M:
        raise ValueError(
            f"threshold {interference_threshold} dBm exceeds the interference "
            f"received at {MIN_DISTANCE_M} m; not invertible")
    return d
