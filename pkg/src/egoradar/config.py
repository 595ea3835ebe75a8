"""Radar waveform / virtual-array configuration and closed-form derived limits."""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

C0 = 299_792_458.0  # speed of light [m/s]


class ConfigError(ValueError):
    """Raised when a configuration violates a hard invariant."""


class AdcWindowWarning(UserWarning):
    pass


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


@dataclass(frozen=True)
class RadarConfig:
    """FMCW TDM-MIMO waveform and array parameters (SI units).

    The virtual array is a uniform ``num_rx`` (horizontal) by ``num_tx``
    (vertical) grid: RX elements spread along azimuth, TX elements along
    elevation.  FFT sizes of ``None`` default to the next power of two
    of the matching data dimension.
    """

    carrier_freq_hz: float = 77e9
    chirp_slope_hz_per_s: float = 21.0017e12
    sample_rate_hz: float = 4e6
    chirp_duration_s: float = 7.5e-6
    chirps_per_tx_per_frame: int = 255
    samples_per_chirp: int = 128
    num_tx: int = 8
    num_rx: int = 8
    element_spacing_m: float | None = None  # None -> lambda / 2
    frame_rate_hz: float = 20.0
    tx_amplitude: float = 1.0
    rx_amplitude: float = 1.0
    initial_phase_rad: float = 0.0
    range_fft_size: int | None = None
    doppler_fft_size: int | None = None
    azimuth_fft_size: int = 128
    elevation_fft_size: int = 128

    def __post_init__(self):
        positive = (
            "carrier_freq_hz", "chirp_slope_hz_per_s", "sample_rate_hz",
            "chirp_duration_s", "chirps_per_tx_per_frame", "samples_per_chirp",
            "num_tx", "num_rx", "frame_rate_hz", "tx_amplitude", "rx_amplitude",
            "azimuth_fft_size", "elevation_fft_size",
        )
        for name in positive:
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {value!r}")
        if not np.isfinite(self.initial_phase_rad):
            raise ConfigError("initial_phase_rad must be finite")
        if self.element_spacing_m is None:
            object.__setattr__(self, "element_spacing_m", self.wavelength / 2)
        elif not (np.isfinite(self.element_spacing_m) and self.element_spacing_m > 0):
            raise ConfigError("element_spacing_m must be finite and > 0")
        if self.range_fft_size is None:
            object.__setattr__(self, "range_fft_size", next_pow2(self.samples_per_chirp))
        if self.doppler_fft_size is None:
            object.__setattr__(self, "doppler_fft_size", next_pow2(self.chirps_per_tx_per_frame))
        if self.range_fft_size < self.samples_per_chirp:
            raise ConfigError("range_fft_size smaller than samples_per_chirp")
        if self.doppler_fft_size < self.chirps_per_tx_per_frame:
            raise ConfigError("doppler_fft_size smaller than chirps_per_tx_per_frame")
        if self.azimuth_fft_size < self.num_rx or self.elevation_fft_size < self.num_tx:
            raise ConfigError("angle FFT sizes must cover the virtual array")
        # TDM configurations commonly sample over several TX slots, so an ADC
        # window longer than one chirp slot is only reported.
        adc_window = self.samples_per_chirp / self.sample_rate_hz
        if adc_window > self.chirp_duration_s * (1 + 1e-12):
            warnings.warn(
                f"ADC window {adc_window * 1e6:.2f} us exceeds chirp duration "
                f"{self.chirp_duration_s * 1e6:.2f} us",
                AdcWindowWarning,
                stacklevel=3,
            )
        if self.element_spacing_m > self.wavelength / 2 * (1 + 1e-9):
            warnings.warn("element spacing exceeds lambda/2: grating lobes possible", stacklevel=3)

    @property
    def wavelength(self) -> float:
        return wavelength(self)

    @property
    def pri_s(self) -> float:
        """TDM pulse repetition interval N_T * T_c."""
        return self.num_tx * self.chirp_duration_s

    @property
    def v_max(self) -> float:
        return max_unambiguous_velocity(self)

    @property
    def layout(self) -> VirtualArrayLayout:
        return VirtualArrayLayout(self.num_rx, self.num_tx, self.element_spacing_m)

    def replace(self, **changes) -> RadarConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RadarConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown radar config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class VirtualArrayLayout:
    """Uniform planar virtual array: ``horizontal_count`` x ``vertical_count``."""

    horizontal_count: int
    vertical_count: int
    element_spacing_m: float
    positions: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p, q = np.meshgrid(np.arange(self.horizontal_count), np.arange(self.vertical_count), indexing="ij")
        grid = np.stack([p.ravel(), q.ravel()], axis=1)
        object.__setattr__(self, "positions", grid)

    @property
    def size(self) -> int:
        return self.horizontal_count * self.vertical_count

    def positions_m(self) -> np.ndarray:
        return self.positions * self.element_spacing_m


def wavelength(cfg: RadarConfig) -> float:
    return C0 / cfg.carrier_freq_hz


def max_unambiguous_velocity(cfg: RadarConfig) -> float:
    """lambda / (4 N_T T_c)."""
    return wavelength(cfg) / (4.0 * cfg.num_tx * cfg.chirp_duration_s)


def derived_limits(cfg: RadarConfig, range_fft_size: int | None = None,
                   doppler_fft_size: int | None = None) -> tuple[float, float, float]:
    """Return ``(range_bin_m, max_range_m, doppler_bin_mps)``."""
    n_range = range_fft_size or cfg.range_fft_size
    n_doppler = doppler_fft_size or cfg.doppler_fft_size
    max_range = cfg.sample_rate_hz * C0 / (2.0 * cfg.chirp_slope_hz_per_s)
    return max_range / n_range, max_range, 2.0 * max_unambiguous_velocity(cfg) / n_doppler


# Named presets.  ``paper_sim`` is the 8x8, 60 us PRI simulation setup;
# ``paper_sim_ambiguous`` triples the PRI; ``ti_cascade`` is the 12TX/16RX
# cascaded board run on a uniform grid.
PRESETS = {
    "paper_sim": {},
    "paper_sim_ambiguous": {"chirp_duration_s": 22.5e-6},
    "ti_cascade": {
        "num_tx": 12, "num_rx": 16, "chirp_duration_s": 20e-6,
        "samples_per_chirp": 128, "sample_rate_hz": 8e6, "chirp_slope_hz_per_s": 40e12,
        "chirps_per_tx_per_frame": 64, "frame_rate_hz": 10.0,
    },
}


def preset(name: str, **overrides) -> RadarConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return RadarConfig(**base)


__all__ = [
    "C0", "AdcWindowWarning", "ConfigError", "RadarConfig", "VirtualArrayLayout", "wavelength",
    "max_unambiguous_velocity", "derived_limits", "preset", "PRESETS", "next_pow2",
]
