"""System configuration and the plain-text key/value config format.

Config files are ``key = value`` lines; ``#`` starts a comment.  Keys and units:

=====================  ===========================================  ========
key                    meaning                                      unit
=====================  ===========================================  ========
n_tx                   BS antennas                                  count
n_users                users                                        count
n_ris                  STAR-RIS panels                              count
n_elems_per_ris        elements per panel                           count
n_users_t_region       users in the transmission region (first K0)  count
p_max_dbm              transmit power budget                        dBm
noise_power_dbm        receiver noise power                         dBm
rician_factor          Rician K-factor (linear)                     --
carrier_wavelength     carrier wavelength                           m
elem_spacing           STAR-RIS element spacing (default lambda/2)  m
bs_height              BS antenna height                            m
ris_height             STAR-RIS height                              m
ris_spacing            x-offset between consecutive panels          m
user_region_t          x0,x1,y0,y1 rectangle of T-region users      m
user_region_r          x0,x1,y0,y1 rectangle of R-region users      m
rng_seed               64-bit seed                                  --
=====================  ===========================================  ========

dBm values are converted to watts once, when the config is parsed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

Region = tuple[float, float, float, float]


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Physical-layer and geometry parameters of one distributed STAR-RIS system.

    Powers are stored in watts.  ``user_region_t``/``user_region_r`` are
    ``(x0, x1, y0, y1)`` rectangles on the ground plane.
    """

    n_tx: int = 8
    n_users: int = 4
    n_ris: int = 2
    n_elems_per_ris: int = 4
    n_users_t_region: int = 2
    p_max: float = 1.0
    noise_power: float = dbm_to_watt(-130.0)
    rician_factor: float = 3.0
    carrier_wavelength: float = 0.1
    elem_spacing: float | None = None
    bs_height: float = 10.0
    ris_height: float = 5.0
    ris_spacing: float = 10.0
    user_region_t: Region = (20.0, 30.0, 20.0, 30.0)
    user_region_r: Region = (-30.0, -20.0, 20.0, 30.0)
    rng_seed: int = 0
    extra: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.n_tx < 1:
            raise ValueError(f"n_tx must be >= 1, got {self.n_tx}")
        if self.n_users < 1 or self.n_ris < 1 or self.n_elems_per_ris < 1:
            raise ValueError("n_users, n_ris and n_elems_per_ris must be >= 1")
        if not 1 <= self.n_users_t_region <= self.n_users:
            raise ValueError(
                f"need 1 <= n_users_t_region <= n_users, got {self.n_users_t_region}"
            )
        if self.p_max <= 0 or self.noise_power <= 0:
            raise ValueError("p_max and noise_power must be positive")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be >= 0")
        if self.carrier_wavelength <= 0:
            raise ValueError("carrier_wavelength must be positive")
        for name in ("user_region_t", "user_region_r"):
            x0, x1, y0, y1 = getattr(self, name)
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"{name} must have positive area, got {(x0, x1, y0, y1)}")

    @property
    def n_elems(self) -> int:
        """Total element count L*M."""
        return self.n_ris * self.n_elems_per_ris

    @property
    def spacing(self) -> float:
        return self.carrier_wavelength / 2 if self.elem_spacing is None else self.elem_spacing

    def replace(self, **changes: Any) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    # -- plain-text format -------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_items():
            if isinstance(value, tuple):
                value = ",".join(repr(float(v)) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def to_items(self) -> list[tuple[str, Any]]:
        return [
            ("n_tx", self.n_tx),
            ("n_users", self.n_users),
            ("n_ris", self.n_ris),
            ("n_elems_per_ris", self.n_elems_per_ris),
            ("n_users_t_region", self.n_users_t_region),
            ("p_max_dbm", repr(watt_to_dbm(self.p_max))),
            ("noise_power_dbm", repr(watt_to_dbm(self.noise_power))),
            ("rician_factor", repr(self.rician_factor)),
            ("carrier_wavelength", repr(self.carrier_wavelength)),
            ("elem_spacing", repr(self.spacing)),
            ("bs_height", repr(self.bs_height)),
            ("ris_height", repr(self.ris_height)),
            ("ris_spacing", repr(self.ris_spacing)),
            ("user_region_t", self.user_region_t),
            ("user_region_r", self.user_region_r),
            ("rng_seed", self.rng_seed),
        ]

    def to_dict(self) -> dict[str, Any]:
        """Lossless dict of the stored (watt) fields, for embedding in file headers."""
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "extra"}
        d["user_region_t"] = list(self.user_region_t)
        d["user_region_r"] = list(self.user_region_r)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemConfig":
        d = dict(d)
        for name in ("user_region_t", "user_region_r"):
            if name in d:
                d[name] = tuple(float(v) for v in d[name])
        return cls(**d)


_INT_KEYS = {"n_tx", "n_users", "n_ris", "n_elems_per_ris", "n_users_t_region", "rng_seed"}
_FLOAT_KEYS = {
    "rician_factor",
    "carrier_wavelength",
    "elem_spacing",
    "bs_height",
    "ris_height",
    "ris_spacing",
}


def parse_config_text(text: str, source: str = "<string>") -> tuple[SystemConfig, dict[str, str]]:
    """Parse key/value text into a :class:`SystemConfig`.

    Keys that are not system fields are returned untouched in the second
    element so other consumers (training, bench) can read their own keys
    from the same file.
    """
    kwargs: dict[str, Any] = {}
    rest: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key == "p_max_dbm":
                kwargs["p_max"] = dbm_to_watt(float(value))
            elif key == "noise_power_dbm":
                kwargs["noise_power"] = dbm_to_watt(float(value))
            elif key in ("user_region_t", "user_region_r"):
                parts = tuple(float(v) for v in value.split(","))
                if len(parts) != 4:
                    raise ValueError("expected four comma-separated numbers")
                kwargs[key] = parts
            else:
                rest[key] = value
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return SystemConfig(**kwargs), rest


def load_config(path: str | Path) -> tuple[SystemConfig, dict[str, str]]:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))
