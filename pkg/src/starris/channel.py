"""Rician channel generation for the BS -> STAR-RIS -> user cascade."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

UPA_ROW_STRIDE = 10  # elements per UPA row; fixed by the index maps i1, i2


def path_loss_db(distance):
    """Distance path loss ``32.6 + 36.7 log10(d)`` in dB (``d`` in metres)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError(f"path loss needs a positive distance, got {distance!r}")
    out = 32.6 + 36.7 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def path_gain(distance):
    """Amplitude factor ``10^(-PL/20)`` applied to a channel link."""
    return 10.0 ** (-np.asarray(path_loss_db(distance)) / 20.0)


def upa_indices(n_elems: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(n_elems)
    return n % UPA_ROW_STRIDE, n // UPA_ROW_STRIDE


def steering_upa(azimuth, elevation, n_elems, elem_spacing, wavelength):
    """UPA response of a STAR-RIS panel (unit-modulus entries)."""
    if n_elems < 1:
        raise ValueError("n_elems must be >= 1")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    i1, i2 = upa_indices(n_elems)
    phase = (2 * np.pi * elem_spacing / wavelength) * (
        i1 * np.sin(azimuth) * np.cos(elevation) + i2 * np.sin(elevation)
    )
    return np.exp(1j * phase)


def steering_ula(aod, n_tx, wavelength=1.0):
    """Half-wavelength ULA response at the BS; independent of ``wavelength``."""
    if n_tx < 1:
        raise ValueError("n_tx must be >= 1")
    spacing = wavelength / 2
    n = np.arange(n_tx)
    return np.exp(1j * 2 * np.pi * spacing * n * np.sin(aod) / wavelength)


@dataclass(frozen=True)
class ChannelRealization:
    """One channel draw.

    ``g[l]`` is the BS -> panel ``l`` matrix G_l (M x N_t).  ``h[k, l]`` holds
    the *row* channel h_kl^H (already conjugated) so that the cascade is
    ``h[k, l] @ diag(phi_l) @ g[l]``.  ``h_equiv[l*M + m, k]`` is the
    per-element cascaded row ``h[k, l, m] * g[l, m]``.
    """

    g: np.ndarray
    h: np.ndarray
    h_equiv: np.ndarray
    n_users_t_region: int
    user_positions: np.ndarray | None = None

    @classmethod
    def from_links(cls, g, h, n_users_t_region, user_positions=None) -> "ChannelRealization":
        g = np.asarray(g)
        h = np.asarray(h)
        return cls(g, h, equivalent_channel(g, h), int(n_users_t_region), user_positions)

    @property
    def n_ris(self) -> int:
        return self.g.shape[0]

    @property
    def n_elems_per_ris(self) -> int:
        return self.g.shape[1]

    @property
    def n_tx(self) -> int:
        return self.g.shape[2]

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    @property
    def n_elems(self) -> int:
        return self.h_equiv.shape[0]

    @property
    def is_t_user(self) -> np.ndarray:
        return np.arange(self.n_users) < self.n_users_t_region

    @property
    def region_of_user(self) -> np.ndarray:
        return np.where(self.is_t_user, "T", "R")

    def permute(self, elem_perm=None, user_perm=None) -> "ChannelRealization":
        """Relabel elements/users: new index ``i`` takes old index ``perm[i]``.

        Element permutations act on the flattened (l, m) axis, so the result
        only carries ``h_equiv`` faithfully; ``g``/``h`` are kept consistent
        by reshaping through a single-panel view when needed.
        """
        h_equiv = self.h_equiv
        g, h = self.g, self.h
        k0 = self.n_users_t_region
        if elem_perm is not None:
            elem_perm = np.asarray(elem_perm)
            h_equiv = h_equiv[elem_perm]
            g = g.reshape(1, -1, self.n_tx)[:, elem_perm]
            h = h.reshape(self.n_users, 1, -1)[:, :, elem_perm]
        if user_perm is not None:
            user_perm = np.asarray(user_perm)
            h_equiv = h_equiv[:, user_perm]
            h = h[user_perm]
        positions = self.user_positions
        if positions is not None and user_perm is not None:
            positions = positions[user_perm]
        return ChannelRealization(g, h, h_equiv, k0, positions)


def equivalent_channel(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Stack per-element cascaded rows: out[l*M+m, k, :] = h[k,l,m] * g[l,m,:]."""
    n_ris, m, n_tx = g.shape
    k = h.shape[0]
    cascade = h[:, :, :, None] * g[None]  # (K, L, M, Nt)
    return np.ascontiguousarray(cascade.reshape(k, n_ris * m, n_tx).transpose(1, 0, 2))


def substream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, index)``; order-independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def ris_positions(cfg: SystemConfig) -> np.ndarray:
    l = np.arange(1, cfg.n_ris + 1)
    return np.stack([cfg.ris_spacing * l, np.zeros(cfg.n_ris), np.full(cfg.n_ris, cfg.ris_height)], axis=1)


def draw_user_positions(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    pos = np.zeros((cfg.n_users, 3))
    for k in range(cfg.n_users):
        x0, x1, y0, y1 = cfg.user_region_t if k < cfg.n_users_t_region else cfg.user_region_r
        pos[k, 0] = rng.uniform(x0, x1)
        pos[k, 1] = rng.uniform(y0, y1)
    return pos


def _angles(vec: np.ndarray) -> tuple[float, float]:
    azimuth = np.arctan2(vec[1], vec[0])
    elevation = np.arctan2(vec[2], np.hypot(vec[0], vec[1]))
    return azimuth, elevation


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def sample_channels(cfg: SystemConfig, rng: np.random.Generator | None = None, index: int = 0) -> ChannelRealization:
    """Draw one realization; with ``rng=None`` the stream is keyed by ``(cfg.rng_seed, index)``."""
    if rng is None:
        rng = substream(cfg.rng_seed, index)
    xi = cfg.rician_factor
    if np.isinf(xi):
        los_w, nlos_w = 1.0, 0.0
    else:
        los_w, nlos_w = np.sqrt(xi / (xi + 1)), np.sqrt(1 / (xi + 1))
    m, n_tx, lam = cfg.n_elems_per_ris, cfg.n_tx, cfg.carrier_wavelength

    users = draw_user_positions(cfg, rng)
    bs = np.array([0.0, 0.0, cfg.bs_height])
    panels = ris_positions(cfg)

    g = np.empty((cfg.n_ris, m, n_tx), dtype=complex)
    h = np.empty((cfg.n_users, cfg.n_ris, m), dtype=complex)
    for l, p in enumerate(panels):
        az, el = _angles(bs - p)
        _, el_bs = _angles(p - bs)
        a_r = steering_upa(az, el, m, cfg.spacing, lam)
        # the BS array response is driven by the elevation of the BS -> panel link
        a_t = steering_ula(el_bs, n_tx, lam)
        g_los = np.outer(a_r, a_t.conj())
        kappa1 = path_gain(np.linalg.norm(p - bs))
        g[l] = kappa1 * (los_w * g_los + nlos_w * _cn(rng, (m, n_tx)))
        for k, u in enumerate(users):
            az_u, el_u = _angles(u - p)
            h_los = steering_upa(az_u, el_u, m, cfg.spacing, lam)
            kappa2 = path_gain(np.linalg.norm(u - p))
            h_col = kappa2 * (los_w * h_los + nlos_w * _cn(rng, m))
            h[k, l] = h_col.conj()
    return ChannelRealization.from_links(g, h, cfg.n_users_t_region, users)


def sample_many(cfg: SystemConfig, n: int, start: int = 0) -> list[ChannelRealization]:
    return [sample_channels(cfg, index=start + i) for i in range(n)]
