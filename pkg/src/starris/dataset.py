"""Binary channel datasets: a JSON text header followed by fixed-stride records.

Layout::

    STARRIS-DATASET\\n
    <header length in bytes, decimal>\\n
    <JSON header, padded with spaces to a multiple of 16 bytes>
    record 0 | record 1 | ...

Each record is ``g`` (L*M*N_t) then ``h`` (K*L*M), little-endian complex64,
so record ``i`` sits at a fixed offset and can be read without touching
the others.  The equivalent channel is rebuilt on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelRealization, equivalent_channel, sample_channels
from .config import SystemConfig

MAGIC = b"STARRIS-DATASET\n"
SCHEMA_VERSION = 1
RECORD_DTYPE = np.dtype("<c8")


def _record_shapes(cfg: SystemConfig):
    g_shape = (cfg.n_ris, cfg.n_elems_per_ris, cfg.n_tx)
    h_shape = (cfg.n_users, cfg.n_ris, cfg.n_elems_per_ris)
    return g_shape, h_shape


def record_length(cfg: SystemConfig) -> int:
    """Complex entries per record."""
    g_shape, h_shape = _record_shapes(cfg)
    return int(np.prod(g_shape) + np.prod(h_shape))


def _encode_header(cfg: SystemConfig, n_samples: int, seed: int) -> bytes:
    header = {
        "schema_version": SCHEMA_VERSION,
        "n_samples": int(n_samples),
        "seed": int(seed),
        "record_dtype": RECORD_DTYPE.str,
        "record_length": record_length(cfg),
        "config": cfg.to_dict(),
    }
    text = json.dumps(header, sort_keys=True).encode()
    text += b" " * (-len(text) % 16)
    return MAGIC + f"{len(text)}\n".encode() + text


@dataclass
class ChannelDataset:
    """Read-only view over a dataset file (memory-mapped records)."""

    path: Path
    cfg: SystemConfig
    n_samples: int
    seed: int
    records: np.ndarray  # (n_samples, record_length) complex64

    def __len__(self) -> int:
        return self.n_samples

    def links(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Batched ``(g, h)`` as complex128 arrays for the given indices."""
        idx = np.atleast_1d(np.asarray(idx))
        g_shape, h_shape = _record_shapes(self.cfg)
        ng = int(np.prod(g_shape))
        rec = np.asarray(self.records[idx], dtype=np.complex128)
        return rec[:, :ng].reshape(-1, *g_shape), rec[:, ng:].reshape(-1, *h_shape)

    def h_equiv(self, idx) -> np.ndarray:
        """Batched equivalent channels, shape (B, L*M, K, N_t)."""
        g, h = self.links(idx)
        return np.stack([equivalent_channel(gi, hi) for gi, hi in zip(g, h)])

    def __getitem__(self, i: int) -> ChannelRealization:
        if not -self.n_samples <= i < self.n_samples:
            raise IndexError(f"sample {i} out of range for {self.n_samples} samples")
        g, h = self.links([i % self.n_samples])
        return ChannelRealization.from_links(g[0], h[0], self.cfg.n_users_t_region)

    def split(self, val_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic split: the last ``val_fraction`` of samples validate."""
        n_val = int(round(self.n_samples * val_fraction))
        idx = np.arange(self.n_samples)
        return idx[: self.n_samples - n_val], idx[self.n_samples - n_val :]


def write_dataset(path, cfg: SystemConfig, realizations, seed: int | None = None) -> Path:
    """Write realizations (an iterable of ChannelRealization) to ``path``."""
    path = Path(path)
    reals = list(realizations)
    seed = cfg.rng_seed if seed is None else seed
    try:
        with open(path, "wb") as fh:
            fh.write(_encode_header(cfg, len(reals), seed))
            for r in reals:
                fh.write(_pack(cfg, r))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc
    return path


def _pack(cfg: SystemConfig, r: ChannelRealization) -> bytes:
    g_shape, h_shape = _record_shapes(cfg)
    if r.g.shape != g_shape or r.h.shape != h_shape:
        raise ValueError(f"realization shapes {r.g.shape}/{r.h.shape} do not match config {g_shape}/{h_shape}")
    rec = np.concatenate([r.g.ravel(), r.h.ravel()]).astype(RECORD_DTYPE)
    return rec.tobytes()


def generate_dataset(cfg: SystemConfig, n_samples: int, out, start: int = 0) -> ChannelDataset:
    """Sample ``n_samples`` realizations (substreams ``start..start+n-1``) and persist them."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    path = Path(out)
    try:
        with open(path, "wb") as fh:
            fh.write(_encode_header(cfg, n_samples, cfg.rng_seed))
            for i in range(n_samples):
                fh.write(_pack(cfg, sample_channels(cfg, index=start + i)))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc
    return load_dataset(path)


def load_dataset(path) -> ChannelDataset:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise ValueError(f"{path}: not a dataset file (bad magic)")
            hlen = int(fh.readline())
            header = json.loads(fh.read(hlen))
            offset = fh.tell()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    if header["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {header['schema_version']}")
    cfg = SystemConfig.from_dict(header["config"])
    n = header["n_samples"]
    reclen = header["record_length"]
    if reclen != record_length(cfg):
        raise ValueError(f"{path}: record length {reclen} inconsistent with config ({record_length(cfg)})")
    records = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=offset, shape=(n, reclen))
    return ChannelDataset(path, cfg, n, header["seed"], records)
