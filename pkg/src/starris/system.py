"""STAR-RIS coefficients, precoders, SINR/sum rate and feasibility checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class StarRisState:
    """Per-element phases and amplitudes, each array of shape (L, M).

    Amplitudes are the quantities that multiply the incident field (sqrt of
    the energy-split coefficient); energy conservation is
    ``amp_t**2 + amp_r**2 <= 1``.
    """

    theta_t: np.ndarray
    theta_r: np.ndarray
    amp_t: np.ndarray
    amp_r: np.ndarray

    @classmethod
    def uniform_random(cls, n_ris: int, m: int, rng: np.random.Generator) -> "StarRisState":
        theta = rng.uniform(0, TWO_PI, size=(2, n_ris, m))
        amp = np.full((n_ris, m), 1 / np.sqrt(2))
        return cls(theta[0], theta[1], amp, amp.copy())

    @classmethod
    def from_coefficients(cls, s_t, s_r, shape) -> "StarRisState":
        """Build from complex coefficients; magnitudes are clipped to [0, 1]."""
        s_t = np.asarray(s_t).reshape(shape)
        s_r = np.asarray(s_r).reshape(shape)
        return cls(
            np.mod(np.angle(s_t), TWO_PI),
            np.mod(np.angle(s_r), TWO_PI),
            np.clip(np.abs(s_t), 0, 1),
            np.clip(np.abs(s_r), 0, 1),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta_t.shape

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (L*M,) complex coefficients for the T and R regions."""
        phi_t = self.amp_t * np.exp(1j * self.theta_t)
        phi_r = self.amp_r * np.exp(1j * self.theta_r)
        return phi_t.reshape(-1), phi_r.reshape(-1)

    def with_phases(self, theta_t, theta_r) -> "StarRisState":
        shape = self.shape
        return StarRisState(
            np.mod(np.asarray(theta_t).reshape(shape), TWO_PI),
            np.mod(np.asarray(theta_r).reshape(shape), TWO_PI),
            self.amp_t,
            self.amp_r,
        )

    def with_amplitudes(self, amp_t, amp_r) -> "StarRisState":
        shape = self.shape
        return StarRisState(
            self.theta_t, self.theta_r, np.asarray(amp_t).reshape(shape), np.asarray(amp_r).reshape(shape)
        )

    def permute_elements(self, perm) -> "StarRisState":
        """Relabel elements on the flattened axis (result is a single-panel view)."""
        def flat(a):
            return np.asarray(a).reshape(1, -1)[:, perm]

        return StarRisState(flat(self.theta_t), flat(self.theta_r), flat(self.amp_t), flat(self.amp_r))


@dataclass(frozen=True)
class BeamformingMatrix:
    """Precoder with one column per user, shape (N_t, K)."""

    w: np.ndarray

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2))


@dataclass(frozen=True)
class SinrReport:
    sinr: np.ndarray
    rates: np.ndarray
    sum_rate: float

    @property
    def min_sinr(self) -> float:
        return float(self.sinr.min())

    def csv_row(self) -> list[float]:
        return [self.sum_rate, *self.sinr.tolist(), *self.rates.tolist()]

    def write_csv(self, fh, sample_id=0) -> None:
        csv.writer(fh).writerow([sample_id, *self.csv_row()])


def _as_w(w) -> np.ndarray:
    return w.w if isinstance(w, BeamformingMatrix) else np.asarray(w)


def _check_shapes(chan: ChannelRealization, ris: StarRisState, w: np.ndarray) -> None:
    s, k, n_tx = chan.h_equiv.shape
    if ris.theta_t.size != s:
        raise ValueError(f"element axis mismatch: channel has {s} elements, STAR-RIS state has {ris.theta_t.size}")
    if w.shape[0] != n_tx:
        raise ValueError(f"antenna axis mismatch: channel has {n_tx} antennas, precoder has {w.shape[0]}")
    if w.ndim != 2:
        raise ValueError(f"precoder must be 2-D (N_t, K), got shape {w.shape}")


def gain_matrix(chan: ChannelRealization, ris: StarRisState, w) -> np.ndarray:
    """All effective gains g[k, j] = sum_s phi_s^{chi(k)} h_equiv[s, k] . w_j."""
    w = _as_w(w)
    _check_shapes(chan, ris, w)
    if w.shape[1] != chan.n_users:
        raise ValueError(f"user axis mismatch: channel has {chan.n_users} users, precoder has {w.shape[1]} columns")
    phi_t, phi_r = ris.coefficients()
    phi = np.where(chan.is_t_user[None, :], phi_t[:, None], phi_r[:, None])  # (S, K)
    eff = np.einsum("sk,skn->kn", phi, chan.h_equiv)  # effective rows g_k^H
    return eff @ w


def effective_gain(chan: ChannelRealization, ris: StarRisState, k: int, j: int, w) -> complex:
    """Gain of precoder column ``j`` at user ``k`` through all STAR-RIS elements."""
    w = _as_w(w)
    _check_shapes(chan, ris, w)
    if not 0 <= k < chan.n_users:
        raise ValueError(f"user axis: index {k} out of range for {chan.n_users} users")
    if not 0 <= j < w.shape[1]:
        raise ValueError(f"precoder axis: column {j} out of range for {w.shape[1]} columns")
    phi_t, phi_r = ris.coefficients()
    phi = phi_t if chan.is_t_user[k] else phi_r
    return complex(np.sum(phi * (chan.h_equiv[:, k, :] @ w[:, j])))


def sinr_from_gains(gains: np.ndarray, noise_power: float) -> np.ndarray:
    power = np.abs(gains) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return signal / (interference + noise_power)


def report_from_sinr(gamma: np.ndarray) -> SinrReport:
    rates = np.log2(1 + gamma)
    return SinrReport(gamma, rates, float(rates.sum()))


def sinr(chan: ChannelRealization, ris: StarRisState, w, noise_power: float) -> SinrReport:
    return report_from_sinr(sinr_from_gains(gain_matrix(chan, ris, w), noise_power))


def sum_rate(chan, ris, w, noise_power) -> float:
    return sinr(chan, ris, w, noise_power).sum_rate


def project_power(w, p_max: float) -> BeamformingMatrix:
    """Scale ``w`` onto the sphere ``||w||_F^2 = p_max``."""
    w = _as_w(w)
    norm = np.linalg.norm(w)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("cannot normalise an all-zero (or non-finite) precoder")
    return BeamformingMatrix(np.sqrt(p_max) * w / norm)


def random_precoder(n_tx: int, n_users: int, p_max: float, rng: np.random.Generator) -> BeamformingMatrix:
    w = (rng.standard_normal((n_tx, n_users)) + 1j * rng.standard_normal((n_tx, n_users))) / np.sqrt(2)
    return project_power(w, p_max)


@dataclass(frozen=True)
class FeasibilityReport:
    power: float
    energy: float
    amplitude: float
    phase: float

    def as_array(self) -> np.ndarray:
        return np.array([self.power, self.energy, self.amplitude, self.phase])

    def feasible(self, tol: float = 1e-6) -> bool:
        return bool(np.all(self.as_array() <= tol))


def check_feasibility(ris: StarRisState, w, p_max: float, tol: float = 1e-6) -> FeasibilityReport:
    """Per-constraint maximum violation; entries at or below ``tol`` count as zero."""
    w = _as_w(w)
    power = max(0.0, float(np.sum(np.abs(w) ** 2)) - p_max)
    energy = max(0.0, float(np.max(ris.amp_t**2 + ris.amp_r**2)) - 1.0)
    amp = np.concatenate([ris.amp_t.ravel(), ris.amp_r.ravel()])
    amplitude = max(0.0, float(np.max(amp - 1.0)), float(np.max(-amp)))
    theta = np.concatenate([ris.theta_t.ravel(), ris.theta_r.ravel()])
    phase = 0.0 if np.all(np.isfinite(theta)) else float("inf")
    phase = max(phase, float(np.max(np.maximum(theta - TWO_PI, -theta), initial=0.0)))
    vals = [v if v > tol else 0.0 for v in (power, energy, amplitude, phase)]
    return FeasibilityReport(*vals)
