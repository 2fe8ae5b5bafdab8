"""Slack-augmented convex surrogates shared by the phase, amplitude and precoder blocks.

Every block is written over a real variable vector ``z`` such that each
effective gain is linear in it: ``y[k, i] = A[k, i] @ z`` (``A`` complex).
Gains are noise-normalised, so the noise power inside a subproblem is 1.

The SINR constraint of user k is split with slacks ``eta`` (SINR) and
``alpha`` (interference-plus-noise):

* interference:  sum_{i != k} |y_ki|^2 + 1 - alpha_k <= 0
* signal:        alpha_k * eta_k - |y_kk|^2 <= 0   (non-convex, g)

``g`` is replaced by its convex upper bound ``g_hat`` built at the
linearization point: the concave ``-|y_kk|^2`` is linearised and
``alpha*eta`` is bounded by the quarter-square identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..channel import ChannelRealization
from ..system import StarRisState

LN2 = np.log(2.0)


@dataclass(frozen=True)
class ScaSubproblem:
    """One SCA surrogate: data, constraint structure and linearization point.

    ``ball_groups`` is an (G, p) index array; each row is a group with
    ``sum z[group]**2 <= 1``.  ``nonneg`` marks coordinates with ``z >= 0``.
    ``penalty`` is the weight on ``sum(|s|^2 - 1)`` over ``penalty_pairs``
    (phase block only).  ``t_vectors`` keeps the un-normalised per-user,
    per-precoder cascade vectors of the phase block for inspection.
    """

    kind: str
    A: np.ndarray
    ball_groups: np.ndarray
    nonneg: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    penalty: float = 0.0
    noise: float = 1.0
    t_vectors: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_users(self) -> int:
        return self.A.shape[0]

    @property
    def n_vars(self) -> int:
        return self.A.shape[2]

    @property
    def n_penalized(self) -> int:
        return self.n_vars // 2 if self.penalty else 0

    def gains(self, z=None) -> np.ndarray:
        return self.A @ (self.z if z is None else z)

    def interference(self, z=None) -> np.ndarray:
        p = np.abs(self.gains(z)) ** 2
        return p.sum(axis=1) - np.diag(p) + self.noise

    def sinr(self, z=None) -> np.ndarray:
        p = np.abs(self.gains(z)) ** 2
        signal = np.diag(p)
        return signal / (p.sum(axis=1) - signal + self.noise)

    def relinearize(self, z, eta, alpha) -> "ScaSubproblem":
        return replace(self, z=np.asarray(z, float), eta=np.asarray(eta, float), alpha=np.asarray(alpha, float))

    def tight(self, z=None) -> "ScaSubproblem":
        """Linearize at ``z`` with slacks equal to the true SINR / interference."""
        z = self.z if z is None else np.asarray(z, float)
        return self.relinearize(z, self.sinr(z), self.interference(z))

    # -- objectives --------------------------------------------------------

    def penalized_objective(self, z, eta) -> float:
        """Slack sum rate plus ``C * sum(|s|^2 - 1)`` (the quantity SCA increases)."""
        val = float(np.sum(np.log1p(eta)) / LN2)
        if self.penalty:
            val += self.penalty * (float(z @ z) - self.n_penalized)
        return val

    def surrogate_objective(self, z, eta) -> float:
        val = float(np.sum(np.log1p(eta)) / LN2)
        if self.penalty:
            zn = self.z
            val += self.penalty * (float(zn @ zn) - self.n_penalized) + 2 * self.penalty * float(zn @ (z - zn))
        return val

    def linear_objective(self) -> np.ndarray:
        """Coefficient of ``z`` in the surrogate objective."""
        return 2 * self.penalty * self.z if self.penalty else np.zeros(self.n_vars)


# -- surrogate evaluation ------------------------------------------------------


@dataclass
class SurrogateEval:
    objective: float
    penalized_objective: float
    g: np.ndarray
    g_hat: np.ndarray
    interference: np.ndarray
    grad_g: np.ndarray
    grad_g_hat: np.ndarray
    penalty_linear: float


def g_true(sub: ScaSubproblem, z, eta, alpha) -> np.ndarray:
    y = np.diagonal(sub.gains(z))
    return -np.abs(y) ** 2 + alpha * eta


def g_hat(sub: ScaSubproblem, z, eta, alpha) -> np.ndarray:
    y0 = np.diagonal(sub.gains())
    y = np.diagonal(sub.gains(z))
    d = sub.alpha - sub.eta
    lin = -2 * np.real(np.conj(y0) * (y - y0)) - np.abs(y0) ** 2
    quad = 0.25 * ((alpha + eta) ** 2 - 2 * d * (alpha - eta) + d**2)
    return lin + quad


def _grad_diag_gain_sq(sub: ScaSubproblem, z) -> np.ndarray:
    """d|y_kk|^2/dz for every k, shape (K, n)."""
    akk = np.stack([sub.A[k, k] for k in range(sub.n_users)])
    y = akk @ z
    return 2 * (y.real[:, None] * akk.real + y.imag[:, None] * akk.imag)


def taylor_surrogate(sub: ScaSubproblem, z, eta, alpha) -> SurrogateEval:
    """Evaluate the surrogate pieces at a candidate point.

    Gradients are with respect to the stacked vector ``(z, eta_k, alpha_k)``
    and are returned per user as an array of shape (K, n + 2).
    """
    z = np.asarray(z, float)
    eta = np.asarray(eta, float)
    alpha = np.asarray(alpha, float)
    k = sub.n_users
    gz_true = -_grad_diag_gain_sq(sub, z)
    gz_hat = -_grad_diag_gain_sq(sub, sub.z)
    d = sub.alpha - sub.eta
    grad_g = np.concatenate([gz_true, alpha[:, None], eta[:, None]], axis=1)
    grad_hat = np.concatenate(
        [gz_hat, (0.5 * (alpha + eta) + 0.5 * d)[:, None], (0.5 * (alpha + eta) - 0.5 * d)[:, None]], axis=1
    )
    pen = 2 * sub.penalty * float(sub.z @ (z - sub.z)) if sub.penalty else 0.0
    del k
    return SurrogateEval(
        objective=sub.surrogate_objective(z, eta),
        penalized_objective=sub.penalized_objective(z, eta),
        g=g_true(sub, z, eta, alpha),
        g_hat=g_hat(sub, z, eta, alpha),
        interference=sub.interference(z) - alpha,
        grad_g=grad_g,
        grad_g_hat=grad_hat,
        penalty_linear=pen,
    )


# -- block builders ------------------------------------------------------------


def _region_select(chan: ChannelRealization, t_vals, r_vals):
    return np.where(chan.is_t_user[:, None], t_vals[None, :], r_vals[None, :])


def _cascade(chan: ChannelRealization, w: np.ndarray) -> np.ndarray:
    """c[k, i, s] = h_equiv[s, k] . w_i, shape (K, K, S)."""
    return np.einsum("skn,ni->kis", chan.h_equiv, w)


def _pair_groups(n: int) -> np.ndarray:
    return np.stack([np.arange(n), np.arange(n, 2 * n)], axis=1)


def phase_variables(ris: StarRisState) -> np.ndarray:
    """z = [Re s_T, Re s_R, Im s_T, Im s_R] with s the unit-modulus phasors."""
    s = np.concatenate([np.exp(1j * ris.theta_t.ravel()), np.exp(1j * ris.theta_r.ravel())])
    return np.concatenate([s.real, s.imag])


def phase_from_variables(z: np.ndarray, n_elems: int) -> tuple[np.ndarray, np.ndarray]:
    s = z[: 2 * n_elems] + 1j * z[2 * n_elems :]
    return s[:n_elems], s[n_elems:]


def build_phase_subproblem(
    chan: ChannelRealization, ris: StarRisState, w, noise_power: float, penalty: float = 1e4, z=None
) -> ScaSubproblem:
    """Phase block: variables are the complex coefficients ``s`` of both regions."""
    w = getattr(w, "w", w)
    if w.shape != (chan.n_tx, chan.n_users):
        raise ValueError(f"precoder shape {w.shape} does not match (N_t, K) = {(chan.n_tx, chan.n_users)}")
    if ris.theta_t.size != chan.n_elems:
        raise ValueError(f"element axis mismatch: {ris.theta_t.size} vs {chan.n_elems}")
    n = chan.n_elems
    cas = _cascade(chan, w)  # (K, K, S)
    amp = _region_select(chan, ris.amp_t.ravel(), ris.amp_r.ravel())  # (K, S)
    a = cas * amp[:, None, :]
    t_vectors = np.conj(a)
    a = a / np.sqrt(noise_power)
    coef = np.zeros((chan.n_users, chan.n_users, 2 * n), dtype=complex)
    t_mask = chan.is_t_user
    coef[t_mask, :, :n] = a[t_mask]
    coef[~t_mask, :, n:] = a[~t_mask]
    A = np.concatenate([coef, 1j * coef], axis=2)
    z = phase_variables(ris) if z is None else np.asarray(z, float)
    sub = ScaSubproblem(
        kind="phase",
        A=A,
        ball_groups=_pair_groups(2 * n),
        nonneg=np.zeros(4 * n, dtype=bool),
        z=z,
        eta=np.zeros(chan.n_users),
        alpha=np.ones(chan.n_users),
        penalty=float(penalty),
        t_vectors=t_vectors,
    )
    return sub.tight()


def amplitude_variables(ris: StarRisState) -> np.ndarray:
    return np.concatenate([ris.amp_t.ravel(), ris.amp_r.ravel()]).astype(float)


def build_amplitude_subproblem(chan: ChannelRealization, ris: StarRisState, w, noise_power: float) -> ScaSubproblem:
    """Amplitude block: variables ``[a_t, a_r]`` with ``a >= 0`` and ``a_t^2 + a_r^2 <= 1``."""
    w = getattr(w, "w", w)
    n = chan.n_elems
    cas = _cascade(chan, w) / np.sqrt(noise_power)
    ph = _region_select(chan, np.exp(1j * ris.theta_t.ravel()), np.exp(1j * ris.theta_r.ravel()))
    c = cas * ph[:, None, :]
    A = np.zeros((chan.n_users, chan.n_users, 2 * n), dtype=complex)
    t_mask = chan.is_t_user
    A[t_mask, :, :n] = c[t_mask]
    A[~t_mask, :, n:] = c[~t_mask]
    sub = ScaSubproblem(
        kind="amplitude",
        A=A,
        ball_groups=_pair_groups(n),
        nonneg=np.ones(2 * n, dtype=bool),
        z=amplitude_variables(ris),
        eta=np.zeros(chan.n_users),
        alpha=np.ones(chan.n_users),
    )
    return sub.tight()


def precoder_variables(w: np.ndarray, p_max: float) -> np.ndarray:
    v = w.T.reshape(-1) / np.sqrt(p_max)
    return np.concatenate([v.real, v.imag])


def precoder_from_variables(z: np.ndarray, n_tx: int, n_users: int, p_max: float) -> np.ndarray:
    half = z.size // 2
    v = (z[:half] + 1j * z[half:]) * np.sqrt(p_max)
    return v.reshape(n_users, n_tx).T


def effective_rows(chan: ChannelRealization, ris: StarRisState) -> np.ndarray:
    """g_k^H = sum_l h_kl^H Phi_l^chi G_l for every user, shape (K, N_t)."""
    phi_t, phi_r = ris.coefficients()
    phi = np.where(chan.is_t_user[None, :], phi_t[:, None], phi_r[:, None])
    return np.einsum("sk,skn->kn", phi, chan.h_equiv)


def build_precoder_subproblem(
    chan: ChannelRealization, ris: StarRisState, w, noise_power: float, p_max: float
) -> ScaSubproblem:
    """Precoder block: variables are ``w / sqrt(P_max)`` inside the unit ball."""
    w = getattr(w, "w", w)
    k, n_tx = chan.n_users, chan.n_tx
    rows = effective_rows(chan, ris) * np.sqrt(p_max / noise_power)
    coef = np.zeros((k, k, k * n_tx), dtype=complex)
    for i in range(k):
        coef[:, i, i * n_tx : (i + 1) * n_tx] = rows
    A = np.concatenate([coef, 1j * coef], axis=2)
    nvar = 2 * k * n_tx
    sub = ScaSubproblem(
        kind="precoder",
        A=A,
        ball_groups=np.arange(nvar)[None, :],
        nonneg=np.zeros(nvar, dtype=bool),
        z=precoder_variables(w, p_max),
        eta=np.zeros(k),
        alpha=np.ones(k),
    )
    return sub.tight()
