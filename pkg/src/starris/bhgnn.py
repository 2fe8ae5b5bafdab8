"""Beamforming heterogeneous GNN: dense operator stack, output mapping and parameter files.

Layer widths follow the table of fully connected networks for a given
antenna count N_t.  The second and third rounds use a fixed 574-wide
input; concatenations shorter than that are zero-padded and longer ones
truncated (``width_mode="table"``).  ``width_mode="derived"`` instead sizes
every layer from its actual concatenation.

Output mapping (all in float64):

* W: two halves of the 2 N_t head output -> real/imag, then scaled to
  ``||W||_F^2 = P_max``
* theta = 2 pi * sigmoid output (one channel per region), wrapped to [0, 2 pi)
* a_t = sqrt(beta), a_r = sqrt(1 - beta) with beta the sigmoid split
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .channel import ChannelRealization
from .graph import EdgeFeatureTensor, HeteroGraphState, OperatorBundle, canonical_sum, initial_state, run_hgmp
from .system import BeamformingMatrix, StarRisState

TABLE_WIDTH = 574
HIDDEN = 256
HEAD_HIDDEN = 64
PARAM_MAGIC = b"BHGNN-PARAMS\n"
MIN_PRECODER_NORM = 1e-12
NARROW_OUT = 4  # output widths at or below this use the row-independent product


@dataclass(frozen=True)
class DenseLayerSpec:
    in_dim: int
    out_dim: int
    activation: str  # relu | sigmoid | none

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ("relu", "sigmoid", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


def layer_specs(n_tx: int, n_rounds: int = 3, width_mode: str = "table") -> dict[str, list[DenseLayerSpec]]:
    """Dense-layer chain of every named network."""
    if width_mode not in ("table", "derived"):
        raise ValueError(f"width_mode must be 'table' or 'derived', got {width_mode!r}")
    f = 2 * n_tx
    first = 2 + f  # b0 (1) + u0 (1) + edge (2 N_t)
    if width_mode == "table" and 2 * HIDDEN + f > TABLE_WIDTH:
        raise ValueError(f"table widths hold at most N_t = {(TABLE_WIDTH - 2 * HIDDEN) // 2} antennas, got {n_tx}")
    specs: dict[str, list[DenseLayerSpec]] = {}
    for t in range(1, n_rounds + 1):
        if t == 1:
            msg = first
            u_in = msg if width_mode == "table" else 1 + f + msg
            b_in = msg if width_mode == "table" else 1 + 3 + msg
            edge_in = first
        elif width_mode == "table":
            msg = edge_in = u_in = b_in = TABLE_WIDTH
        else:
            edge_in, msg = 2 * HIDDEN + f, HIDDEN
            u_in, b_in = HIDDEN + f + msg, HIDDEN + 3 + msg
        specs[f"phi{t}"] = [DenseLayerSpec(edge_in, msg, "relu")]
        specs[f"psi{t}"] = [DenseLayerSpec(edge_in, msg, "relu")]
        specs[f"U{t}"] = [DenseLayerSpec(u_in, HIDDEN, "relu")]
        specs[f"B{t}"] = [DenseLayerSpec(b_in, HIDDEN, "relu")]
    specs["W"] = [DenseLayerSpec(HIDDEN, HIDDEN, "relu"), DenseLayerSpec(HIDDEN, f, "none")]
    specs["C"] = [DenseLayerSpec(HIDDEN, HEAD_HIDDEN, "relu"), DenseLayerSpec(HEAD_HIDDEN, 2, "sigmoid")]
    specs["D"] = [DenseLayerSpec(HIDDEN, HEAD_HIDDEN, "relu"), DenseLayerSpec(HEAD_HIDDEN, 1, "sigmoid")]
    return specs


class FlopCounter:
    """Multiply-add count (2 flops each) of every dense layer call."""

    def __init__(self):
        self.flops = 0
        self.enabled = False

    def add(self, rows: int, spec: DenseLayerSpec):
        if self.enabled:
            self.flops += 2 * rows * spec.in_dim * spec.out_dim + rows * spec.out_dim


class Dense(nn.Module):
    """Linear layer + activation.  A sigmoid output is left as logits: the
    output mapping applies it in float64."""

    def __init__(self, spec: DenseLayerSpec, counter: FlopCounter):
        super().__init__()
        self.spec = spec
        self.linear = nn.Linear(spec.in_dim, spec.out_dim)
        self.counter = counter

    def pre_activation(self, x):
        self.counter.add(x.numel() // x.shape[-1], self.spec)
        if self.spec.out_dim <= NARROW_OUT:
            return _rowwise_linear(x, self.linear.weight, self.linear.bias)
        return self.linear(x)

    def activate(self, y):
        return torch.relu(y) if self.spec.activation == "relu" else y

    def forward(self, x):
        return self.activate(self.pre_activation(x))


def _rowwise_linear(x, weight, bias):
    """``x @ weight.T + bias`` from elementwise products and a fixed pairwise reduction.

    Matrix-vector kernels picked for very narrow outputs round differently
    depending on where a row sits in the batch; this form does not.
    """
    return _pairwise_last(x.unsqueeze(-2) * weight) + bias


def _pairwise_last(s: torch.Tensor) -> torch.Tensor:
    """Sum over the last dimension with a fixed pairwise tree."""
    while s.shape[-1] > 1:
        pairs = s.shape[-1] // 2
        head = s[..., 0 : 2 * pairs : 2] + s[..., 1 : 2 * pairs : 2]
        s = torch.cat([head, s[..., 2 * pairs :]], -1) if s.shape[-1] % 2 else head
    return s[..., 0]


def rms_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Scale every vertex feature vector (last dimension) to unit RMS."""
    ms = _pairwise_last(x * x) / x.shape[-1]
    return x / torch.sqrt(ms + eps)[..., None]


def _fit(x: torch.Tensor, width: int) -> torch.Tensor:
    """Zero-pad or truncate the last dimension to ``width``."""
    n = x.shape[-1]
    if n == width:
        return x
    if n > width:
        return x[..., :width]
    return torch.nn.functional.pad(x, (0, width - n))


@dataclass
class BhgnnOutput:
    w: torch.Tensor  # (B, N_t, K) complex128
    theta_t: torch.Tensor  # (B, S) float64
    theta_r: torch.Tensor
    amp_t: torch.Tensor
    amp_r: torch.Tensor
    sinr: torch.Tensor  # (B, K)
    sum_rate: torch.Tensor  # (B,)
    state: HeteroGraphState

    def to_numpy(self, i: int = 0, shape=None):
        """(StarRisState, BeamformingMatrix) of sample ``i``; ``shape`` = (L, M)."""
        shape = shape or (1, self.theta_t.shape[1])
        t = lambda a: a[i].detach().cpu().numpy().reshape(shape)  # noqa: E731
        ris = StarRisState(t(self.theta_t), t(self.theta_r), t(self.amp_t), t(self.amp_r))
        return ris, BeamformingMatrix(self.w[i].detach().cpu().numpy())


def _as_region(is_t_user, batch: int, n_users: int) -> torch.Tensor:
    if isinstance(is_t_user, (int, np.integer)):
        mask = torch.arange(n_users) < int(is_t_user)
        return mask.expand(batch, n_users)
    mask = torch.as_tensor(np.asarray(is_t_user), dtype=torch.bool)
    return mask.expand(batch, n_users) if mask.ndim == 1 else mask


def rate_from_outputs(h_equiv, is_t, w, theta_t, theta_r, amp_t, amp_r, noise_power):
    """Differentiable SINR and sum rate; ``h_equiv`` is (B, S, K, N_t) complex128."""
    phi_t = torch.polar(amp_t, theta_t)
    phi_r = torch.polar(amp_r, theta_r)
    phi = torch.where(is_t[:, None, :], phi_t[:, :, None], phi_r[:, :, None])  # (B, S, K)
    eff = torch.einsum("bsk,bskn->bkn", phi, h_equiv)
    gains = eff @ w  # (B, K, K)
    power = gains.real**2 + gains.imag**2
    signal = torch.diagonal(power, dim1=1, dim2=2)
    sinr = signal / (power.sum(-1) - signal + noise_power)
    return sinr, torch.log2(1 + sinr).sum(-1)


class BHGNN(nn.Module):
    """Dense networks for every round plus the shared W/C/D heads."""

    def __init__(
        self,
        n_tx: int,
        n_rounds: int = 3,
        width_mode: str = "table",
        feature_scale: float = 1.0,
        region_feature: bool = True,
        vertex_norm: bool = True,
        seed: int = 0,
        dtype=torch.float32,
    ):
        super().__init__()
        self.n_tx = n_tx
        self.n_rounds = n_rounds
        self.width_mode = width_mode
        self.region_feature = region_feature
        self.vertex_norm = vertex_norm
        self.feature_scale = float(feature_scale)
        self.check_finite = True
        self.counter = FlopCounter()
        self.specs = layer_specs(n_tx, n_rounds, width_mode)
        self.nets = nn.ModuleDict(
            {name: nn.Sequential(*[Dense(s, self.counter) for s in chain]) for name, chain in self.specs.items()}
        )
        self._init_weights(seed)
        self.to(dtype)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def _init_weights(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for name, seq in self.nets.items():
            for layer in seq:
                lin = layer.linear
                if layer.spec.activation == "relu":
                    nn.init.kaiming_uniform_(lin.weight, nonlinearity="relu", generator=gen)
                else:
                    nn.init.xavier_uniform_(lin.weight, generator=gen)
                nn.init.zeros_(lin.bias)

    def manifest(self) -> dict:
        return {
            "format": "bhgnn-params",
            "version": 1,
            "n_tx": self.n_tx,
            "n_rounds": self.n_rounds,
            "width_mode": self.width_mode,
            "region_feature": self.region_feature,
            "vertex_norm": self.vertex_norm,
            "feature_scale": self.feature_scale,
            "dtype": str(self.dtype).replace("torch.", ""),
            "tensors": [[k, list(v.shape)] for k, v in self.state_dict().items()],
        }

    # -- operators -----------------------------------------------------------

    def _call(self, name: str, x: torch.Tensor, t: int | None = None) -> torch.Tensor:
        y = self.nets[name](x)
        if self.check_finite and not torch.isfinite(y).all():
            where = f"network {name}" + (f" in round {t}" if t is not None else "")
            raise FloatingPointError(f"non-finite activation in {where}")
        return y

    def _edge_in(self, t, first, second, e):
        x = torch.cat([first, second, e], dim=-1)
        return _fit(x, self.specs[f"phi{t}"][0].in_dim)

    def operator_bundle(self, logits: dict | None = None) -> OperatorBundle:
        table = self.width_mode == "table"
        logits = {} if logits is None else logits
        # sum pooling of ReLU messages compounds the scale every round; without
        # this the sigmoid heads saturate early in training
        norm = rms_normalize if self.vertex_norm else (lambda x: x)

        def phi(t, b, u, e):
            return self._call(f"phi{t}", self._edge_in(t, b, u, e), t)

        def psi(t, u, b, e):
            return self._call(f"psi{t}", self._edge_in(t, u, b, e), t)

        def U(t, u, w, c):
            x = c if (table and t == 1) else _fit(torch.cat([u, w, c], -1), self.specs[f"U{t}"][0].in_dim)
            return norm(self._call(f"U{t}", x, t))

        def B(t, b, theta, beta, d):
            x = d if (table and t == 1) else _fit(torch.cat([b, theta, beta, d], -1), self.specs[f"B{t}"][0].in_dim)
            return norm(self._call(f"B{t}", x, t))

        # predictions fed back to the next round: raw precoder head, sigmoid phase/split
        def W(u):
            return self._call("W", u)

        # the latest logits are kept so the final mapping can apply the sigmoid in float64
        def C(b):
            logits["C"] = self._call("C", b)
            return torch.sigmoid(logits["C"])

        def D(b):
            logits["D"] = self._call("D", b)
            return torch.sigmoid(logits["D"])

        return OperatorBundle(phi, psi, U, B, W, C, D)

    # -- forward -------------------------------------------------------------

    def edge_tensor(self, h_equiv: torch.Tensor) -> torch.Tensor:
        e = torch.cat([h_equiv.real, h_equiv.imag], dim=-1) / self.feature_scale
        return e.to(self.dtype)

    def forward(self, h_equiv, is_t_user, p_max: float, noise_power: float) -> BhgnnOutput:
        """Run the rounds, map outputs to (W, theta, a) and evaluate the sum rate.

        ``h_equiv``: (B, S, K, N_t) complex (or one (S, K, N_t) sample);
        ``is_t_user``: K0 (int), a (K,) mask or a (B, K) mask.
        """
        h = torch.as_tensor(np.asarray(h_equiv) if not torch.is_tensor(h_equiv) else h_equiv).to(torch.complex128)
        if h.ndim == 3:
            h = h[None]
        bsz, s, k, n = h.shape
        if n != self.n_tx:
            raise ValueError(f"antenna axis mismatch: model built for N_t={self.n_tx}, channel has {n}")
        is_t = _as_region(is_t_user, bsz, k)
        tag = (2.0 * is_t.to(self.dtype) - 1.0) if self.region_feature else None
        state = initial_state(bsz, s, k, n, tag, self.dtype)
        logits: dict = {}
        state = run_hgmp(self.edge_tensor(h), self.n_rounds, self.operator_bundle(logits), state)

        # final mapping in float64
        raw = state.w.to(torch.float64)
        w = torch.complex(raw[..., :n], raw[..., n:]).transpose(1, 2)  # (B, N_t, K)
        sq = (w.real**2 + w.imag**2).reshape(bsz, -1)
        norm = torch.sqrt(canonical_sum(sq, dim=1))
        if torch.any(norm < MIN_PRECODER_NORM):
            raise FloatingPointError("precoder head output is (numerically) zero; power normalisation undefined")
        w = w * (math.sqrt(p_max) / norm)[:, None, None]
        c_logit = logits["C"].to(torch.float64)
        d_logit = logits["D"].to(torch.float64)[..., 0]
        two_pi = 2 * math.pi
        theta = torch.remainder(two_pi * torch.sigmoid(c_logit), two_pi)
        # sqrt(sigmoid(x)) via logsigmoid keeps the gradient finite when the split saturates
        amp_t = torch.exp(0.5 * F.logsigmoid(d_logit))
        amp_r = torch.exp(0.5 * F.logsigmoid(-d_logit))
        sinr, rate = rate_from_outputs(h, is_t, w, theta[..., 0], theta[..., 1], amp_t, amp_r, noise_power)
        return BhgnnOutput(w, theta[..., 0], theta[..., 1], amp_t, amp_r, sinr, rate, state)

    def predict(self, chan: ChannelRealization, p_max: float, noise_power: float):
        """(StarRisState, BeamformingMatrix) for one realization."""
        with torch.no_grad():
            out = self.forward(chan.h_equiv, chan.is_t_user, p_max, noise_power)
        return out.to_numpy(0, (chan.n_ris, chan.n_elems_per_ris))

    def count_flops(self, h_equiv, is_t_user, p_max=1.0, noise_power=1.0) -> int:
        self.counter.flops, self.counter.enabled = 0, True
        try:
            with torch.no_grad():
                self.forward(h_equiv, is_t_user, p_max, noise_power)
        finally:
            self.counter.enabled = False
        return self.counter.flops


def feature_scale_from(h_equiv: np.ndarray) -> float:
    """RMS of the real/imag edge components, used to normalise edge features."""
    e = EdgeFeatureTensor.from_channel(np.asarray(h_equiv)).e
    return float(np.sqrt(np.mean(e**2)))


# -- parameter files -----------------------------------------------------------


def save_params(model: BHGNN, path) -> Path:
    """Plain-text JSON manifest header, then raw little-endian tensors in manifest order."""
    path = Path(path)
    manifest = json.dumps(model.manifest(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(f"{len(manifest)}\n".encode())
        fh.write(manifest)
        for _, tensor in model.state_dict().items():
            arr = tensor.detach().cpu().numpy()
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return path


def read_manifest(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        if fh.read(len(PARAM_MAGIC)) != PARAM_MAGIC:
            raise ValueError(f"{path}: not a parameter file")
        n = int(fh.readline())
        manifest = json.loads(fh.read(n))
        return manifest, fh.tell()


def load_params(path, expect: BHGNN | None = None, n_tx: int | None = None) -> BHGNN:
    """Rebuild a model from ``path``.

    With ``expect`` (a model) or ``n_tx`` given, a manifest that does not
    match is refused and both manifests are shown.
    """
    manifest, offset = read_manifest(path)
    want = expect.manifest() if expect is not None else None
    if n_tx is not None and manifest["n_tx"] != n_tx:
        want = want or {"n_tx": n_tx}
    if want is not None and any(manifest.get(k) != v for k, v in want.items() if k != "feature_scale"):
        raise ValueError(
            "parameter manifest mismatch\n  file:     " + json.dumps(manifest, sort_keys=True)
            + "\n  expected: " + json.dumps(want, sort_keys=True)
        )
    dtype = getattr(torch, manifest["dtype"])
    model = BHGNN(
        manifest["n_tx"],
        manifest["n_rounds"],
        manifest["width_mode"],
        manifest["feature_scale"],
        manifest["region_feature"],
        manifest.get("vertex_norm", False),
        dtype=dtype,
    )
    built = [[k, list(v.shape)] for k, v in model.state_dict().items()]
    if built != manifest["tensors"]:
        raise ValueError("tensor manifest does not match the architecture it declares")
    np_dtype = np.dtype(manifest["dtype"]).newbyteorder("<")
    raw = np.fromfile(path, dtype=np.uint8, offset=offset)
    state, pos = {}, 0
    for name, shape in manifest["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np_dtype.itemsize
        if pos + nbytes > raw.size:
            raise ValueError(f"{path}: truncated parameter data at tensor {name}")
        arr = raw[pos : pos + nbytes].view(np_dtype).reshape(shape).astype(np_dtype.newbyteorder("="))
        state[name] = torch.from_numpy(arr.copy())
        pos += nbytes
    if pos != raw.size:
        raise ValueError(f"{path}: {raw.size - pos} trailing bytes after the last tensor")
    model.load_state_dict(state)
    return model
