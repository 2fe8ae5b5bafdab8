"""Heterogeneous graph of STAR-RIS elements and users, and the message-passing schedule.

The graph is complete bipartite: every element vertex ``s`` is joined to
every user vertex ``k`` by an edge carrying the real split of the
equivalent channel row ``h_equiv[s, k]``.  One round of message passing
aggregates edge messages by summation and updates both vertex types; the
operators themselves come from an :class:`OperatorBundle`, so the engine
is independent of the neural model that fills it.

Tensors are batched: users ``(B, K, ...)``, elements ``(B, S, ...)`` and
edges ``(B, S, K, ...)``.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import torch

from .channel import ChannelRealization


def canonical_sum(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Sum along ``dim`` in sorted order, by a pairwise tree of elementwise adds.

    Sorting makes the result independent of the order in which neighbours
    are listed.  The reduction itself is spelled out as elementwise adds
    because library reductions may round differently depending on where a
    column sits in memory; with both fixed, relabelling vertices permutes
    the output bit for bit.
    """
    s = torch.sort(x, dim=dim).values.movedim(dim, 0)
    while s.shape[0] > 1:
        pairs = s.shape[0] // 2
        head = s[0 : 2 * pairs : 2] + s[1 : 2 * pairs : 2]
        s = torch.cat([head, s[2 * pairs :]]) if s.shape[0] % 2 else head
    return s[0]


@dataclass(frozen=True)
class EdgeFeatureTensor:
    """``e[..., s, k, :] = [Re h_equiv[s, k], Im h_equiv[s, k]]``."""

    e: np.ndarray

    @classmethod
    def from_channel(cls, h_equiv) -> "EdgeFeatureTensor":
        h = h_equiv.h_equiv if isinstance(h_equiv, ChannelRealization) else np.asarray(h_equiv)
        return cls(np.concatenate([h.real, h.imag], axis=-1))

    @property
    def n_tx(self) -> int:
        return self.e.shape[-1] // 2

    @property
    def n_edges(self) -> int:
        return self.e.shape[-3] * self.e.shape[-2]

    def to_complex(self) -> np.ndarray:
        n = self.n_tx
        return self.e[..., :n] + 1j * self.e[..., n:]

    def permute(self, elem_perm=None, user_perm=None) -> "EdgeFeatureTensor":
        e = self.e
        if elem_perm is not None:
            e = np.take(e, elem_perm, axis=-3)
        if user_perm is not None:
            e = np.take(e, user_perm, axis=-2)
        return EdgeFeatureTensor(e)


@dataclass(frozen=True)
class HeteroGraphState:
    """Vertex features and the predictions of the latest round."""

    u: torch.Tensor  # (B, K, D_u)
    b: torch.Tensor  # (B, S, D_b)
    w: torch.Tensor  # (B, K, 2 N_t) raw precoder head output
    theta: torch.Tensor  # (B, S, 2) phase fractions for the T and R regions
    beta: torch.Tensor  # (B, S, 1) energy split

    def permute(self, elem_perm=None, user_perm=None) -> "HeteroGraphState":
        s = self
        if elem_perm is not None:
            p = torch.as_tensor(elem_perm)
            s = replace(s, b=s.b[:, p], theta=s.theta[:, p], beta=s.beta[:, p])
        if user_perm is not None:
            p = torch.as_tensor(user_perm)
            s = replace(s, u=s.u[:, p], w=s.w[:, p])
        return s


OPERATOR_ARITY = {"phi": 4, "psi": 4, "U": 4, "B": 5, "W": 1, "C": 1, "D": 1}


@dataclass(frozen=True)
class OperatorBundle:
    """Round-indexed vertex/edge operators and shared output heads.

    * ``phi(t, b_s, u_k, e_sk)`` -> message to user k
    * ``psi(t, u_k, b_s, e_sk)`` -> message to element s
    * ``U(t, u_k, w_k, c_k)`` and ``B(t, b_s, theta_s, beta_s, d_s)`` -> new features
    * ``W(u)``, ``C(b)``, ``D(b)`` -> per-vertex predictions
    """

    phi: Callable
    psi: Callable
    U: Callable
    B: Callable
    W: Callable
    C: Callable
    D: Callable

    def __post_init__(self):
        for name, arity in OPERATOR_ARITY.items():
            fn = getattr(self, name)
            try:
                params = inspect.signature(fn).parameters.values()
            except (TypeError, ValueError):
                continue
            if any(p.kind == p.VAR_POSITIONAL for p in params):
                continue
            n = sum(p.default is p.empty and p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD) for p in params)
            if n != arity:
                raise TypeError(f"operator {name} takes {n} positional arguments, expected {arity}")


def initial_state(
    batch: int, n_elems: int, n_users: int, n_tx: int, user_feature=None, dtype=torch.float32
) -> HeteroGraphState:
    """Zero element features and predictions; user features are zeros unless given.

    ``user_feature`` (B, K) lets callers tag users (e.g. by region) through a
    one-dimensional initial feature.
    """
    u = torch.zeros(batch, n_users, 1, dtype=dtype)
    if user_feature is not None:
        u = torch.as_tensor(user_feature, dtype=dtype).reshape(batch, n_users, 1)
    return HeteroGraphState(
        u=u,
        b=torch.zeros(batch, n_elems, 1, dtype=dtype),
        w=torch.zeros(batch, n_users, 2 * n_tx, dtype=dtype),
        theta=torch.zeros(batch, n_elems, 2, dtype=dtype),
        beta=torch.zeros(batch, n_elems, 1, dtype=dtype),
    )


def build_graph(chan, user_feature=None, dtype=torch.float32):
    """Edge features and the initial state for one realization or a batch of ``h_equiv``.

    Accepts a ChannelRealization, an (S, K, N_t) array or a batch (B, S, K, N_t).
    """
    edges = EdgeFeatureTensor.from_channel(chan)
    e = edges.e if edges.e.ndim == 4 else edges.e[None]
    b, s, k, f = e.shape
    if user_feature is not None:
        user_feature = np.asarray(user_feature, dtype=float).reshape(b, k)
    return edges, initial_state(b, s, k, f // 2, user_feature, dtype)


def _expand(state: HeteroGraphState, n_elems: int, n_users: int):
    b_exp = state.b[:, :, None, :].expand(-1, -1, n_users, -1)
    u_exp = state.u[:, None, :, :].expand(-1, n_elems, -1, -1)
    return b_exp, u_exp


def hgmp_round(state: HeteroGraphState, edges: torch.Tensor, t: int, ops: OperatorBundle) -> HeteroGraphState:
    """One aggregate/combine round followed by fresh predictions.

    ``edges`` is a (B, S, K, F) tensor.
    """
    _, s, k, _ = edges.shape
    b_exp, u_exp = _expand(state, s, k)
    c = canonical_sum(ops.phi(t, b_exp, u_exp, edges), dim=1)  # (B, K, D)
    d = canonical_sum(ops.psi(t, u_exp, b_exp, edges), dim=2)  # (B, S, D)
    u = ops.U(t, state.u, state.w, c)
    b = ops.B(t, state.b, state.theta, state.beta, d)
    return HeteroGraphState(u=u, b=b, w=ops.W(u), theta=ops.C(b), beta=ops.D(b))


def run_hgmp(edges: torch.Tensor, n_rounds: int, ops: OperatorBundle, state: HeteroGraphState | None = None):
    """Apply ``n_rounds`` rounds (indexed 1..T) starting from ``state`` (zeros by default)."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if state is None:
        b, s, k, f = edges.shape
        state = initial_state(b, s, k, f // 2, dtype=edges.dtype)
    for t in range(1, n_rounds + 1):
        state = hgmp_round(state, edges, t, ops)
    return state
