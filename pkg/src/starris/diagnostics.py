"""Numerical self-checks: finite-difference gradients and forward-cost scaling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .bhgnn import BHGNN, feature_scale_from
from .channel import sample_channels
from .config import SystemConfig


def tiny_config() -> SystemConfig:
    return SystemConfig(n_tx=2, n_users=2, n_ris=1, n_elems_per_ris=2, n_users_t_region=1)


@dataclass
class GradientReport:
    checked: int = 0
    tensors: int = 0
    failures: list = field(default_factory=list)  # (tensor, index, autograd, finite difference)
    max_rel_error: float = 0.0
    reduced_steps: int = 0  # entries whose step was shrunk to stay clear of a ReLU kink


def _rel_error(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


class _ReluPattern:
    """Records which ReLU units are active during a forward pass."""

    def __init__(self, model: BHGNN):
        self.masks: list[torch.Tensor] = []
        for seq in model.nets.values():
            for layer in seq:
                if layer.spec.activation == "relu":
                    layer.register_forward_hook(lambda mod, inp, out: self.masks.append(out > 0))

    def take(self) -> list[torch.Tensor]:
        out, self.masks = self.masks, []
        return out


def _replica_matches(masks, base, n_rep: int) -> torch.Tensor:
    """(n_rep,) bool: replica r reproduced the unperturbed activation pattern."""
    ok = torch.ones(n_rep, dtype=torch.bool)
    for m, b in zip(masks, base):
        same = m.reshape(n_rep, *b.shape) == b[None]
        ok &= same.reshape(n_rep, -1).all(dim=1)
    return ok


class _Perturbed:
    """Adds a per-sample offset to one parameter entry of a dense layer.

    Sample ``b`` of the batch sees entry ``(row[b], col[b])`` of the weight
    (``col`` is None for a bias) shifted by ``shift[b]``.  The effect on the
    pre-activation is ``shift * x[..., col]`` in output unit ``row``, so one
    batched forward evaluates many perturbed copies of the network.
    """

    def __init__(self, layer, row, col, shift):
        self.layer, self.row, self.col, self.shift = layer, row, col, shift

    def __enter__(self):
        layer, row, col, shift = self.layer, self.row, self.col, self.shift
        out_dim = layer.spec.out_dim

        def forward(x):
            y = layer.pre_activation(x)
            lead = (x.shape[0],) + (1,) * (x.dim() - 2)
            hot = torch.nn.functional.one_hot(row, out_dim).to(x.dtype).reshape(*lead, out_dim)
            scale = shift.to(x.dtype).reshape(*lead, 1)
            if col is None:
                delta = scale * hot
            else:
                idx = col.reshape(*lead, 1).expand(*x.shape[:-1], 1)
                delta = scale * torch.gather(x, -1, idx) * hot
            return layer.activate(y + delta)

        layer.forward = forward
        return self

    def __exit__(self, *exc):
        del self.layer.forward


def gradient_check(
    entries_per_tensor: int | None = 40,
    step: float = 1e-4,
    rtol: float = 1e-4,
    n_samples: int = 2,
    seed: int = 0,
    full_below: int = 512,
    max_halvings: int = 30,
    chunk: int = 256,
) -> GradientReport:
    """Compare autograd gradients of the negative mean sum rate with central differences.

    Runs a float64 model at (N_t, K, L, M) = (2, 2, 1, 2).  Tensors with at
    most ``full_below`` entries are checked entry by entry; larger ones on
    the ``entries_per_tensor`` largest-gradient entries plus as many random
    ones (``entries_per_tensor=None`` checks every entry of every tensor).
    ``chunk`` entries are evaluated per batched forward, two replicas each.

    The network is piecewise smooth.  When the +-``step`` interval crosses a
    ReLU kink (some unit switches on or off) the central difference is not a
    derivative estimate, so the step is halved until the activation pattern
    at both ends matches the unperturbed one.
    """
    cfg = tiny_config()
    h = torch.as_tensor(np.stack([sample_channels(cfg, index=i).h_equiv for i in range(n_samples)]))
    model = BHGNN(cfg.n_tx, feature_scale=feature_scale_from(h.numpy()), seed=seed, dtype=torch.float64)
    model.check_finite = False
    pattern = _ReluPattern(model)

    def rates(hb):
        return model(hb, cfg.n_users_t_region, cfg.p_max, cfg.noise_power).sum_rate

    model.zero_grad()
    value = -rates(h).mean()
    value.backward()
    base_pattern = pattern.take()
    # central differences carry ~eps*|L|/step of rounding noise; below noise/rtol a
    # relative comparison measures that noise, so the denominator is floored there
    noise_unit = 4 * np.finfo(float).eps * max(abs(value.item()), 1.0)
    rng = np.random.default_rng(seed)
    rep = GradientReport()
    layers = {}
    for lname, seq in model.nets.items():
        for k, layer in enumerate(seq):
            layers[f"nets.{lname}.{k}.linear.weight"] = layer
            layers[f"nets.{lname}.{k}.linear.bias"] = layer

    with torch.no_grad():
        for name, p in model.named_parameters():
            rep.tensors += 1
            g = p.grad.reshape(-1)
            n = g.numel()
            if entries_per_tensor is None or n <= full_below:
                idx = np.arange(n)
            else:
                top = np.argsort(-g.abs().numpy())[:entries_per_tensor]
                idx = np.unique(np.concatenate([top, rng.choice(n, entries_per_tensor, replace=False)]))
            layer, is_weight = layers[name], name.endswith("weight")
            in_dim = layer.spec.in_dim
            pending = [(int(i), step) for i in idx]
            for _ in range(max_halvings + 1):
                retry = []
                for c0 in range(0, len(pending), chunk):
                    batch = pending[c0 : c0 + chunk]
                    ent = torch.tensor([e for e, _ in batch])
                    st = torch.tensor([s for _, s in batch], dtype=torch.float64)
                    n_rep = 2 * len(batch)
                    # replica 2q is +step, 2q+1 is -step of entry q; each replica holds n_samples samples
                    per_rep = lambda t: t.repeat_interleave(2).repeat_interleave(n_samples)  # noqa: E731
                    shift = per_rep(st) * torch.tensor([1.0, -1.0]).repeat(len(batch)).repeat_interleave(n_samples)
                    row = per_rep(ent // in_dim if is_weight else ent)
                    col = per_rep(ent % in_dim) if is_weight else None
                    with _Perturbed(layer, row, col, shift):
                        r = rates(h.repeat(n_rep, 1, 1, 1))
                    ok = _replica_matches(pattern.take(), base_pattern, n_rep).reshape(-1, 2).all(dim=1)
                    loss = -r.reshape(n_rep, n_samples).mean(dim=1).reshape(-1, 2)
                    fd = (loss[:, 0] - loss[:, 1]) / (2 * st)
                    for q, (e, s) in enumerate(batch):
                        if not ok[q] and s > step / 2**max_halvings:
                            retry.append((e, s / 2))
                            continue
                        err = _rel_error(g[e].item(), fd[q].item(), noise_unit / s / rtol)
                        rep.checked += 1
                        rep.reduced_steps += s < step
                        rep.max_rel_error = max(rep.max_rel_error, err)
                        if err > rtol:
                            rep.failures.append((name, e, g[e].item(), fd[q].item()))
                pending = retry
                if not pending:
                    break
    return rep


def _r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())


def flop_sweep(
    n_tx: int = 8,
    elements=(8, 16, 32, 64),
    users=(2, 4, 8, 16),
    fixed_users: int = 4,
    fixed_elements: int = 16,
) -> dict:
    """Counted forward FLOPs versus L*M (K fixed) and versus K (L*M fixed), with linear-fit R^2."""
    model = BHGNN(n_tx)
    rng = np.random.default_rng(0)

    def flops(s, k):
        h = rng.standard_normal((s, k, n_tx)) + 1j * rng.standard_normal((s, k, n_tx))
        return model.count_flops(h, 1)

    by_elem = [flops(s, fixed_users) for s in elements]
    by_user = [flops(fixed_elements, k) for k in users]
    return {
        "elements": list(elements),
        "flops_elements": by_elem,
        "r2_elements": _r2(elements, by_elem),
        "users": list(users),
        "flops_users": by_user,
        "r2_users": _r2(users, by_user),
    }
