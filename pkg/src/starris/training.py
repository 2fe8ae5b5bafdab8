"""Unsupervised training: negative sum rate, optional Lagrangian QoS term, Adam with step decay."""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .bhgnn import BHGNN, feature_scale_from
from .config import db_to_linear
from .dataset import ChannelDataset


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 0.95
    lr_step: int = 10
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    qos_enabled: bool = False
    qos_target: float = db_to_linear(1.0)
    dual_lr: float = 0.1
    dual_init: float = 0.0
    val_fraction: float = 0.1
    width_mode: str = "table"
    vertex_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.qos_target < 0:
            raise ValueError("qos_target must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        """Build from config-file strings; unknown keys are ignored."""
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            if f.name in items:
                raw = items[f.name]
                if f.type in ("bool", bool):
                    kwargs[f.name] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif f.name == "width_mode":
                    kwargs[f.name] = raw.strip()
                elif f.name in ("batch_size", "max_epochs", "patience", "lr_step", "seed"):
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
        if "qos_target_db" in items:
            kwargs["qos_target"] = db_to_linear(float(items["qos_target_db"]))
        return cls(**kwargs)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate in effect during ``epoch`` (0-based)."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_step)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    status: str = ""
    last_state: dict | None = field(default=None, repr=False)  # parameters after the final epoch

    COLUMNS = (
        "epoch",
        "lr",
        "train_loss",
        "val_sum_rate",
        "mean_violation",
        "max_violation",
        "lambda",
        "wall_time",
    )

    def append(self, **row):
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epochs must increase")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def deterministic_view(self) -> list[dict]:
        """Rows without wall time, for reproducibility comparisons."""
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([";".join(f"{x:.6g}" for x in r[c]) if c == "lambda" else r[c] for c in self.COLUMNS])


def loss_sum_rate(sum_rate: torch.Tensor) -> torch.Tensor:
    return -sum_rate.mean()


def qos_violation(sinr: torch.Tensor, target: float) -> torch.Tensor:
    """Per-sample, per-user hinge ``max(target - sinr, 0)``."""
    return torch.clamp(target - sinr, min=0.0)


def loss_qos(sum_rate: torch.Tensor, sinr: torch.Tensor, lam, target: float) -> torch.Tensor:
    lam = torch.as_tensor(lam, dtype=sinr.dtype)
    return (-sum_rate + (qos_violation(sinr, target) * lam).sum(-1)).mean()


def update_duals(lam, violation, dual_lr: float) -> np.ndarray:
    """Projected subgradient step on the multipliers."""
    return np.maximum(0.0, np.asarray(lam, float) + dual_lr * np.asarray(violation, float))


def evaluate(model: BHGNN, data: ChannelDataset, idx, batch_size: int = 256, target: float | None = None):
    """Mean sum rate (and mean/max/per-user QoS violation) of ``model`` on ``idx``."""
    cfg = data.cfg
    rates, viols = [], []
    with torch.no_grad():
        for start in range(0, len(idx), batch_size):
            sl = idx[start : start + batch_size]
            out = model(data.h_equiv(sl), cfg.n_users_t_region, cfg.p_max, cfg.noise_power)
            rates.append(out.sum_rate.numpy())
            if target is not None:
                viols.append(qos_violation(out.sinr, target).numpy())
    rate = float(np.mean(np.concatenate(rates)))
    if target is None:
        return rate
    v = np.concatenate(viols)
    return rate, float(v.mean()), float(v.max()), v.mean(axis=0)


def train(data: ChannelDataset, cfg: TrainConfig, model: BHGNN | None = None, verbose: bool = False):
    """Train on the dataset's training split; returns the best-validation model and the log.

    ``log.last_state`` holds the parameters after the final epoch.
    """
    torch.manual_seed(cfg.seed)
    train_idx, val_idx = data.split(cfg.val_fraction)
    if len(val_idx) == 0:
        raise ValueError("validation split is empty; use more samples or a larger val_fraction")
    sys = data.cfg
    h_train = torch.as_tensor(data.h_equiv(train_idx))
    if model is None:
        model = BHGNN(sys.n_tx, width_mode=cfg.width_mode, vertex_norm=cfg.vertex_norm, feature_scale=feature_scale_from(h_train.numpy()), seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_step, gamma=cfg.lr_decay)
    rng = np.random.default_rng(cfg.seed)
    lam = np.full(sys.n_users, cfg.dual_init)
    log = TrainLog()
    best_rate, best_state, stale = -np.inf, copy.deepcopy(model.state_dict()), 0
    t0 = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_idx))
        losses, epoch_viol = [], []
        lr = opt.param_groups[0]["lr"]
        for start in range(0, len(order), cfg.batch_size):
            sl = order[start : start + cfg.batch_size]
            out = model(h_train[sl], sys.n_users_t_region, sys.p_max, sys.noise_power)
            if cfg.qos_enabled:
                loss = loss_qos(out.sum_rate, out.sinr, lam, cfg.qos_target)
            else:
                loss = loss_sum_rate(out.sum_rate)
            if not torch.isfinite(loss):
                log.last_state = copy.deepcopy(model.state_dict())
                model.load_state_dict(best_state)
                log.status = f"diverged in epoch {epoch}; restored best checkpoint"
                return model, log
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item() * len(sl))
            epoch_viol.append(qos_violation(out.sinr.detach(), cfg.qos_target).numpy())
        sched.step()
        viol = np.concatenate(epoch_viol)
        if cfg.qos_enabled:
            lam = update_duals(lam, viol.mean(axis=0), cfg.dual_lr)
        val_rate, val_mean_v, val_max_v, _ = evaluate(model, data, val_idx, target=cfg.qos_target)
        log.append(
            epoch=epoch,
            lr=lr,
            train_loss=float(np.sum(losses) / len(order)),
            val_sum_rate=val_rate,
            mean_violation=val_mean_v,
            max_violation=val_max_v,
            **{"lambda": lam.tolist()},
            wall_time=time.perf_counter() - t0,
        )
        if verbose:
            print(f"epoch {epoch:3d} lr {lr:.2e} loss {log.rows[-1]['train_loss']:.4f} val {val_rate:.4f} viol {val_mean_v:.4f}")
        # stopping metric: negative validation sum rate
        if val_rate > best_rate:
            best_rate, best_state, stale = val_rate, copy.deepcopy(model.state_dict()), 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                log.status = f"early stop after epoch {epoch}"
                break
    else:
        log.status = "max epochs"
    log.last_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    return model, log


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
