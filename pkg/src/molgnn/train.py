"""Training loop, Adam optimizer, LR schedule, evaluation, checkpointing,
and the split-ensemble prediction protocol."""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import asdict, dataclass

import numpy as np

from .gnn2d import Model2D, Model2DConfig
from .gnn3d import Model3D, Model3DConfig
from .molgraph import (ConformerSet, MolecularGraph, SplitSpec,
                       batch_graphs)
from .tensor import Parameter, Tensor, concat

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    model_kind: str = "2d"            # "2d" | "3d"
    epochs: int = 100
    batch_size: int = 256
    lr0: float = 1e-3
    decay_factor: float = 0.25
    decay_every: int = 30
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self):
        assert self.epochs >= 1 and 0.0 < self.decay_factor <= 1.0

    @classmethod
    def paper_defaults(cls, model_kind: str, **overrides) -> "TrainConfig":
        if model_kind == "2d":
            base = dict(model_kind="2d", epochs=100, lr0=1e-3,
                        decay_factor=0.25, decay_every=30)
        elif model_kind == "3d":
            base = dict(model_kind="3d", epochs=60, lr0=1e-3,
                        decay_factor=0.10, decay_every=40)
        else:
            raise ValueError(f"unknown model kind {model_kind!r}")
        base.update(overrides)
        return cls(**base)


def derive_seed(seed: int, label: str) -> int:
    """Stable per-purpose sub-seed from a master seed."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def mae_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mae_loss: shapes {pred.shape} vs {target.shape}")
    return (pred - Tensor(target)).abs().mean()


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


class Adam:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: list[Parameter], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = [p for p in params if p.trainable]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float, grad_clip: float | None = None) -> None:
        self.step_count += 1
        t = self.step_count
        if grad_clip is not None:
            total = np.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params))
            if total > grad_clip:
                scale = grad_clip / total
                for p in self.params:
                    p.grad *= scale
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {p.name}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"step_count": self.step_count,
                "m": [m.copy() for m in self.m],
                "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = state["step_count"]
        self.m = [m.copy() for m in state["m"]]
        self.v = [v.copy() for v in state["v"]]


def _forward_batch(model, graphs: list[MolecularGraph],
                   conformers: dict[str, ConformerSet] | None,
                   training: bool, rng) -> tuple[Tensor, list[str]]:
    """Predictions for the molecules that the model can serve, plus their ids."""
    if model.kind == "2d":
        batch = batch_graphs(graphs)
        return model.forward(batch, training, rng), [g.id for g in graphs]
    served_ids, preds = [], []
    for g in graphs:
        cs = conformers.get(g.id) if conformers else None
        if cs is None or len(cs) == 0:
            continue
        out = model.forward(g, cs, training, rng)
        preds.append(out.reshape(1))
        served_ids.append(g.id)
    if not preds:
        return None, []
    return concat(preds), served_ids


def train_epoch(model, graphs_by_id: dict[str, MolecularGraph],
                train_ids: list[str], cfg: TrainConfig, optimizer: Adam,
                epoch: int, conformers: dict[str, ConformerSet] | None = None
                ) -> float:
    """One pass over the training ids; returns the mean train MAE."""
    rng = np.random.default_rng(derive_seed(cfg.seed, f"epoch-{epoch}"))
    ids = list(train_ids)
    rng.shuffle(ids)
    lr = lr_at_epoch(cfg, epoch)
    losses, counts = [], []
    for start in range(0, len(ids), cfg.batch_size):
        chunk = ids[start:start + cfg.batch_size]
        graphs = [graphs_by_id[i] for i in chunk]
        try:
            pred, served = _forward_batch(model, graphs, conformers, True, rng)
            if pred is None:
                continue
            targets = np.array([graphs_by_id[i].target for i in served])
            loss = mae_loss(pred, targets)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr, cfg.grad_clip)
        except Exception as exc:
            raise RuntimeError(
                f"epoch {epoch}, batch starting at {start} "
                f"(ids {chunk[:3]}...): {exc}") from exc
        losses.append(float(loss.data) * len(served))
        counts.append(len(served))
    total = sum(counts)
    return sum(losses) / total if total else float("nan")


def evaluate(model, graphs_by_id: dict[str, MolecularGraph], ids: list[str],
             conformers: dict[str, ConformerSet] | None = None,
             batch_size: int = 256) -> tuple[float, dict[str, float], list[str]]:
    """Eval-mode MAE plus per-id predictions; 3D models skip conformer-less
    ids and report them in the third return value."""
    preds: dict[str, float] = {}
    skipped: list[str] = []
    for start in range(0, len(ids), batch_size):
        graphs = [graphs_by_id[i] for i in ids[start:start + batch_size]]
        out, served = _forward_batch(model, graphs, conformers, False, None)
        if out is not None:
            for mol_id, val in zip(served, out.data):
                preds[mol_id] = float(val)
        skipped += [g.id for g in graphs if g.id not in preds]
    errors = []
    for mol_id, val in preds.items():
        target = graphs_by_id[mol_id].target
        if target is None:
            raise ValueError(f"evaluate: molecule {mol_id} has no target")
        errors.append(abs(val - target))
    mae = float(np.mean(errors)) if errors else float("nan")
    return mae, preds, skipped


def ensemble_predict(member_preds: list[dict[str, float | None]],
                     ids: list[str]) -> dict[str, float]:
    """Unweighted mean over the members that produced a value for each id."""
    out: dict[str, float] = {}
    for mol_id in ids:
        vals = [m[mol_id] for m in member_preds
                if mol_id in m and m[mol_id] is not None]
        if not vals:
            raise ValueError(f"ensemble_predict: no member predicts {mol_id!r}")
        out[mol_id] = float(np.mean(vals))
    return out


# -- checkpointing ------------------------------------------------------------


def _canonical(obj):
    """Rebuild arrays with interned dtypes so equal checkpoints pickle to
    identical bytes regardless of how the arrays were produced."""
    if isinstance(obj, np.ndarray):
        return obj.astype(np.dtype(obj.dtype.str), copy=True)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_canonical(v) for v in obj]
    return obj


def save_checkpoint(model, optimizer: Adam | None, path, epoch: int = 0,
                    seed: int = 0) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "params": {p.name: p.data.copy() for p in model.parameters()},
        "state": _canonical(model.state_dict()),
        "optimizer": _canonical(optimizer.state_dict()) if optimizer else None,
        "epoch": epoch,
        "seed": seed,
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)


def load_checkpoint(path) -> tuple:
    """Returns (model, optimizer_state, epoch, seed)."""
    with open(path, "rb") as fh:
        try:
            payload = pickle.load(fh)
        except (EOFError, pickle.UnpicklingError) as exc:
            raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint schema version "
                         f"{payload.get('version')!r} unsupported")
    if payload["kind"] == "2d":
        model = Model2D(Model2DConfig(**payload["config"]))
    else:
        model = Model3D(Model3DConfig(**payload["config"]))
    params = {p.name: p for p in model.parameters()}
    for name, value in payload["params"].items():
        params[name].data[...] = value
    model.load_state_dict(payload["state"])
    return model, payload["optimizer"], payload["epoch"], payload["seed"]


def fit(model, graphs: list[MolecularGraph], split: SplitSpec, cfg: TrainConfig,
        conformers: dict[str, ConformerSet] | None = None,
        metrics_path=None, best_path=None, final_path=None,
        resume_optimizer_state: dict | None = None,
        start_epoch: int = 0, log=None) -> list[dict]:
    """Full training run with per-epoch validation and best-model tracking."""
    import json

    graphs_by_id = {g.id: g for g in graphs}
    optimizer = Adam(model.parameters(), weight_decay=cfg.weight_decay)
    if resume_optimizer_state is not None:
        optimizer.load_state_dict(resume_optimizer_state)
    best_mae = float("inf")
    history = []
    metrics_fh = open(metrics_path, "a", encoding="utf-8",
                      newline="\n") if metrics_path else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            train_mae = train_epoch(model, graphs_by_id, split.train_ids, cfg,
                                    optimizer, epoch, conformers)
            valid_mae, _, _ = evaluate(model, graphs_by_id, split.valid_ids,
                                       conformers, cfg.batch_size)
            record = {"epoch": epoch, "lr": lr_at_epoch(cfg, epoch),
                      "train_mae": train_mae, "valid_mae": valid_mae}
            history.append(record)
            if metrics_fh:
                metrics_fh.write(json.dumps(record) + "\n")
                metrics_fh.flush()
            if log:
                log(record)
            if best_path and valid_mae < best_mae:
                best_mae = valid_mae
                save_checkpoint(model, optimizer, best_path, epoch, cfg.seed)
            if final_path:
                save_checkpoint(model, optimizer, final_path, epoch, cfg.seed)
    finally:
        if metrics_fh:
            metrics_fh.close()
    return history
