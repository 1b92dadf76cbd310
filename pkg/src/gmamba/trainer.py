"""Training: decoupled-weight-decay Adam, deterministic splits and loops,
metric reporting, and the ablation arms.

Arms select the permutation recipe:

    baseline            no jitter, heuristic off (fixed input order)
    permute_only        jitter on a zero heuristic (pure random order)
    permute_plus_degree jitter on the degree heuristic
    mpnn_only           selective-block output projection zeroed and frozen

Every source of randomness derives from (seed, epoch, graph index), so two
runs with the same config and seed produce bitwise-identical checkpoints
and metric CSVs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, GmambaError
from .graph import Graph
from .model import (ModelConfig, ModelState, init_model, loss,
                    loss_kind_for_head, model_forward, node_heuristic_values,
                    positional_encoding)
from .params import ParamStore, save_checkpoint

ARMS = ("baseline", "permute_only", "permute_plus_degree", "mpnn_only")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    arm: str = "permute_plus_degree"
    eval_m: int = 5
    lr_schedule: str = "constant"   # constant | cosine
    checkpoint_every: int = 0       # 0 -> final only

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.arm not in ARMS:
            raise ConfigError(f"unknown arm {self.arm!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    metric: float
    loss: float
    seconds: float


@dataclass
class MetricReport:
    seed: int
    metric_name: str
    records: list[EpochRecord] = field(default_factory=list)

    def add(self, epoch, split, metric, loss_value, seconds) -> None:
        if self.records and epoch < self.records[-1].epoch:
            raise ConfigError("epoch index must be monotone")
        self.records.append(EpochRecord(epoch, split, float(metric),
                                        float(loss_value), float(seconds)))

    def final(self, split: str) -> EpochRecord:
        rows = [r for r in self.records if r.split == split]
        if not rows:
            raise ConfigError(f"no records for split {split!r}")
        return rows[-1]

    def write_csv(self, path) -> None:
        """Deterministic metric table (timings live in the JSON report)."""
        with open(path, "w", newline="\n") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "split", "metric", "loss"])
            for r in self.records:
                writer.writerow([r.epoch, r.split, repr(r.metric), repr(r.loss)])

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(
                {
                    "seed": self.seed,
                    "metric": self.metric_name,
                    "records": [asdict(r) for r in self.records],
                },
                f,
                indent=2,
            )


class AdamWState:
    def __init__(self, store: ParamStore):
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}


def adamw_step(store: ParamStore, state: AdamWState, cfg: TrainConfig,
               lr: float | None = None) -> None:
    """theta <- theta*(1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps)."""
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    for name, tensor in store.items():
        if not tensor.requires_grad:
            continue
        g = tensor.grad
        if g is None:
            g = np.zeros_like(tensor.data)
        if not np.all(np.isfinite(g)):
            raise GmambaError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        if cfg.weight_decay:
            tensor.data *= 1.0 - lr * cfg.weight_decay
        tensor.data -= lr * (mhat / (np.sqrt(vhat) + cfg.eps))
    bad = store.first_nonfinite()
    if bad is not None:
        raise GmambaError(f"parameter {bad!r} became non-finite after step {t}")


def split_dataset(graphs, seed: int):
    """Deterministic 80/10/10 split."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD5)))
    order = rng.permutation(len(graphs))
    n = len(graphs)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    train = [graphs[i] for i in order[:n_train]]
    val = [graphs[i] for i in order[n_train : n_train + n_val]]
    test = [graphs[i] for i in order[n_train + n_val :]]
    return train, val, test


def apply_arm(model_cfg: ModelConfig, arm: str) -> ModelConfig:
    if arm == "baseline":
        return replace(model_cfg, heuristic="none", noise=False)
    if arm == "permute_only":
        return replace(model_cfg, heuristic="none", noise=True)
    if arm == "permute_plus_degree":
        return replace(model_cfg, heuristic="degree", noise=True)
    if arm == "mpnn_only":
        return replace(model_cfg, heuristic="none", noise=False)
    raise ConfigError(f"unknown arm {arm!r}")


def _freeze_gmb_output(state: ModelState) -> None:
    """Zero and freeze every block's output projection: the selective branch
    contributes nothing and the model degrades to MPNN + residual."""
    for layer in state.layers:
        layer.gmb.w2.data[...] = 0.0
        layer.gmb.b2.data[...] = 0.0
        layer.gmb.w2.requires_grad = False
        layer.gmb.b2.requires_grad = False


def _graph_rng(seed: int, epoch: int, graph_idx: int):
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, graph_idx)))


@dataclass
class Prepared:
    """Per-graph tensors that do not change across epochs."""

    graph: Graph
    pe: np.ndarray
    heur: np.ndarray


def prepare(graphs, cfg: ModelConfig) -> list[Prepared]:
    return [
        Prepared(
            graph=g,
            pe=positional_encoding(g, cfg.pe_dim),
            heur=node_heuristic_values(g, cfg.heuristic),
        )
        for g in graphs
    ]


def _metric_for(head: str):
    return "mae" if head == "graph_regress" else "accuracy"


def _check_label(head: str, label) -> None:
    if head == "graph_class":
        ok = isinstance(label, (int, np.integer))
    elif head == "node_class":
        ok = label is not None and np.ndim(label) == 1 and \
            np.issubdtype(np.asarray(label).dtype, np.integer)
    else:
        ok = label is not None and np.issubdtype(np.asarray(label).dtype, np.floating)
    if not ok:
        raise ConfigError(f"label type does not match head {head!r}")


def _prediction_stats(output, label, head: str):
    """(metric numerator, instance count) for one graph."""
    if head == "graph_class":
        return float(int(np.argmax(output)) == int(label)), 1
    if head == "node_class":
        lab = np.asarray(label)
        mask = lab >= 0
        pred = np.argmax(np.asarray(output)[mask], axis=1)
        return float((pred == lab[mask]).sum()), int(mask.sum())
    return float(np.abs(np.asarray(output) - np.asarray(label)).sum()), int(np.size(label))


def evaluate(state: ModelState, prepared: list[Prepared], m: int, seed: int):
    """Task metric (accuracy or MAE) plus mean loss over a split.

    Applies m-fold output averaging inside each block via the model's
    eval path.
    """
    cfg = replace(state.config, m_eval=m)
    eval_state = replace(state, config=cfg)
    kind = loss_kind_for_head(cfg.head)
    hits = 0.0
    count = 0
    losses = []
    for idx, item in enumerate(prepared):
        _check_label(cfg.head, item.graph.label)
        rng = _graph_rng(seed, -1, idx)
        out, _ = model_forward(item.graph, eval_state, rng, training=False,
                               pe=item.pe, heur=item.heur)
        value, _ = loss(out, item.graph.label, kind)
        losses.append(value)
        num, n = _prediction_stats(out, item.graph.label, cfg.head)
        hits += num
        count += n
    metric = hits / max(count, 1)
    return metric, float(np.mean(losses))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset,
          out_dir=None):
    """Full training run; returns ``(ModelState, MetricReport)``.

    The dataset is split 80/10/10 from the seed; the arm adjusts the
    permutation recipe before the model is built.
    """
    cfg = apply_arm(model_cfg, train_cfg.arm)
    state = init_model(cfg, seed=train_cfg.seed)
    if train_cfg.arm == "mpnn_only":
        _freeze_gmb_output(state)

    train_graphs, val_graphs, test_graphs = split_dataset(dataset, train_cfg.seed)
    prep_train = prepare(train_graphs, cfg)
    prep_val = prepare(val_graphs, cfg)
    prep_test = prepare(test_graphs, cfg)

    opt = AdamWState(state.store)
    report = MetricReport(seed=train_cfg.seed, metric_name=_metric_for(cfg.head))
    kind = loss_kind_for_head(cfg.head)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, 0x5F)))

    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(prep_train))
        epoch_losses = []
        hits = 0.0
        count = 0
        pending = 0
        state.store.zero_grad()
        for pos, graph_idx in enumerate(order):
            item = prep_train[int(graph_idx)]
            _check_label(cfg.head, item.graph.label)
            rng = _graph_rng(train_cfg.seed, epoch, int(graph_idx))
            out, backward = model_forward(item.graph, state, rng, training=True,
                                          pe=item.pe, heur=item.heur)
            value, dout = loss(out, item.graph.label, kind)
            if not np.isfinite(value):
                raise GmambaError(f"loss diverged (non-finite) at epoch {epoch}")
            epoch_losses.append(value)
            num, n = _prediction_stats(out, item.graph.label, cfg.head)
            hits += num
            count += n
            backward(dout)
            pending += 1
            if pending == train_cfg.batch_size or pos == len(order) - 1:
                for t in state.store.tensors():
                    if t.grad is not None:
                        t.grad /= pending
                adamw_step(state.store, opt, train_cfg, lr=_lr_at(train_cfg, epoch))
                state.store.zero_grad()
                pending = 0
        train_metric = hits / max(count, 1)
        train_loss = float(np.mean(epoch_losses))
        val_metric, val_loss = evaluate(state, prep_val, m=1,
                                        seed=train_cfg.seed + 1)
        elapsed = time.perf_counter() - started
        report.add(epoch, "train", train_metric, train_loss, elapsed)
        report.add(epoch, "val", val_metric, val_loss, 0.0)
        if out_dir is not None and train_cfg.checkpoint_every and \
                (epoch + 1) % train_cfg.checkpoint_every == 0:
            save_checkpoint(state.store, f"{out_dir}/checkpoint_ep{epoch + 1}.bin")

    test_metric, test_loss = evaluate(state, prep_test, m=train_cfg.eval_m,
                                      seed=train_cfg.seed + 2)
    report.add(train_cfg.epochs, "test", test_metric, test_loss, 0.0)

    if out_dir is not None:
        save_checkpoint(state.store, f"{out_dir}/checkpoint.bin")
        report.write_csv(f"{out_dir}/metrics.csv")
        report.write_json(f"{out_dir}/report.json")
    return state, report


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max(cfg.epochs - 1, 1)))


def run_ablation(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset,
                 arms=("baseline", "permute_only", "permute_plus_degree"),
                 seeds=(0, 1, 2, 3, 4)):
    """Train every arm over the seeds; returns {arm: [final test metric per seed]}."""
    results: dict[str, list[float]] = {}
    for arm in arms:
        scores = []
        for seed in seeds:
            cfg = replace(train_cfg, arm=arm, seed=int(seed))
            _, report = train(model_cfg, cfg, dataset)
            scores.append(report.final("test").metric)
        results[arm] = scores
    return results
