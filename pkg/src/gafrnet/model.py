"""GAFR network: attention embeddings fused with fuzzy-rule activations.

Forward pass per node u::

    h_u  = stacked GAT embedding (or a per-node perceptron under no_graph)
    w_u  = (alpha_k * r_k(u))_k          K weighted rule activations
    h'_u = h_u + fuse(w_u)               additive | gated | scalar-broadcast
    logits_u = h'_u W_c + b

Training is full-batch and transductive: one graph, loss on train nodes only.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import NumericError, Param, Tape, Var, backward, zero_grads
from .dataio import FeatureTable
from .fuzzy import MembershipParams, RuleActivation, RuleBase, rule_fire
from .gat import AttentionRecord, GatLayerParams, dense_forward, glorot, init_layer, stack_layers
from .metrics import balanced_accuracy
from .simgraph import SampleGraph, build_graph, empty_graph
from .topo import topo_features

ABLATIONS = ("full", "no_graph", "no_attention", "no_fuzzy")
ABLATION_LABELS = {
    "no_graph": "GAFR-Net w/o G",
    "no_attention": "GAFR-Net w/o A",
    "no_fuzzy": "GAFR-Net w/o FR",
    "full": "GAFR-Net",
}
FUSION_MODES = ("additive", "gated", "scalar-broadcast")
CLASS_WEIGHTING = ("none", "inverse-frequency")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


class FingerprintMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 50
    seed: int = 0
    tau: float = 0.75
    weight_decay: float = 0.0
    class_weighting: str = "inverse-frequency"
    early_stop_patience: int | None = None
    ablation: str = "full"
    fusion_mode: str = "additive"
    layers: int = 2
    heads: int = 4
    hidden: int = 16
    negative_slope: float = 0.2
    self_loops_in_attention: bool = True
    # None keeps the canonical fuzzy init; an int jitters it (ablation checks)
    fuzzy_init_seed: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if not -1.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [-1, 1]")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.class_weighting not in CLASS_WEIGHTING:
            raise ConfigError(f"class_weighting must be one of {CLASS_WEIGHTING}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.layers < 0 or self.heads < 1 or self.hidden < 1:
            raise ConfigError("layers >= 0, heads >= 1 and hidden >= 1 required")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1 when set")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    layers: list[GatLayerParams]
    membership: MembershipParams
    rules: RuleBase
    W_r: Param  # (K, d): rule vector -> embedding
    w_g: Param  # (K, 1)
    b_g: Param  # (1, 1)
    W_c: Param  # (d, C)
    b_c: Param  # (1, C)

    def all(self) -> list[Param]:
        out = [p for layer in self.layers for p in layer.params()]
        out += [self.membership.centers, self.membership.log_widths, self.rules.alpha]
        out += [self.W_r, self.w_g, self.b_g, self.W_c, self.b_c]
        return out

    def by_name(self) -> dict[str, Param]:
        return {p.name: p for p in self.all()}

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.all()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine = self.by_name()
        if set(mine) != set(state):
            raise ValueError("parameter names differ from the model layout")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != mine[name].shape:
                raise ValueError(f"{name}: shape {value.shape}, expected {mine[name].shape}")
            mine[name].value = value.copy()
            mine[name].zero_grad()


def init_params(config: TrainConfig, d_in: int, num_classes: int) -> ModelParams:
    """Seeded init with an independent stream per component.

    The classifier starts at zero so that the first update already points
    along the class-discriminative direction of the embeddings.
    """
    ss = np.random.SeedSequence(config.seed)
    rng_gat, rng_fusion = (np.random.default_rng(s) for s in ss.spawn(2))

    layers = []
    width = d_in
    for i in range(config.layers):
        last = i == config.layers - 1
        layer = init_layer(
            rng_gat, width, config.hidden, config.heads,
            "mean" if last else "concat", f"gat.l{i}", config.negative_slope,
        )
        layers.append(layer)
        width = layer.d_out

    membership = MembershipParams.default()
    rules = RuleBase.full_grid()
    if config.fuzzy_init_seed is not None:
        jr = np.random.default_rng(config.fuzzy_init_seed)
        membership.centers.value += jr.normal(0, 0.05, membership.centers.shape)
        membership.log_widths.value += jr.normal(0, 0.1, membership.log_widths.shape)
        rules.alpha.value += jr.normal(0, 0.1, rules.alpha.shape)

    k = rules.size
    return ModelParams(
        layers=layers,
        membership=membership,
        rules=rules,
        W_r=Param("fusion.W_r", glorot(rng_fusion, (k, width))),
        w_g=Param("fusion.w_g", np.zeros((k, 1))),
        b_g=Param("fusion.b_g", np.zeros((1, 1))),
        W_c=Param("classifier.W_c", np.zeros((width, num_classes))),
        b_c=Param("classifier.b", np.zeros((1, num_classes))),
    )


@dataclass
class ForwardResult:
    logits: Var
    embedding: Var
    fused: Var
    attention: AttentionRecord
    rules: RuleActivation | None


def _self_attention(n: int, layers: list[GatLayerParams]) -> AttentionRecord:
    idx = np.arange(n)
    return AttentionRecord(idx, idx.copy(), [np.ones((n, layer.heads)) for layer in layers])


def forward(
    tape: Tape,
    features: np.ndarray,
    g: SampleGraph,
    topo: np.ndarray,
    params: ModelParams,
    ablation: str = "full",
    fusion_mode: str = "additive",
) -> ForwardResult:
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}")
    if fusion_mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {fusion_mode!r}")
    if features.shape[0] != g.n or topo.shape != (g.n, 3):
        raise ConfigError("features, graph and topology disagree on node count")

    h0 = tape.const(features)
    if ablation == "no_graph":
        h = h0
        for layer in params.layers:
            h = dense_forward(tape, h, layer)
        attention = _self_attention(g.n, params.layers)
    else:
        h, attention = stack_layers(tape, h0, g, params.layers, uniform=ablation == "no_attention")

    rules = None
    fused = h
    if ablation != "no_fuzzy":
        strength, weighted = rule_fire(tape, topo, params.rules, params.membership)
        rules = RuleActivation(strength.value, weighted.value)
        if fusion_mode == "scalar-broadcast":
            fused = tape.add(h, tape.sum_cols(weighted))
        else:
            proj = tape.matmul(weighted, tape.param(params.W_r))
            if fusion_mode == "gated":
                gate = tape.sigmoid(
                    tape.add(tape.matmul(weighted, tape.param(params.w_g)), tape.param(params.b_g))
                )
                proj = tape.mul(proj, gate)
            fused = tape.add(h, proj)

    logits = tape.add(tape.matmul(fused, tape.param(params.W_c)), tape.param(params.b_c))
    return ForwardResult(logits, h, fused, attention, rules)


def class_weights(labels, train_mask, num_classes: int, scheme: str) -> np.ndarray:
    if scheme == "none":
        return np.ones(num_classes)
    counts = np.bincount(np.asarray(labels)[train_mask], minlength=num_classes).astype(np.float64)
    present = counts > 0
    inv = np.zeros(num_classes)
    inv[present] = 1.0 / counts[present]
    return inv / inv[present].mean()


def loss(
    tape: Tape,
    logits: Var,
    labels,
    train_mask,
    class_weighting: str = "inverse-frequency",
    num_classes: int | None = None,
) -> Var:
    """Class-weighted cross-entropy over train nodes, normalized by total weight.

    Dividing by the summed sample weights (not the node count) keeps the loss
    of uninformative logits at ln C whatever the class balance.
    """
    train_idx = np.flatnonzero(np.asarray(train_mask, dtype=bool))
    if train_idx.size == 0:
        raise ValueError("train mask is empty")
    labels = np.asarray(labels, dtype=np.int64)
    c = num_classes if num_classes is not None else logits.shape[1]
    weights = class_weights(labels, train_mask, c, class_weighting)

    z = tape.gather_rows(logits, train_idx)
    y = labels[train_idx]
    shift = tape.add(z, tape.const(-z.value.max(axis=1, keepdims=True)))
    lse = tape.log(tape.sum_cols(tape.exp(shift)))
    onehot = np.zeros(z.shape)
    onehot[np.arange(len(y)), y] = 1.0
    picked = tape.sum_cols(tape.mul(shift, tape.const(onehot)))
    nll = tape.add(lse, tape.scale(picked, -1.0))
    coef = tape.const((weights[y] / weights[y].sum())[:, None])
    return tape.sum(tape.mul(nll, coef))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def graph_for(table: FeatureTable, config: TrainConfig) -> SampleGraph:
    if config.ablation == "no_graph":
        return empty_graph(table.n, config.self_loops_in_attention)
    return build_graph(table.features, config.tau, config.self_loops_in_attention)


def graph_fingerprint(g: SampleGraph, config: TrainConfig) -> dict:
    return {"n": g.n, "edges": g.num_edges, "tau": None if config.ablation == "no_graph" else config.tau}


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: TrainConfig
    graph: dict
    history: list[dict]
    num_classes: int
    dim: int
    epoch: int

    def to_dict(self) -> dict:
        return {
            "format": "gafrnet-checkpoint/1",
            "config": self.config.to_dict(),
            "graph": self.graph,
            "num_classes": self.num_classes,
            "dim": self.dim,
            "epoch": self.epoch,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "history": self.history,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        # json writes floats with repr, which round-trips float64 exactly
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("format") != "gafrnet-checkpoint/1":
            raise ValueError(f"{path}: not a gafrnet checkpoint")
        params = {
            k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()
        }
        return cls(
            params=params,
            config=TrainConfig.from_dict(d["config"]),
            graph=d["graph"],
            history=d["history"],
            num_classes=d["num_classes"],
            dim=d["dim"],
            epoch=d["epoch"],
        )

    def model(self) -> ModelParams:
        mp = init_params(self.config, self.dim, self.num_classes)
        mp.load_state(self.params)
        return mp


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: list[dict] = field(default_factory=list)


class Adam:
    def __init__(self, params: list[Param], lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def train(table: FeatureTable, config: TrainConfig, graph: SampleGraph | None = None) -> TrainResult:
    """Full-batch Adam training; keeps the best-validation and the final params."""
    config.validate()
    g = graph if graph is not None else graph_for(table, config)
    topo = topo_features(g, table.labels, table.train_mask)
    params = init_params(config, table.dim, table.num_classes)
    plist = params.all()
    opt = Adam(plist, config.learning_rate, weight_decay=config.weight_decay)
    val = table.mask("val")
    fp = graph_fingerprint(g, config)

    def snapshot(epoch, history):
        return Checkpoint(params.state(), config, fp, [dict(h) for h in history], table.num_classes, table.dim, epoch)

    history: list[dict] = []
    best, best_score, stale = None, -math.inf, 0
    for epoch in range(config.epochs):
        zero_grads(plist)
        tape = Tape()
        try:
            out = forward(tape, table.features, g, topo, params, config.ablation, config.fusion_mode)
            L = loss(tape, out.logits, table.labels, table.train_mask, config.class_weighting, table.num_classes)
        except NumericError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        backward(tape, L)
        opt.step()

        try:
            after = forward(Tape(), table.features, g, topo, params, config.ablation, config.fusion_mode)
        except NumericError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        pred = np.argmax(after.logits.value, axis=1)
        score = balanced_accuracy(pred[val], table.labels[val], table.num_classes) if val.any() else float("nan")
        history.append({"epoch": epoch, "train_loss": float(L.value[0, 0]), "val_balanced_accuracy": score})

        if best is None or score > best_score:
            best, best_score, stale = snapshot(epoch, history), score, 0
        else:
            stale += 1
            if config.early_stop_patience is not None and stale >= config.early_stop_patience:
                break

    final = snapshot(history[-1]["epoch"], history)
    best.history = [dict(h) for h in history]
    return TrainResult(best, final, history)


@dataclass
class Prediction:
    probs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray
    topo: np.ndarray
    graph: SampleGraph
    attention: AttentionRecord
    rules: RuleActivation | None
    params: ModelParams


def predict(checkpoint: Checkpoint, table: FeatureTable) -> Prediction:
    config = checkpoint.config
    if table.dim != checkpoint.dim:
        raise FingerprintMismatch(f"table has {table.dim} features, checkpoint expects {checkpoint.dim}")
    g = graph_for(table, config)
    fp = graph_fingerprint(g, config)
    if fp != checkpoint.graph:
        raise FingerprintMismatch(f"graph {fp} does not match checkpoint graph {checkpoint.graph}")
    topo = topo_features(g, table.labels, table.train_mask)
    params = checkpoint.model()
    out = forward(Tape(), table.features, g, topo, params, config.ablation, config.fusion_mode)
    logits = out.logits.value
    probs = softmax(logits)
    return Prediction(probs, np.argmax(probs, axis=1), logits, topo, g, out.attention, out.rules, params)
