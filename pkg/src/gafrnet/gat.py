"""Multi-head graph attention layers recorded on a Tape."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, Param, Tape, Var
from .simgraph import SampleGraph

COMBINE_MODES = ("concat", "mean")


@dataclass
class GatLayerParams:
    W: list[Param]
    a: list[Param]
    combine: str = "mean"
    negative_slope: float = 0.2

    def __post_init__(self):
        if not self.W or len(self.W) != len(self.a):
            raise ValueError("need one projection and one attention vector per head")
        if self.combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}")
        d_in, d_head = self.W[0].shape
        for W, a in zip(self.W, self.a):
            if W.shape != (d_in, d_head) or a.shape != (2 * d_head, 1):
                raise DimensionError("heads disagree on projection or attention shapes")

    @property
    def heads(self) -> int:
        return len(self.W)

    @property
    def d_in(self) -> int:
        return self.W[0].shape[0]

    @property
    def d_head(self) -> int:
        return self.W[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.heads * self.d_head if self.combine == "concat" else self.d_head

    def params(self) -> list[Param]:
        return [p for pair in zip(self.W, self.a) for p in pair]


def glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_layer(
    rng: np.random.Generator,
    d_in: int,
    d_head: int,
    heads: int,
    combine: str,
    prefix: str,
    negative_slope: float = 0.2,
) -> GatLayerParams:
    W = [Param(f"{prefix}.h{h}.W", glorot(rng, (d_in, d_head))) for h in range(heads)]
    a = [Param(f"{prefix}.h{h}.a", glorot(rng, (2 * d_head, 1))) for h in range(heads)]
    return GatLayerParams(W, a, combine, negative_slope)


@dataclass
class AttentionRecord:
    """Coefficients per layer and head, aligned with ``(dst, src)`` pairs."""

    dst: np.ndarray
    src: np.ndarray
    layers: list[np.ndarray] = field(default_factory=list)  # each (E, heads)

    def neighborhood(self, u: int, layer: int = -1) -> tuple[np.ndarray, np.ndarray]:
        """(neighbor ids, coefficients E_u x heads) for node u."""
        sel = self.dst == u
        return self.src[sel], self.layers[layer][sel]


def _combine(tape: Tape, outs: list[Var], mode: str) -> Var:
    if len(outs) == 1:
        return outs[0]
    if mode == "concat":
        return tape.concat_cols(outs)
    total = outs[0]
    for o in outs[1:]:
        total = tape.add(total, o)
    return tape.scale(total, 1.0 / len(outs))


def gat_forward(
    tape: Tape,
    h: Var,
    g: SampleGraph,
    layer: GatLayerParams,
    uniform: bool = False,
    pairs: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Var, np.ndarray]:
    """One attention layer.  Returns the output and the (E, heads) coefficients.

    With ``uniform`` the attention vectors are ignored and every neighborhood
    is weighted evenly.
    """
    if h.shape != (g.n, layer.d_in):
        raise DimensionError(f"gat_forward: input {h.shape}, expected ({g.n}, {layer.d_in})")
    dst, src = pairs if pairs is not None else g.attention_pairs()
    d = layer.d_head
    first, second = np.arange(d), np.arange(d, 2 * d)
    if uniform:
        counts = np.bincount(dst, minlength=g.n).astype(np.float64)
        alpha_const = tape.const((1.0 / counts[dst])[:, None])

    outs, coefs = [], []
    for W, a in zip(layer.W, layer.a):
        z = tape.matmul(h, tape.param(W))
        if uniform:
            alpha = alpha_const
        else:
            av = tape.param(a)
            s_dst = tape.matmul(z, tape.gather_rows(av, first))
            s_src = tape.matmul(z, tape.gather_rows(av, second))
            e = tape.add(tape.gather_rows(s_dst, dst), tape.gather_rows(s_src, src))
            e = tape.leaky_relu(e, layer.negative_slope)
            alpha = tape.softmax_groups(e, dst, g.n)
        msg = tape.mul(tape.gather_rows(z, src), alpha)
        outs.append(tape.elu(tape.scatter_sum_rows(msg, dst, g.n)))
        coefs.append(alpha.value[:, 0])
    return _combine(tape, outs, layer.combine), np.stack(coefs, axis=1)


def dense_forward(tape: Tape, h: Var, layer: GatLayerParams) -> Var:
    """The layer with every node attending only to itself: ELU(h W) per head."""
    if h.shape[1] != layer.d_in:
        raise DimensionError(f"dense_forward: input width {h.shape[1]}, expected {layer.d_in}")
    outs = [tape.elu(tape.matmul(h, tape.param(W))) for W in layer.W]
    return _combine(tape, outs, layer.combine)


def stack_layers(
    tape: Tape,
    h0: Var,
    g: SampleGraph,
    layers: list[GatLayerParams],
    uniform: bool = False,
) -> tuple[Var, AttentionRecord]:
    dst, src = g.attention_pairs()
    record = AttentionRecord(dst, src)
    h = h0
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.d_in:
            raise DimensionError(f"layer {i} expects width {layer.d_in}, got {h.shape[1]}")
        h, coef = gat_forward(tape, h, g, layer, uniform, (dst, src))
        record.layers.append(coef)
    return h, record

