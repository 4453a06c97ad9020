"""Gaussian memberships over topology descriptors and product-t-norm rules.

Rule k fires with ``r_k(u) = prod_j mu_{j, t_jk}(f_uj)``; the rule layer emits
the K-vector of weighted activations ``alpha_k * r_k(u)``.  Its row sum is the
scalar rule activation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Param, Tape, Var

DESCRIPTORS = ("clustering", "degree", "label_agreement")
TERMS = ("LOW", "MEDIUM", "HIGH")
DEFAULT_CENTERS = (0.2, 0.5, 0.8)
DEFAULT_WIDTH = 0.15


def membership(value: float, c: float, s: float) -> float:
    if s <= 0:
        raise ValueError("membership width must be positive")
    return math.exp(-((value - c) ** 2) / (2.0 * s * s))


@dataclass
class MembershipParams:
    centers: Param  # (descriptor, term)
    log_widths: Param

    @classmethod
    def default(cls, prefix: str = "fuzzy") -> "MembershipParams":
        nd, nt = len(DESCRIPTORS), len(TERMS)
        centers = np.tile(np.array(DEFAULT_CENTERS), (nd, 1))
        log_w = np.full((nd, nt), math.log(DEFAULT_WIDTH))
        return cls(Param(f"{prefix}.centers", centers), Param(f"{prefix}.log_widths", log_w))

    @property
    def widths(self) -> np.ndarray:
        return np.exp(self.log_widths.value)


@dataclass
class RuleBase:
    antecedents: list[tuple[int, int, int]]
    alpha: Param  # (1, K)

    @classmethod
    def full_grid(cls, alpha_init: float = 1.0, prefix: str = "fuzzy") -> "RuleBase":
        rules = list(itertools.product(range(len(TERMS)), repeat=len(DESCRIPTORS)))
        return cls(rules, Param(f"{prefix}.alpha", np.full((1, len(rules)), alpha_init)))

    def __post_init__(self):
        if not self.antecedents:
            raise ValueError("a rule base needs at least one rule")
        for rule in self.antecedents:
            if len(rule) != len(DESCRIPTORS) or not all(0 <= t < len(TERMS) for t in rule):
                raise ValueError(f"invalid antecedent {rule}")
        if self.alpha.shape != (1, len(self.antecedents)):
            raise ValueError("need one weight per rule")

    @property
    def size(self) -> int:
        return len(self.antecedents)

    def text(self, k: int) -> str:
        parts = [f"{d} is {TERMS[t]}" for d, t in zip(DESCRIPTORS, self.antecedents[k])]
        return "IF " + " AND ".join(parts)

    def selectors(self) -> list[np.ndarray]:
        """Per descriptor, a (terms x K) one-hot map from term to rule."""
        out = []
        for j in range(len(DESCRIPTORS)):
            sel = np.zeros((len(TERMS), self.size))
            for k, rule in enumerate(self.antecedents):
                sel[rule[j], k] = 1.0
            out.append(sel)
        return out


@dataclass
class RuleActivation:
    strengths: np.ndarray  # r_k(u), (N, K)
    weighted: np.ndarray  # alpha_k * r_k(u), (N, K)

    @property
    def aggregate(self) -> np.ndarray:
        return self.weighted.sum(axis=1)


def rule_fire(
    tape: Tape,
    topo: np.ndarray,
    rb: RuleBase,
    mp: MembershipParams,
) -> tuple[Var, Var]:
    """Taped rule firing.  Returns (r, alpha * r), both N x K."""
    centers = tape.param(mp.centers)
    log_w = tape.param(mp.log_widths)
    alpha = tape.param(rb.alpha)
    topo = np.asarray(topo, dtype=np.float64)
    n, nt = topo.shape[0], len(TERMS)

    strength = None
    for j, sel in enumerate(rb.selectors()):
        f = tape.const(np.repeat(topo[:, j:j + 1], nt, axis=1))
        c = tape.gather_rows(centers, [j])
        diff = tape.add(f, tape.scale(c, -1.0))
        # -1 / (2 s^2) = -0.5 * exp(-2 log s)
        inv = tape.scale(tape.exp(tape.scale(tape.gather_rows(log_w, [j]), -2.0)), -0.5)
        mu = tape.exp(tape.mul(tape.square(diff), inv))
        m = tape.matmul(mu, tape.const(sel))
        strength = m if strength is None else tape.mul(strength, m)
    return strength, tape.mul(strength, alpha)


def fire(topo: np.ndarray, rb: RuleBase, mp: MembershipParams) -> RuleActivation:
    tape = Tape()
    r, w = rule_fire(tape, topo, rb, mp)
    return RuleActivation(r.value, w.value)


def export_rules(
    rb: RuleBase,
    mp: MembershipParams,
    activations: RuleActivation,
    top_k: int = 3,
    train_mask=None,
    node_ids=None,
) -> dict:
    """Human-readable rule inventory plus each node's strongest rules."""
    k_total = rb.size
    top_k = max(0, min(int(top_k), k_total))
    mask = np.ones(activations.strengths.shape[0], dtype=bool) if train_mask is None else np.asarray(train_mask, bool)
    mean_act = activations.strengths[mask].mean(axis=0) if mask.any() else np.zeros(k_total)
    widths = mp.widths
    rules = []
    for k, ante in enumerate(rb.antecedents):
        rules.append({
            "rule_id": k,
            "antecedent": rb.text(k),
            "alpha": float(rb.alpha.value[0, k]),
            "centers": [float(mp.centers.value[j, t]) for j, t in enumerate(ante)],
            "widths": [float(widths[j, t]) for j, t in enumerate(ante)],
            "mean_activation": float(mean_act[k]),
        })
    nodes = []
    ids = node_ids if node_ids is not None else list(range(activations.weighted.shape[0]))
    for u, nid in enumerate(ids):
        nodes.append({"node": nid, "top_rules": top_rules(rb, activations, u, top_k)})
    return {"rules": rules, "nodes": nodes}


def top_rules(rb: RuleBase, activations: RuleActivation, u: int, top_k: int) -> list[dict]:
    w = activations.weighted[u]
    # descending strength, ties by rule index
    order = sorted(range(rb.size), key=lambda k: (-w[k], k))[:top_k]
    return [
        {
            "rule_id": k,
            "antecedent": rb.text(k),
            "activation": float(activations.strengths[u, k]),
            "strength": float(w[k]),
        }
        for k in order
    ]

