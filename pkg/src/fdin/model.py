"""The interpreter network: shared local-dynamics encoder, pairwise relations,
per-pair relational importance, weighted aggregation and an estimation head.

Parameter names are grouped by sub-network:

* ``phi_D.*`` dense projection + LSTM stack applied to each region sequence
* ``phi_R.*`` relation MLP applied to every object pair
* ``phi_I.*`` one ``(weight row, bias)`` per pair producing importance logits
* ``phi_E.*`` estimation head (dense -> batchnorm -> ReLU -> dropout, ..., output)
* ``regional.*`` per-region logits of the regional-importance baseline
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, real_dtype
from .config import ModelConfig
from .layers import (BatchNorm, DenseLayer, LstmStack, PendingStats, _leaf, batchnorm_forward,
                     dense_forward, dropout_apply, lstm_forward)
from .regions import RegionSpec, enumerate_pairs, grid_spec, partition_batch


@dataclass
class Encoder:
    dense: DenseLayer
    lstm: LstmStack

    def parameters(self):
        yield from self.dense.parameters()
        yield from self.lstm.parameters()


@dataclass
class GraphOutputs:
    """Nodes of one recorded forward pass."""

    output: Node  # regression: [B]; classification: logits [B, K]
    probs: Node | None
    dynamics: Node  # [B, N, D] (holistic: [B, D])
    importance: Node | None  # [B, P]
    regional: Node | None  # [B, N]
    relations: Node | None  # [B, P, R]
    aggregated: Node
    pending: list[PendingStats]


@dataclass
class Prediction:
    """Numpy view of a forward pass.

    ``y`` is ``[B]`` for regression and ``[B, K]`` class probabilities for
    classification; ``importance`` is the per-pair weight snapshot used.
    """

    y: np.ndarray
    importance: np.ndarray | None
    dynamics: np.ndarray
    regional: np.ndarray | None = None

    def point_estimate(self) -> np.ndarray:
        return self.y if self.y.ndim == 1 else self.y.argmax(axis=1)


class InterpreterNetwork:
    fused_lstm = True  # False: unrolled elementary ops (reference path)

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.regions: RegionSpec = grid_spec(c.height, c.width, c.grid_rows, c.grid_cols)
        self.pairs = enumerate_pairs(self.regions.n_regions)
        n = self.regions.n_regions
        if c.baseline == "holistic":
            in_width = c.height * c.width * c.channels
            n_encoders = 1
        else:
            in_width = self.regions.region_width(c.channels)
            n_encoders = 1 if c.share_encoder else n
        self.encoders = []
        for k in range(n_encoders):
            prefix = "phi_D" if n_encoders == 1 else f"phi_D.{k}"
            self.encoders.append(Encoder(
                DenseLayer.init(f"{prefix}.dense", in_width, c.encoder_dense, rng),
                LstmStack.init(f"{prefix}.lstm", c.encoder_dense, list(c.lstm_hidden), rng),
            ))
        d = c.dynamic_width
        self.relation: list[DenseLayer] = []
        self.importance_weight = self.importance_bias = None
        self.regional_weight = self.regional_bias = None
        dt = real_dtype()
        if c.baseline == "none":
            width = 2 * (d + 2) if c.use_locational else 2 * d
            for k, h in enumerate(c.relation_hidden):
                last = k == len(c.relation_hidden) - 1
                self.relation.append(DenseLayer.init(f"phi_R.{k}", width, h, rng,
                                                     activation="none" if last else "relu"))
                width = h
            # zero start: uniform importance over pairs
            self.importance_weight = np.zeros((len(self.pairs), c.relation_width), dtype=dt)
            self.importance_bias = np.zeros(len(self.pairs), dtype=dt)
            head_in = c.relation_width
        elif c.baseline == "regional":
            self.regional_weight = np.zeros((n, d), dtype=dt)
            self.regional_bias = np.zeros(n, dtype=dt)
            head_in = d
        else:
            head_in = d
        self.estimator: list[tuple[DenseLayer, BatchNorm]] = []
        width = head_in
        for k, h in enumerate(c.estimator_hidden):
            # the batchnorm shift makes a dense bias redundant (its gradient is exactly zero)
            self.estimator.append((DenseLayer.init(f"phi_E.{k}", width, h, rng, bias=False),
                                   BatchNorm.init(f"phi_E.bn{k}", h, c.bn_momentum, c.bn_eps)))
            width = h
        self.output = DenseLayer.init("phi_E.out", width, c.n_outputs, rng)

    # -- parameter access --------------------------------------------------

    @property
    def n_regions(self) -> int:
        return self.regions.n_regions

    def parameters(self):
        for enc in self.encoders:
            yield from enc.parameters()
        for layer in self.relation:
            yield from layer.parameters()
        if self.importance_weight is not None:
            yield "phi_I.weight", self.importance_weight
            yield "phi_I.bias", self.importance_bias
        if self.regional_weight is not None:
            yield "regional.weight", self.regional_weight
            yield "regional.bias", self.regional_bias
        for dense, bn in self.estimator:
            yield from dense.parameters()
            yield from bn.parameters()
        yield from self.output.parameters()

    def buffers(self):
        for _, bn in self.estimator:
            yield from bn.buffers()

    def state(self) -> dict[str, np.ndarray]:
        """All parameters and buffers by name (live references)."""
        return dict(list(self.parameters()) + list(self.buffers()))

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state()
        missing = set(own) - set(tensors)
        extra = set(tensors) - set(own)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in own.items():
            if tensors[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {tensors[name].shape} != {arr.shape}")
            arr[...] = tensors[name]

    def n_parameters(self) -> int:
        return sum(a.size for _, a in self.parameters())

    def copy(self) -> "InterpreterNetwork":
        twin = InterpreterNetwork(self.config)
        twin.load_state({k: v.copy() for k, v in self.state().items()})
        return twin

    # -- graph construction -------------------------------------------------

    def _encode_stack(self, g: Graph, enc: Encoder, seqs: np.ndarray) -> Node:
        """``seqs`` is ``[T, M, F]``; returns ``[M, D]`` final hidden states."""
        t, m, f = seqs.shape
        if t < 1:
            raise ValueError("empty sequence")
        x = dense_forward(g, enc.dense, g.const(seqs), width=f)
        return lstm_forward(g, enc.lstm, x, t, m, fused=self.fused_lstm)

    def encode_graph(self, g: Graph, frames: np.ndarray) -> Node:
        """Local dynamic features for a batch of equal-length frame stacks ``[B, T, H, W, C]``."""
        c = self.config
        if frames.ndim != 5:
            raise ValueError(f"expected [B, T, H, W, C] frames, got {frames.shape}")
        b, t = frames.shape[:2]
        if frames.shape[2:] != (c.height, c.width, c.channels):
            raise ValueError(f"frames {frames.shape[2:]} do not match the configured "
                             f"{(c.height, c.width, c.channels)} feature map")
        if c.baseline == "holistic":
            seqs = frames.reshape(b, t, -1).transpose(1, 0, 2)
            return self._encode_stack(g, self.encoders[0], seqs)
        regions = partition_batch(frames, self.regions)  # [B, N, T, F]
        n = regions.shape[1]
        if len(self.encoders) == 1:
            seqs = regions.reshape(b * n, t, -1).transpose(1, 0, 2)
            h = self._encode_stack(g, self.encoders[0], seqs)
            return g.reshape(h, (b, n, c.dynamic_width))
        per_region = []
        for k, enc in enumerate(self.encoders):
            h = self._encode_stack(g, enc, regions[:, k].transpose(1, 0, 2))
            per_region.append(g.reshape(h, (b, 1, c.dynamic_width)))
        return g.concat(per_region, axis=1)

    def objects_graph(self, g: Graph, dyn: Node, batch: int) -> Node:
        if not self.config.use_locational:
            return dyn
        centers = self.regions.centers_array().astype(real_dtype())
        pos = g.const(np.broadcast_to(centers, (batch,) + centers.shape).copy())
        return g.concat([dyn, pos], axis=-1)

    def head_graph(self, g: Graph, dyn: Node, batch: int, training: bool = False,
                   rng: np.random.Generator | None = None) -> GraphOutputs:
        """Everything after the encoder, starting from ``dyn`` (``[B, N, D]``)."""
        c = self.config
        if training and rng is None:
            raise ValueError("training mode needs an RNG for dropout masks")

        def seed() -> int:
            return int(rng.integers(2 ** 31)) if training else 0

        importance = regional = relations = None
        if c.baseline == "holistic":
            agg = dyn
        elif c.baseline == "regional":
            w = _leaf(g, "regional.weight", self.regional_weight)
            b = _leaf(g, "regional.bias", self.regional_bias)
            logits = g.add(g.sum(g.mul(dyn, w), axis=-1), b)
            regional = g.softmax(logits, axis=-1)
            weights = g.reshape(regional, (batch, self.n_regions, 1))
            agg = g.sum(g.mul(weights, dyn), axis=1)
        else:
            objects = self.objects_graph(g, dyn, batch)
            left = np.array([i for i, _ in self.pairs])
            right = np.array([j for _, j in self.pairs])
            s = g.concat([g.slice(objects, (slice(None), left)),
                          g.slice(objects, (slice(None), right))], axis=-1)
            x = s
            for layer in self.relation:
                x = dense_forward(g, layer, x)
                if layer.activation == "relu":
                    x = dropout_apply(g, x, c.dropout, seed(), training)
            relations = x
            w = _leaf(g, "phi_I.weight", self.importance_weight)
            b = _leaf(g, "phi_I.bias", self.importance_bias)
            logits = g.add(g.sum(g.mul(relations, w), axis=-1), b)
            importance = g.softmax(logits, axis=-1)
            if c.use_importance:
                weights = g.reshape(importance, (batch, len(self.pairs), 1))
                agg = g.sum(g.mul(weights, relations), axis=1)
            else:
                agg = g.mean(relations, axis=1)
        pending: list[PendingStats] = []
        x = agg
        for dense, bn in self.estimator:
            x = dense_forward(g, dense, x)
            x = batchnorm_forward(g, bn, x, training, pending)
            x = g.relu(x)
            x = dropout_apply(g, x, c.dropout, seed(), training)
        out = dense_forward(g, self.output, x)
        probs = None
        if c.task == "regression":
            out = g.reshape(out, (batch,))
        else:
            probs = g.softmax(out, axis=-1)
        return GraphOutputs(out, probs, dyn, importance, regional, relations, agg, pending)

    def build(self, g: Graph, frames: np.ndarray, training: bool = False,
              rng: np.random.Generator | None = None) -> GraphOutputs:
        dyn = self.encode_graph(g, frames)
        return self.head_graph(g, dyn, frames.shape[0], training, rng)

    # -- numpy conveniences (inference mode) ---------------------------------

    def _collect(self, g: Graph, nodes: GraphOutputs) -> Prediction:
        g.forward()
        y = g.value(nodes.probs if nodes.probs is not None else nodes.output)
        lam = g.value(nodes.importance) if nodes.importance is not None else None
        reg = g.value(nodes.regional) if nodes.regional is not None else None
        return Prediction(y.copy(), None if lam is None else lam.copy(),
                          g.value(nodes.dynamics).copy(), None if reg is None else reg.copy())

    def predict(self, frames: np.ndarray) -> Prediction:
        """Inference on ``[B, T, H, W, C]`` (or a single ``[T, H, W, C]``) frames."""
        if frames.ndim == 4:
            frames = frames[None]
        g = Graph()
        return self._collect(g, self.build(g, frames))

    def encode(self, frames: np.ndarray) -> np.ndarray:
        if frames.ndim == 4:
            frames = frames[None]
        g = Graph()
        node = self.encode_graph(g, frames)
        return g.forward(node).copy()

    def predict_from_dynamics(self, dyn: np.ndarray) -> Prediction:
        """Run the head on given local dynamic features ``[B, N, D]``."""
        if self.config.baseline == "holistic":
            raise ValueError("the holistic baseline has no per-region dynamic features")
        if dyn.ndim != 3 or dyn.shape[1:] != (self.n_regions, self.config.dynamic_width):
            raise ValueError(f"dynamic features must be [B, {self.n_regions}, "
                             f"{self.config.dynamic_width}], got {dyn.shape}")
        g = Graph()
        nodes = self.head_graph(g, g.const(dyn), dyn.shape[0])
        return self._collect(g, nodes)


# -- standalone stage functions ---------------------------------------------
# Thin numpy wrappers over single stages, mostly for tests and reports.


def build_objects(dyn: list[np.ndarray], spec: RegionSpec, use_locational: bool = True) -> list[np.ndarray]:
    """``o_i = [d_i, p_i, q_i]`` (or ``d_i`` alone without locational features)."""
    if len(dyn) != spec.n_regions:
        raise ValueError(f"{len(dyn)} dynamic features for {spec.n_regions} regions")
    spec.validate()
    if not use_locational:
        return [np.asarray(d, dtype=np.float64) for d in dyn]
    return [np.concatenate([d, c]) for d, c in zip(dyn, spec.centers_array())]


def relation_pairs(objects: list[np.ndarray]) -> list[tuple[int, int, np.ndarray]]:
    return [(i, j, np.concatenate([objects[i], objects[j]])) for i, j in enumerate_pairs(len(objects))]


def importance(relations: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Softmax over per-pair logits ``W_ij . r_ij + b_ij``; ``relations`` is ``[P, R]``."""
    if weight.shape[0] != relations.shape[0] or bias.shape != (relations.shape[0],):
        raise ValueError(f"{relations.shape[0]} relational features but importance parameters "
                         f"for {weight.shape[0]} pairs")
    g = Graph()
    r = g.const(relations)
    logits = g.add(g.sum(g.mul(r, g.const(weight)), axis=-1), g.const(bias))
    return g.forward(g.softmax(logits)).copy()


def aggregate(relations: np.ndarray, lam: np.ndarray | None, use_importance: bool = True) -> np.ndarray:
    """``sum_ij lam_ij r_ij``, or the plain mean over pairs when importance is off."""
    relations = np.asarray(relations, dtype=np.float64)
    if not use_importance:
        return relations.mean(axis=0)
    if lam is None or len(lam) != len(relations):
        raise ValueError("one importance weight per relational feature is required")
    return (np.asarray(lam)[:, None] * relations).sum(axis=0)


def regional_aggregate(dyn: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Regional-importance baseline pooling: ``sum_k w_k d_k`` for weights summing to 1."""
    return (np.asarray(weights)[:, None] * np.asarray(dyn)).sum(axis=0)
