"""Cell-feature graph convolution: coupled layers, decoupled propagation,
and the learned layer readout.

Coupled mode records everything on a Tape (messages in both directions,
residual updates, optional pathway channel). Decoupled mode precomputes
parameter-free propagation once and trains only a shared 2-layer MLP plus
the readout weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore, Tape, glorot_uniform
from .graph import CellFeatureGraph, EdgeScaling, NodeEmbeddings
from .linalg import spmm, standardize_rows

TASK_LAYER_COUNTS = {"predict": 4, "match": 3, "embed": 2}


def default_layer_count(task: str) -> int:
    return TASK_LAYER_COUNTS[task]


@dataclass
class ConvConfig:
    """Architecture knobs shared by the three task heads."""

    n_layers: int = 2
    hidden_dim: int = 48
    residual_mode: str = "initial"  # "initial" or "skip"
    aggregation_norm: EdgeScaling = EdgeScaling.POST_NORM
    alpha: float | str = 0.5  # in [0, 1], or "learnable"
    use_pathway_channel: bool = False
    dropout_rate: float = 0.2
    n_groups: int = 1
    decoupled: bool = False

    def validate(self):
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.residual_mode not in ("initial", "skip"):
            raise ValueError(f"unknown residual_mode {self.residual_mode!r}")
        if self.alpha != "learnable" and not 0.0 <= float(self.alpha) <= 1.0:
            raise ValueError("alpha must be in [0, 1] or 'learnable'")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.hidden_dim % self.n_groups:
            raise ValueError("n_groups must divide hidden_dim")


@dataclass
class LayerTrace:
    """Per-layer cell/feature state handles recorded during a forward pass."""

    cell_states: list[int] = field(default_factory=list)
    feature_states: list[int] = field(default_factory=list)


def init_params(g: CellFeatureGraph, x: NodeEmbeddings, cfg: ConvConfig,
                store: ParamStore, seed: int, prefix: str = ""):
    """Register every parameter the (coupled) forward pass will read."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.hidden_dim
    p = prefix
    store.register(p + "in.cell.w", glorot_uniform(rng, x.cell_embed.shape[1], d))
    store.register(p + "in.cell.b", np.zeros((1, d)))
    store.register(p + "in.feat.w",
                   glorot_uniform(rng, x.feature_embed.shape[1], d))
    store.register(p + "in.feat.b", np.zeros((1, d)))
    for layer in range(1, cfg.n_layers + 1):
        channels = ["uv", "vu"] + (["vv"] if cfg.use_pathway_channel else [])
        for ch in channels:
            store.register(f"{p}l{layer}.{ch}.w", glorot_uniform(rng, d, d))
            store.register(f"{p}l{layer}.{ch}.b", np.zeros((1, d)))
            if cfg.aggregation_norm is EdgeScaling.POST_NORM:
                store.register(f"{p}l{layer}.{ch}.gn.g", np.ones((1, d)))
                store.register(f"{p}l{layer}.{ch}.gn.b", np.zeros((1, d)))
    if cfg.n_layers > 0:
        store.register(p + "readout.w",
                       np.full(cfg.n_layers, 1.0 / cfg.n_layers))
    if cfg.use_pathway_channel and cfg.alpha == "learnable":
        store.register(p + "alpha", np.array([[0.5]]))


def init_decoupled_params(n_input_features: int, cfg: ConvConfig,
                          store: ParamStore, seed: int, prefix: str = ""):
    """Register the shared MLP and readout weights for decoupled mode."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.hidden_dim
    p = prefix
    store.register(p + "dec.w1", glorot_uniform(rng, n_input_features, d))
    store.register(p + "dec.b1", np.zeros((1, d)))
    store.register(p + "dec.w2", glorot_uniform(rng, d, d))
    store.register(p + "dec.b2", np.zeros((1, d)))
    n_states = cfg.n_layers + 1  # raw input plus one state per round trip
    store.register(p + "readout.w", np.full(n_states, 1.0 / n_states))


def input_transform(tape: Tape, x: NodeEmbeddings, prefix: str = ""):
    """H1 = relu(X W + b), separately per node type."""
    p = prefix
    cell = tape.relu(
        tape.add(tape.matmul(tape.constant(x.cell_embed),
                             tape.param(p + "in.cell.w")),
                 tape.param(p + "in.cell.b"))
    )
    feat_in = (tape.param(x.feature_param) if x.feature_param
               else tape.constant(x.feature_embed))
    feat = tape.relu(
        tape.add(tape.matmul(feat_in, tape.param(p + "in.feat.w")),
                 tape.param(p + "in.feat.b"))
    )
    return cell, feat


def _message(tape: Tape, operator, h_source: int, layer: int, channel: str,
             cfg: ConvConfig, prefix: str = "") -> int:
    """sigma(b + aggregated neighbors @ W), group-normalized in POST_NORM."""
    p = f"{prefix}l{layer}.{channel}"
    agg = tape.spmm_const(operator, h_source)
    msg = tape.relu(tape.add(tape.matmul(agg, tape.param(p + ".w")),
                             tape.param(p + ".b")))
    if cfg.aggregation_norm is EdgeScaling.POST_NORM:
        msg = tape.group_norm(msg, tape.param(p + ".gn.g"),
                              tape.param(p + ".gn.b"), n_groups=cfg.n_groups)
    return msg


def conv_layer(tape: Tape, operators, h_cell: int, h_feat: int, layer: int,
               cfg: ConvConfig, h0_cell: int, h0_feat: int,
               prefix: str = ""):
    """One coupled layer: bidirectional messages plus residual updates.

    operators is the (cells_from_features, features_from_cells,
    features_from_features) triple from CellFeatureGraph.operators().
    """
    cells_from_features, features_from_cells, features_from_features = operators
    m_uv = _message(tape, features_from_cells, h_cell, layer, "uv", cfg, prefix)
    m_vu = _message(tape, cells_from_features, h_feat, layer, "vu", cfg, prefix)
    cell_base = h0_cell if cfg.residual_mode == "initial" else h_cell
    feat_base = h0_feat if cfg.residual_mode == "initial" else h_feat
    if cfg.use_pathway_channel:
        if features_from_features is None:
            raise ValueError("pathway channel requested but the graph has no "
                             "feature-feature edges")
        m_vv = _message(tape, features_from_features, h_feat, layer, "vv",
                        cfg, prefix)
        if cfg.alpha == "learnable":
            mixed = tape.scalar_mix([m_vv, m_uv],
                                    tape.param(prefix + "alpha"), tied=True)
        else:
            a = float(cfg.alpha)
            mixed = tape.scalar_mix([m_vv, m_uv], np.array([a, 1.0 - a]))
        new_feat = tape.add(feat_base, mixed)
    else:
        new_feat = tape.add(feat_base, m_uv)
    new_cell = tape.add(cell_base, m_vu)
    if cfg.dropout_rate > 0:
        new_cell = tape.dropout(new_cell, cfg.dropout_rate)
        new_feat = tape.dropout(new_feat, cfg.dropout_rate)
    return new_cell, new_feat


def readout(tape: Tape, trace: LayerTrace, prefix: str = "") -> int:
    """Learned weighted sum of per-layer cell states (Eq. 13-style)."""
    if not trace.cell_states:
        raise ValueError("readout needs a nonempty trace")
    return tape.scalar_mix(trace.cell_states, tape.param(prefix + "readout.w"))


def decoupled_propagate(g: CellFeatureGraph, x_cell: np.ndarray,
                        n_steps: int) -> list[np.ndarray]:
    """Parameter-free alternating propagation; one entry per round trip.

    Cell states go to the feature side through the transposed operator and
    back. POST_NORM standardizes each hop's aggregation result in place of
    edge normalization. Pure function of (graph, x), so it is precomputed
    once per training run.
    """
    x = np.asarray(x_cell, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != g.n_cells:
        raise ValueError(f"x_cell must be (n_cells, f), got {x.shape}")
    cells_from_features, features_from_cells, _ = g.operators()
    post = g.normalization_mode is EdgeScaling.POST_NORM
    states = []
    current = x
    for _ in range(n_steps):
        feat = spmm(features_from_cells, current)
        if post:
            feat = standardize_rows(feat)
        current = spmm(cells_from_features, feat)
        if post:
            current = standardize_rows(current)
        states.append(current)
    return states


def decoupled_forward(tape: Tape, states: list[np.ndarray], cfg: ConvConfig,
                      prefix: str = "") -> int:
    """Shared 2-layer MLP over each propagated state, then the readout mix.

    states must include the raw input as its first entry.
    """
    p = prefix
    transformed = []
    for s in states:
        hidden = tape.relu(
            tape.add(tape.matmul(tape.constant(s), tape.param(p + "dec.w1")),
                     tape.param(p + "dec.b1"))
        )
        if cfg.dropout_rate > 0:
            hidden = tape.dropout(hidden, cfg.dropout_rate)
        transformed.append(
            tape.add(tape.matmul(hidden, tape.param(p + "dec.w2")),
                     tape.param(p + "dec.b2"))
        )
    return tape.scalar_mix(transformed, tape.param(p + "readout.w"))


def forward_with_trace(tape: Tape, g: CellFeatureGraph, x: NodeEmbeddings,
                       cfg: ConvConfig, prefix: str = ""):
    """Coupled forward pass; returns (cell representation handle, trace)."""
    operators = g.operators()
    h_cell, h_feat = input_transform(tape, x, prefix)
    h0_cell, h0_feat = h_cell, h_feat
    if cfg.dropout_rate > 0:
        h_cell = tape.dropout(h_cell, cfg.dropout_rate)
        h_feat = tape.dropout(h_feat, cfg.dropout_rate)
    trace = LayerTrace()
    for layer in range(1, cfg.n_layers + 1):
        h_cell, h_feat = conv_layer(tape, operators, h_cell, h_feat, layer,
                                    cfg, h0_cell, h0_feat, prefix)
        trace.cell_states.append(h_cell)
        trace.feature_states.append(h_feat)
    return readout(tape, trace, prefix), trace


def forward(tape: Tape, g: CellFeatureGraph, x: NodeEmbeddings,
            cfg: ConvConfig, prefix: str = "",
            propagated: list[np.ndarray] | None = None) -> int:
    """Cell representation H-hat for either mode.

    Decoupled mode propagates x.cell_embed (pass `propagated` to reuse a
    precomputed list; its first entry must be the raw input).
    """
    if not cfg.decoupled:
        out, _ = forward_with_trace(tape, g, x, cfg, prefix)
        return out
    if propagated is None:
        propagated = [x.cell_embed] + decoupled_propagate(
            g, x.cell_embed, cfg.n_layers
        )
    return decoupled_forward(tape, propagated, cfg, prefix)
