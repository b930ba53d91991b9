"""Gated graph recursive network over complete directed molecular graphs.

Per recursion step, every ordered atom pair (receiver, sender) contributes a
gated message built from the pair's input embeddings, current hidden
vectors, the molecule-size embedding, and the reciprocal pair distance; the
receiver's next hidden vector is the message sum divided by the atom count.
One weight set is shared across all steps, and the input embeddings re-enter
the message at every step. The readout averages the final hidden vectors and
applies a three-layer ReLU MLP down to a scalar.

The forward pass is vectorized: all ordered pairs of a molecule are stacked
as columns of a single matrix, so each step costs two matrix products plus
the gating elementwise ops. Constant per-molecule structure (selector
matrices, the distance row) is precomputed once in
:class:`MoleculeEncoding` and reused across steps and calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor, _stable_sigmoid
from .data import Molecule, inverse_distance_matrix
from .errors import ConfigError, VocabularyError

__all__ = [
    "ModelConfig",
    "ModelParams",
    "MoleculeEncoding",
    "init_params",
    "pair_message",
    "step",
    "readout",
    "forward",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes and feature switches.

    Switching a feature off replaces its input block with zeros of the same
    length, so every ablation variant has identical parameter shapes.
    """

    atom_dim: int = 50
    count_dim: int = 50
    hidden_dim: int = 100
    mlp_dim: int = 100
    steps: int = 5
    use_atom_embedding: bool = True
    use_count_feature: bool = True
    use_distance_feature: bool = True
    distance_epsilon: float = 1e-6

    def __post_init__(self):
        for name in ("atom_dim", "count_dim", "hidden_dim", "mlp_dim", "steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.distance_epsilon <= 0:
            raise ConfigError(f"model.distance_epsilon must be > 0, got {self.distance_epsilon}")

    @property
    def concat_dim(self) -> int:
        """Row count of the per-pair message input: two embeddings, two hidden
        vectors, the count embedding, and the scalar distance feature."""
        return 2 * self.atom_dim + 2 * self.hidden_dim + self.count_dim + 1


@dataclass
class ModelParams:
    """All trainable tensors. One gate/candidate weight set exists regardless
    of the number of recursion steps."""

    atom_embedding: Tensor      # [vocab, atom_dim]
    count_embedding: Tensor     # [max_atom_count, count_dim]
    gate_weight: Tensor         # [hidden, concat_dim]
    gate_bias: Tensor           # [hidden, 1]
    candidate_weight: Tensor
    candidate_bias: Tensor
    mlp: list[tuple[Tensor, Tensor]] = field(default_factory=list)  # [(W, b)] x 3

    def named(self) -> list[tuple[str, Tensor]]:
        pairs = [("atom_embedding", self.atom_embedding),
                 ("count_embedding", self.count_embedding),
                 ("gate_weight", self.gate_weight),
                 ("gate_bias", self.gate_bias),
                 ("candidate_weight", self.candidate_weight),
                 ("candidate_bias", self.candidate_bias)]
        for i, (w, b) in enumerate(self.mlp):
            pairs.append((f"readout_w{i}", w))
            pairs.append((f"readout_b{i}", b))
        return pairs

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def parameter_count(self) -> int:
        return sum(t.values.size for t in self.tensors())

    @property
    def vocab_size(self) -> int:
        return self.atom_embedding.rows

    @property
    def max_atom_count(self) -> int:
        return self.count_embedding.rows

    def copy(self) -> "ModelParams":
        def dup(t: Tensor) -> Tensor:
            return ad.parameter(t.values.copy(), t.name)
        return ModelParams(atom_embedding=dup(self.atom_embedding),
                           count_embedding=dup(self.count_embedding),
                           gate_weight=dup(self.gate_weight),
                           gate_bias=dup(self.gate_bias),
                           candidate_weight=dup(self.candidate_weight),
                           candidate_bias=dup(self.candidate_bias),
                           mlp=[(dup(w), dup(b)) for w, b in self.mlp])


def _uniform_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(cfg: ModelConfig, vocab_size: int, max_atom_count: int, seed: int) -> ModelParams:
    """Seed-deterministic fan-scaled uniform weights; biases start at zero.

    The draw order is fixed (embeddings, gate, candidate, readout), so a
    given seed always yields bit-identical parameters.
    """
    if vocab_size < 1 or max_atom_count < 1:
        raise ConfigError(f"vocab_size and max_atom_count must be >= 1, "
                          f"got {vocab_size} and {max_atom_count}")
    rng = np.random.default_rng(seed)
    d_in = cfg.concat_dim

    def weight(name, rows, cols):
        return ad.parameter(_uniform_init(rng, rows, cols), name)

    def zero_bias(name, rows):
        return ad.parameter(np.zeros((rows, 1)), name)

    atom_emb = weight("atom_embedding", vocab_size, cfg.atom_dim)
    count_emb = weight("count_embedding", max_atom_count, cfg.count_dim)
    gate_w = weight("gate_weight", cfg.hidden_dim, d_in)
    cand_w = weight("candidate_weight", cfg.hidden_dim, d_in)
    mlp_sizes = [(cfg.mlp_dim, cfg.hidden_dim), (cfg.mlp_dim, cfg.mlp_dim), (1, cfg.mlp_dim)]
    mlp = [(weight(f"readout_w{i}", r, c), zero_bias(f"readout_b{i}", r))
           for i, (r, c) in enumerate(mlp_sizes)]
    return ModelParams(atom_embedding=atom_emb,
                       count_embedding=count_emb,
                       gate_weight=gate_w,
                       gate_bias=zero_bias("gate_bias", cfg.hidden_dim),
                       candidate_weight=cand_w,
                       candidate_bias=zero_bias("candidate_bias", cfg.hidden_dim),
                       mlp=mlp)


def element_indices(symbols: Sequence[str], vocabulary: Sequence[str]) -> list[int]:
    index = {sym: i for i, sym in enumerate(vocabulary)}
    out = []
    for sym in symbols:
        if sym not in index:
            raise VocabularyError(f"element '{sym}' not in vocabulary {list(vocabulary)}")
        out.append(index[sym])
    return out


class MoleculeEncoding:
    """Constant per-molecule structure shared by every step and every call.

    Ordered pairs are enumerated receiver-major with ascending indices:
    (0,1), (0,2), ..., (1,0), (1,2), ... so message summation order is
    deterministic. For a single-atom molecule there are no pairs and the
    hidden state stays at its zero initialization.
    """

    def __init__(self, molecule: Molecule, vocabulary: Sequence[str], cfg: ModelConfig):
        n = molecule.natoms
        self.n = n
        self.pair_count = n * (n - 1)
        idx = element_indices(molecule.symbols, vocabulary)
        onehot = np.zeros((len(vocabulary), n))
        onehot[idx, np.arange(n)] = 1.0
        self.element_onehot = ad.constant(onehot, "element_onehot")
        self.ones_atoms = ad.constant(np.ones((n, 1)), "ones_atoms")

        if self.pair_count == 0:
            self.receivers = self.senders = np.empty(0, dtype=int)
            self.receiver_select = self.sender_select = self.receiver_scatter = None
            self.dist_row = None
            self.ones_pairs = None
            return

        pairs = [(v, w) for v in range(n) for w in range(n) if w != v]
        self.receivers = np.array([v for v, _ in pairs])
        self.senders = np.array([w for _, w in pairs])
        p = self.pair_count
        rsel = np.zeros((n, p))
        rsel[self.receivers, np.arange(p)] = 1.0
        ssel = np.zeros((n, p))
        ssel[self.senders, np.arange(p)] = 1.0
        self.receiver_select = ad.constant(rsel, "receiver_select")
        self.sender_select = ad.constant(ssel, "sender_select")
        self.receiver_scatter = ad.constant(rsel.T.copy(), "receiver_scatter")
        self.ones_pairs = ad.constant(np.ones((1, p)), "ones_pairs")

        if cfg.use_distance_feature:
            inv = inverse_distance_matrix(molecule.coords, cfg.distance_epsilon)
            dist = inv[self.receivers, self.senders].reshape(1, p)
        else:
            dist = np.zeros((1, p))
        self.dist_row = ad.constant(dist, "inverse_distances")


def pair_message(params: ModelParams, xv, hv, xw, hw, xn, dvw: float) -> np.ndarray:
    """One ordered pair's message, straight from its definition.

    ``sigmoid(gate) * tanh(candidate)`` where gate and candidate are affine
    maps of the concatenated (receiver embedding, receiver hidden, sender
    embedding, sender hidden, count embedding, distance) vector. Pure numpy;
    used as the pairwise reference for the vectorized step and by callers
    that want single messages without a graph.
    """
    inp = np.concatenate([np.ravel(xv), np.ravel(hv), np.ravel(xw), np.ravel(hw),
                          np.ravel(xn), [float(dvw)]]).reshape(-1, 1)
    gate = params.gate_weight.values @ inp + params.gate_bias.values
    cand = params.candidate_weight.values @ inp + params.candidate_bias.values
    return (_stable_sigmoid(gate) * np.tanh(cand)).ravel()


class _InputBlocks:
    """Step-invariant rows of the pair input matrix (embeddings, count, distance)."""

    def __init__(self, graph: Graph | None, enc: MoleculeEncoding, params: ModelParams,
                 cfg: ModelConfig):
        p = enc.pair_count
        if cfg.use_atom_embedding:
            x = ad.matmul(graph, ad.transpose(graph, params.atom_embedding), enc.element_onehot)
            self.receiver_embed = ad.matmul(graph, x, enc.receiver_select)
            self.sender_embed = ad.matmul(graph, x, enc.sender_select)
        else:
            self.receiver_embed = ad.constant(np.zeros((cfg.atom_dim, p)))
            self.sender_embed = ad.constant(np.zeros((cfg.atom_dim, p)))
        if cfg.use_count_feature:
            row = min(enc.n, params.max_atom_count) - 1
            col = ad.transpose(graph, ad.slice_rows(graph, params.count_embedding, row, row + 1))
            self.count_block = ad.matmul(graph, col, enc.ones_pairs)
        else:
            self.count_block = ad.constant(np.zeros((cfg.count_dim, p)))
        if cfg.use_distance_feature:
            self.dist_block = enc.dist_row
        else:
            self.dist_block = ad.constant(np.zeros((1, p)))


def _run_step(graph: Graph | None, state: Tensor, blocks: _InputBlocks,
              enc: MoleculeEncoding, params: ModelParams) -> tuple[Tensor, Tensor]:
    hv = ad.matmul(graph, state, enc.receiver_select)
    hw = ad.matmul(graph, state, enc.sender_select)
    inp = ad.concat_rows(graph, (blocks.receiver_embed, hv, blocks.sender_embed, hw,
                                 blocks.count_block, blocks.dist_block))
    gate = ad.sigmoid(graph, ad.linear(graph, params.gate_weight, params.gate_bias, inp))
    cand = ad.tanh(graph, ad.linear(graph, params.candidate_weight, params.candidate_bias, inp))
    messages = ad.hadamard(graph, gate, cand)
    summed = ad.matmul(graph, messages, enc.receiver_scatter)
    return ad.scale(graph, summed, 1.0 / enc.n), inp


def step(graph: Graph | None, state: Tensor, molecule: Molecule, params: ModelParams,
         cfg: ModelConfig, vocabulary: Sequence[str],
         encoding: MoleculeEncoding | None = None) -> Tensor:
    """One recursion step: next hidden state [hidden, N] from the current one."""
    enc = encoding or MoleculeEncoding(molecule, vocabulary, cfg)
    if enc.pair_count == 0:
        return ad.constant(np.zeros((cfg.hidden_dim, 1)))
    blocks = _InputBlocks(graph, enc, params, cfg)
    next_state, _ = _run_step(graph, state, blocks, enc, params)
    return next_state


def readout(graph: Graph | None, state: Tensor, params: ModelParams) -> Tensor:
    """Mean hidden vector through the three-layer ReLU MLP; returns [1, 1]."""
    n = state.cols
    mean = ad.scale(graph, ad.matmul(graph, state, ad.constant(np.ones((n, 1)))), 1.0 / n)
    (w0, b0), (w1, b1), (w2, b2) = params.mlp
    hidden1 = ad.relu(graph, ad.linear(graph, w0, b0, mean))
    hidden2 = ad.relu(graph, ad.linear(graph, w1, b1, hidden1))
    return ad.linear(graph, w2, b2, hidden2)


def forward(graph: Graph | None, molecule: Molecule, params: ModelParams, cfg: ModelConfig,
            vocabulary: Sequence[str], encoding: MoleculeEncoding | None = None,
            trace: list | None = None) -> Tensor:
    """Full prediction for one molecule, in normalized target space.

    Hidden states start at zero. ``trace``, when given, collects a copy of
    the per-pair input matrix of every step (for inspection/testing).
    """
    enc = encoding or MoleculeEncoding(molecule, vocabulary, cfg)
    if enc.pair_count == 0:
        return readout(graph, ad.constant(np.zeros((cfg.hidden_dim, 1))), params)
    blocks = _InputBlocks(graph, enc, params, cfg)
    state = ad.constant(np.zeros((cfg.hidden_dim, enc.n)))
    for _ in range(cfg.steps):
        state, inp = _run_step(graph, state, blocks, enc, params)
        if trace is not None:
            trace.append(inp.values.copy())
    return readout(graph, state, params)
