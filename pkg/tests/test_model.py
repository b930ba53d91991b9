import itertools
import math

import numpy as np
import pytest

import ggrnet.autodiff as ad
from ggrnet.data import Molecule
from ggrnet.errors import ConfigError, VocabularyError
from ggrnet.gradcheck import gradient_check
from ggrnet.model import (
    ModelConfig,
    MoleculeEncoding,
    forward,
    init_params,
    pair_message,
    readout,
    step,
)
from ggrnet.synth import random_molecule, random_molecules
from oracle import straightline_forward

VOCAB = ("H", "C", "N", "O")
SMALL = ModelConfig(atom_dim=3, count_dim=2, hidden_dim=4, mlp_dim=5, steps=3)


def small_params(seed=0, max_atoms=8):
    return init_params(SMALL, len(VOCAB), max_atoms, seed)


def permuted(mol, perm):
    return Molecule(mol.mol_id, tuple(mol.symbols[i] for i in perm),
                    mol.coords[list(perm)], mol.targets)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


# ---------------------------------------------------------------------------
# configuration and initialization


def test_config_concat_dim():
    assert ModelConfig().concat_dim == 351
    assert SMALL.concat_dim == 2 * 3 + 2 * 4 + 2 + 1


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(steps=0)
    with pytest.raises(ConfigError):
        ModelConfig(hidden_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(distance_epsilon=0.0)


def test_init_deterministic():
    a = init_params(SMALL, 4, 8, seed=5)
    b = init_params(SMALL, 4, 8, seed=5)
    for (name_a, ta), (name_b, tb) in zip(a.named(), b.named()):
        assert name_a == name_b
        assert np.array_equal(ta.values, tb.values)
    c = init_params(SMALL, 4, 8, seed=6)
    assert not np.array_equal(a.gate_weight.values, c.gate_weight.values)


def test_parameter_count_closed_form():
    # defaults with vocab 5 and max atom count 30, counted from first principles
    cfg = ModelConfig()
    params = init_params(cfg, 5, 30, seed=0)
    d_in = 2 * 50 + 2 * 100 + 50 + 1
    expected = (5 * 50                       # atom embeddings
                + 30 * 50                    # count embeddings
                + 2 * (100 * d_in + 100)     # gate + candidate affine maps
                + (100 * 100 + 100)          # readout layer 1
                + (100 * 100 + 100)          # readout layer 2
                + (1 * 100 + 1))             # readout output layer
    assert params.parameter_count() == expected


def test_parameter_count_independent_of_steps():
    shallow = init_params(ModelConfig(steps=5), 4, 10, seed=0)
    deep = init_params(ModelConfig(steps=50), 4, 10, seed=0)
    assert shallow.parameter_count() == deep.parameter_count()
    assert [(n, t.shape) for n, t in shallow.named()] == \
           [(n, t.shape) for n, t in deep.named()]


def test_biases_start_zero():
    params = small_params()
    assert np.array_equal(params.gate_bias.values, np.zeros((SMALL.hidden_dim, 1)))
    for _, b in params.mlp:
        assert not b.values.any()


# ---------------------------------------------------------------------------
# pair message


def test_message_zero_params_gives_zeros():
    params = small_params()
    for _, t in params.named():
        t.values[:] = 0.0
    out = pair_message(params, np.ones(3), np.ones(4), np.ones(3), np.ones(4),
                       np.ones(2), 0.5)
    assert np.array_equal(out, np.zeros(4))


def test_message_zero_candidate_annihilates():
    params = small_params(seed=3)
    params.candidate_weight.values[:] = 0.0
    params.candidate_bias.values[:] = 0.0
    rng = np.random.default_rng(0)
    out = pair_message(params, rng.normal(size=3), rng.normal(size=4),
                       rng.normal(size=3), rng.normal(size=4), rng.normal(size=2), 1.3)
    assert np.array_equal(out, np.zeros(4))


def test_message_scalar_hand_case():
    # one-dimensional everything, unit weights, zero biases:
    # both affine outputs equal the input sum 1+0+1+0+1+0.5 = 3.5
    cfg = ModelConfig(atom_dim=1, count_dim=1, hidden_dim=1, mlp_dim=1, steps=1)
    params = init_params(cfg, 2, 4, seed=0)
    params.gate_weight.values[:] = 1.0
    params.candidate_weight.values[:] = 1.0
    out = pair_message(params, [1.0], [0.0], [1.0], [0.0], [1.0], 0.5)
    expected = (1.0 / (1.0 + math.exp(-3.5))) * math.tanh(3.5)
    assert out[0] == pytest.approx(expected, abs=1e-15)


def test_message_is_directed():
    params = small_params(seed=7)
    rng = np.random.default_rng(1)
    xv, xw = rng.normal(size=3), rng.normal(size=3)
    hv, hw = rng.normal(size=4), rng.normal(size=4)
    xn = rng.normal(size=2)
    fwd = pair_message(params, xv, hv, xw, hw, xn, 0.8)
    rev = pair_message(params, xw, hw, xv, hv, xn, 0.8)
    assert not np.allclose(fwd, rev)


# ---------------------------------------------------------------------------
# step


def test_step_single_atom_stays_zero():
    params = small_params()
    mol = Molecule("m", ("C",), np.zeros((1, 3)), {})
    state = ad.constant(np.zeros((SMALL.hidden_dim, 1)))
    for _ in range(4):
        state = step(None, state, mol, params, SMALL, VOCAB)
        assert np.array_equal(state.values, np.zeros((SMALL.hidden_dim, 1)))


def test_step_two_atoms_structure():
    params = small_params(seed=2)
    mol = random_molecule(np.random.default_rng(3), 2, elements=VOCAB)
    enc = MoleculeEncoding(mol, VOCAB, SMALL)
    state = ad.constant(np.zeros((SMALL.hidden_dim, 2)))
    out = step(None, state, mol, params, SMALL, VOCAB, enc).values

    emb = params.atom_embedding.values
    idx = [VOCAB.index(s) for s in mol.symbols]
    xn = params.count_embedding.values[1]  # two atoms -> second row
    d01 = 1.0 / np.linalg.norm(mol.coords[0] - mol.coords[1])
    zero_h = np.zeros(SMALL.hidden_dim)
    m01 = pair_message(params, emb[idx[0]], zero_h, emb[idx[1]], zero_h, xn, d01)
    m10 = pair_message(params, emb[idx[1]], zero_h, emb[idx[0]], zero_h, xn, d01)
    assert np.allclose(out[:, 0], m01 / 2, atol=1e-14)
    assert np.allclose(out[:, 1], m10 / 2, atol=1e-14)


def _message_oracle(params, cfg, inp_vec):
    """Nested-loop message from raw weight lists; independent of pair_message."""
    hidden = cfg.hidden_dim
    gw = params.gate_weight.values.tolist()
    gb = params.gate_bias.values.tolist()
    cw = params.candidate_weight.values.tolist()
    cb = params.candidate_bias.values.tolist()
    out = []
    for i in range(hidden):
        p = gb[i][0]
        q = cb[i][0]
        for j, x in enumerate(inp_vec):
            p += gw[i][j] * x
            q += cw[i][j] * x
        sig = 1.0 / (1.0 + math.exp(-p)) if p >= 0 else math.exp(p) / (1.0 + math.exp(p))
        out.append(sig * math.tanh(q))
    return out


def test_step_matches_nested_loop_oracle():
    params = small_params(seed=9)
    rng = np.random.default_rng(4)
    mol = random_molecule(rng, 3, elements=VOCAB)
    enc = MoleculeEncoding(mol, VOCAB, SMALL)
    state_values = rng.normal(size=(SMALL.hidden_dim, 3))
    out = step(None, ad.constant(state_values), mol, params, SMALL, VOCAB, enc).values

    emb = params.atom_embedding.values
    idx = [VOCAB.index(s) for s in mol.symbols]
    xn = params.count_embedding.values[2].tolist()
    expected = np.zeros((SMALL.hidden_dim, 3))
    for v in range(3):
        for w in range(3):
            if w == v:
                continue
            d = 1.0 / np.linalg.norm(mol.coords[v] - mol.coords[w])
            inp = (emb[idx[v]].tolist() + state_values[:, v].tolist()
                   + emb[idx[w]].tolist() + state_values[:, w].tolist() + xn + [d])
            expected[:, v] += _message_oracle(params, SMALL, inp)
    expected /= 3
    assert np.allclose(out, expected, atol=1e-12)


def test_batched_step_matches_pairwise_definition():
    # vectorized step vs the per-pair message function, tight tolerance
    params = small_params(seed=13)
    rng = np.random.default_rng(5)
    for n in (2, 4, 6):
        mol = random_molecule(rng, n, elements=VOCAB)
        enc = MoleculeEncoding(mol, VOCAB, SMALL)
        state_values = rng.normal(size=(SMALL.hidden_dim, n))
        out = step(None, ad.constant(state_values), mol, params, SMALL, VOCAB, enc).values
        emb = params.atom_embedding.values
        idx = [VOCAB.index(s) for s in mol.symbols]
        xn = params.count_embedding.values[min(n, 8) - 1]
        expected = np.zeros((SMALL.hidden_dim, n))
        for v in range(n):
            for w in range(n):
                if w != v:
                    d = 1.0 / max(np.linalg.norm(mol.coords[v] - mol.coords[w]), 1e-6)
                    expected[:, v] += pair_message(params, emb[idx[v]], state_values[:, v],
                                                   emb[idx[w]], state_values[:, w], xn, d)
        expected /= n
        assert np.abs(out - expected).max() < 1e-12


# ---------------------------------------------------------------------------
# readout


def test_readout_zero_state_zero_biases():
    params = small_params()
    out = readout(None, ad.constant(np.zeros((SMALL.hidden_dim, 3))), params)
    assert out.item() == 0.0


def test_readout_permutation_of_columns():
    params = small_params(seed=4)
    rng = np.random.default_rng(6)
    state = rng.normal(size=(SMALL.hidden_dim, 5))
    base = readout(None, ad.constant(state), params).item()
    for _ in range(5):
        perm = rng.permutation(5)
        shuffled = readout(None, ad.constant(state[:, perm]), params).item()
        assert abs(shuffled - base) < 1e-10


def test_readout_hand_case():
    # 1-dim hidden, identity-like MLP: pooled mean passes straight through
    cfg = ModelConfig(atom_dim=1, count_dim=1, hidden_dim=1, mlp_dim=1, steps=1)
    params = init_params(cfg, 2, 4, seed=0)
    for w, _ in params.mlp:
        w.values[:] = 1.0
    state = ad.constant([[0.6, 1.0]])
    assert readout(None, state, params).item() == pytest.approx(0.8, abs=1e-15)
    negative = ad.constant([[-0.6, -1.0]])  # ReLU zeroes the pooled mean
    assert readout(None, negative, params).item() == 0.0


# ---------------------------------------------------------------------------
# forward


def test_forward_single_atom_is_input_independent():
    params = small_params(seed=8)
    base = forward(None, Molecule("a", ("C",), np.zeros((1, 3)), {}), params, SMALL, VOCAB)
    moved = forward(None, Molecule("b", ("O",), np.full((1, 3), 7.5), {}), params, SMALL, VOCAB)
    zero_state = readout(None, ad.constant(np.zeros((SMALL.hidden_dim, 1))), params)
    assert base.item() == moved.item() == zero_state.item()


def test_forward_permutation_invariance_exhaustive():
    params = small_params(seed=10)
    rng = np.random.default_rng(7)
    for n in (2, 3, 4):
        mol = random_molecule(rng, n, elements=VOCAB)
        base = forward(None, mol, params, SMALL, VOCAB).item()
        for perm in itertools.permutations(range(n)):
            out = forward(None, permuted(mol, perm), params, SMALL, VOCAB).item()
            assert abs(out - base) < 1e-9


def test_forward_rigid_motion_invariance():
    params = small_params(seed=11)
    rng = np.random.default_rng(8)
    mol = random_molecule(rng, 5, elements=VOCAB)
    base = forward(None, mol, params, SMALL, VOCAB).item()
    for _ in range(10):
        rot = random_rotation(rng)
        shift = rng.uniform(-20, 20, 3)
        moved = Molecule(mol.mol_id, mol.symbols, mol.coords @ rot.T + shift, mol.targets)
        assert abs(forward(None, moved, params, SMALL, VOCAB).item() - base) < 1e-9


def test_forward_matches_straightline_oracle():
    params = small_params(seed=12)
    rng = np.random.default_rng(9)
    for n in (1, 2, 4, 6):
        mol = random_molecule(rng, n, elements=VOCAB)
        got = forward(None, mol, params, SMALL, VOCAB).item()
        want = straightline_forward(mol, params, SMALL, VOCAB)
        assert abs(got - want) < 1e-10


def test_forward_skip_connections_reinject_embeddings():
    cfg = ModelConfig(atom_dim=3, count_dim=2, hidden_dim=4, mlp_dim=4, steps=4)
    params = init_params(cfg, len(VOCAB), 8, seed=1)
    mol = random_molecule(np.random.default_rng(10), 4, elements=VOCAB)
    trace = []
    forward(None, mol, params, cfg, VOCAB, trace=trace)
    assert len(trace) == 4
    # receiver-embedding rows of the pair input are identical at steps 0 and 3
    assert np.array_equal(trace[0][:cfg.atom_dim], trace[3][:cfg.atom_dim])
    # hidden-state rows change between steps
    assert not np.array_equal(trace[0][cfg.atom_dim:cfg.atom_dim + cfg.hidden_dim],
                              trace[3][cfg.atom_dim:cfg.atom_dim + cfg.hidden_dim])


def test_forward_zero_candidate_collapses_to_zero_state_readout():
    params = small_params(seed=14)
    params.candidate_weight.values[:] = 0.0
    params.candidate_bias.values[:] = 0.0
    rng = np.random.default_rng(11)
    expected = readout(None, ad.constant(np.zeros((SMALL.hidden_dim, 1))), params).item()
    for n in (2, 5):
        mol = random_molecule(rng, n, elements=VOCAB)
        assert forward(None, mol, params, SMALL, VOCAB).item() == expected


def test_forward_out_of_vocabulary():
    params = small_params()
    mol = Molecule("m", ("S",), np.zeros((1, 3)), {})
    with pytest.raises(VocabularyError, match="'S'"):
        forward(None, Molecule("m", ("S", "C"), np.zeros((2, 3)), {}), params, SMALL, VOCAB)
    del mol


def test_forward_count_lookup_clamps_to_last_row():
    params = small_params(max_atoms=3)
    mol = random_molecule(np.random.default_rng(12), 5, elements=VOCAB)
    base = forward(None, mol, params, SMALL, VOCAB).item()
    # unused early rows do not matter, the clamped last row does
    params.count_embedding.values[0, :] = 99.0
    assert forward(None, mol, params, SMALL, VOCAB).item() == base
    params.count_embedding.values[2, :] += 0.25
    assert forward(None, mol, params, SMALL, VOCAB).item() != base


def test_forward_no_distance_ignores_coordinates_exactly():
    cfg = ModelConfig(atom_dim=3, count_dim=2, hidden_dim=4, mlp_dim=4, steps=3,
                      use_distance_feature=False)
    params = init_params(cfg, len(VOCAB), 8, seed=2)
    rng = np.random.default_rng(13)
    mol = random_molecule(rng, 4, elements=VOCAB)
    moved = Molecule(mol.mol_id, mol.symbols, rng.uniform(-9, 9, (4, 3)), mol.targets)
    a = forward(None, mol, params, cfg, VOCAB).item()
    b = forward(None, moved, params, cfg, VOCAB).item()
    assert a == b


@pytest.mark.parametrize("flag", ["use_atom_embedding", "use_count_feature",
                                  "use_distance_feature"])
def test_ablations_keep_shapes_and_match_oracle(flag):
    cfg = ModelConfig(atom_dim=3, count_dim=2, hidden_dim=4, mlp_dim=5, steps=2,
                      **{flag: False})
    params = init_params(cfg, len(VOCAB), 8, seed=3)
    full = init_params(ModelConfig(atom_dim=3, count_dim=2, hidden_dim=4, mlp_dim=5,
                                   steps=2), len(VOCAB), 8, seed=3)
    assert params.parameter_count() == full.parameter_count()
    mol = random_molecule(np.random.default_rng(14), 4, elements=VOCAB)
    got = forward(None, mol, params, cfg, VOCAB).item()
    want = straightline_forward(mol, params, cfg, VOCAB)
    assert abs(got - want) < 1e-10


def test_forward_gradients_match_finite_differences():
    cfg = ModelConfig(atom_dim=3, count_dim=2, hidden_dim=4, mlp_dim=4, steps=2)
    params = init_params(cfg, len(VOCAB), 6, seed=4)
    # move MLP biases off zero so no ReLU pre-activation sits on the kink
    rng = np.random.default_rng(15)
    for _, b in params.mlp:
        b.values[:] = rng.uniform(-0.3, 0.3, size=b.shape)
    molecules = random_molecules(16, 3, sizes=(2, 4, 5), elements=VOCAB)
    report = gradient_check(params, cfg, molecules, [0.3, -0.2, 0.9], VOCAB)
    assert report.max_error < 1e-5, report
