import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laren import cgm
from laren import numerics as nx
from laren.errors import DimMismatch, WrongLayerShape
from laren.numerics import Rng
from oracles import attention_oracle, code_oracle, two_step_oracle


def setup(H, N, F, seed):
    cfg = cgm.CgmConfig(H=H, N=N, F=F)
    return cfg, cgm.init_params(cfg, seed), Rng(seed, 12).normal_array((N, H))


# -- layer_attention --------------------------------------------------------------

def test_attention_examples():
    _, p, _ = setup(3, 2, 2, 0)
    assert not cgm.layer_attention(np.zeros(3), p).any()
    p1 = {"WQ": np.array([[1.0]]), "WK": np.array([[1.0]])}
    assert cgm.layer_attention(np.array([2.0]), p1).tolist() == [[4.0]]
    with pytest.raises(DimMismatch):
        cgm.layer_attention(np.zeros(4), p)


@given(st.integers(0, 2 ** 32), st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=30)
def test_attention_rank_one(seed, H, F):
    _, p, g = setup(H, 1, F, seed % 1000)
    A = cgm.layer_attention(g[0], p)
    assert A.shape == (F, H)
    assert np.linalg.matrix_rank(A) <= 1
    assert np.max(np.abs(A - np.array(attention_oracle(g[0], p["WQ"], p["WK"])))) < 1e-12


# -- recursive_relation -------------------------------------------------------------

def test_relation_shapes():
    _, p, g = setup(3, 3, 2, 1)
    T1 = cgm.recursive_relation(None, g[0], p, 1)
    T2 = cgm.recursive_relation(T1, g[1], p, 2)
    T3 = cgm.recursive_relation(T2, g[2], p, 3)
    assert T1.shape == (2, 3) and T2.shape == (2, 5) and T3.shape == (2, 5)


def test_relation_wrong_layer_shape():
    _, p, g = setup(3, 3, 2, 1)
    T1 = cgm.recursive_relation(None, g[0], p, 1)
    with pytest.raises(WrongLayerShape):
        cgm.recursive_relation(T1, g[0], p, 1)
    with pytest.raises(WrongLayerShape):
        cgm.recursive_relation(None, g[1], p, 2)
    with pytest.raises(WrongLayerShape):
        cgm.recursive_relation(T1, g[2], p, 3)


def test_two_step_oracle():
    for seed in range(20):
        H, F = 1 + seed % 4, 1 + seed % 3
        _, p, g = setup(H, 2, F, seed)
        T1 = cgm.recursive_relation(None, g[0], p, 1)
        T2 = cgm.recursive_relation(T1, g[1], p, 2)
        assert np.max(np.abs(T2 - two_step_oracle(g[0], g[1], p["WQ"], p["WK"], p["Wt1"]))) < 1e-12


@given(st.integers(0, 10 ** 6), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=40)
def test_every_relation_is_row_stochastic(seed, H, N, F):
    cfg, p, g = setup(H, N, F, seed)
    _, rels = cgm.cgm_forward(g, p, "ReRR", return_relations=True)
    for n, T in enumerate(rels, start=1):
        assert T.shape == (F, cfg.width(n))
        assert np.all(T >= 0) and np.max(np.abs(T.sum(axis=-1) - 1)) < 1e-9


# -- generate_code ------------------------------------------------------------------

def test_generate_code_scalar_example():
    p = {"WQ": np.array([[1.0]]), "WK": np.array([[1.0]])}
    T = cgm.recursive_relation(None, np.array([2.0]), p, 1)
    assert T.tolist() == [[1.0]]
    assert cgm.generate_code(T, None, np.array([2.0])).tolist() == [2.0]
    assert cgm.generate_code(T, None, np.array([-2.0])).tolist() == [0.0]
    with pytest.raises(DimMismatch):
        cgm.generate_code(T, np.array([1.0]), np.array([2.0]))


def test_generate_code_loop_oracle():
    for seed in range(20):
        _, p, g = setup(3, 2, 2, seed)
        T1 = cgm.recursive_relation(None, g[0], p, 1)
        c1 = cgm.generate_code(T1, None, g[0])
        assert np.max(np.abs(c1 - code_oracle(T1, g[0]))) < 1e-12
        T2 = cgm.recursive_relation(T1, g[1], p, 2)
        c2 = cgm.generate_code(T2, c1, g[1])
        assert np.max(np.abs(c2 - code_oracle(T2, np.concatenate([c1, g[1]])))) < 1e-12


# -- cgm_forward ----------------------------------------------------------------------

def test_forward_shapes_and_nonnegative():
    _, p, g = setup(16, 4, 8, 0)
    c = cgm.cgm_forward(g, p)
    assert c.shape == (4, 8) and np.all(c >= 0)
    batched = cgm.cgm_forward(np.stack([g, -g]), p)
    assert batched.shape == (2, 4, 8)
    assert np.max(np.abs(batched[0] - c)) < 1e-14


def test_single_layer_modes_agree():
    _, p, g = setup(4, 1, 3, 2)
    assert np.array_equal(cgm.cgm_forward(g, p, "ReRR"), cgm.cgm_forward(g, p, "VRR"))


def test_modes_share_first_code_and_then_differ():
    _, p, g = setup(4, 3, 3, 5)
    a, b = cgm.cgm_forward(g, p, "ReRR"), cgm.cgm_forward(g, p, "VRR")
    assert np.array_equal(a[0], b[0])
    assert not np.allclose(a[1:], b[1:])


def test_later_codes_do_not_affect_earlier_ones():
    _, p, g = setup(4, 4, 3, 6)
    base = cgm.cgm_forward(g, p)
    for m in range(4):
        moved = g.copy()
        moved[m] += 0.7
        out = cgm.cgm_forward(moved, p)
        assert np.array_equal(out[:m], base[:m])


def test_unknown_mode():
    _, p, g = setup(2, 2, 2, 0)
    with pytest.raises(ValueError):
        cgm.cgm_forward(g, p, "NOPE")


@pytest.mark.parametrize("mode", ["ReRR", "VRR"])
def test_cgm_gradcheck(mode):
    _, p, g = setup(3, 3, 2, 4)

    def build(graph, nodes):
        return nx.sum_(nx.square(cgm.cgm_forward(g, nodes, mode)))

    for name, res in nx.gradcheck_all(build, p).items():
        assert res.max_rel_error < 1e-4, name
