import numpy as np
import pytest

from molgnn.gnn3d import (Model3D, Model3DConfig, build_radius_graph,
                          rbf_expand, set_max_pool)
from molgnn.gradcheck import finite_diff_check
from molgnn.molgraph import ConformerSet
from molgnn.tensor import Tensor, deterministic_mode
from molgnn.verify import (gin_oracle, random_conformers, random_molecule,
                           small_model_3d, _permute_molecule)


def test_radius_graph_line_of_atoms():
    coords = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    sg = build_radius_graph(coords, 1.5)
    assert sorted(map(tuple, sg.edge_index.tolist())) == [(0, 1), (1, 0)]
    assert np.allclose(sg.distances, 1.0)


def test_radius_graph_degenerate_cases():
    assert build_radius_graph(np.zeros((1, 3)), 5.0).edge_index.shape[0] == 0
    coords = np.random.default_rng(0).normal(size=(4, 3))
    assert build_radius_graph(coords, 0.0).edge_index.shape[0] == 0
    # infinite-ish cutoff on 2 atoms: complete graph
    assert build_radius_graph(coords[:2], 1e9).edge_index.shape[0] == 2


@pytest.mark.parametrize("seed", range(10))
def test_radius_graph_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    coords = rng.normal(0, 3.0, size=(n, 3))
    cutoff = float(rng.uniform(0.5, 8.0))
    got = {tuple(e) for e in build_radius_graph(coords, cutoff).edge_index.tolist()}
    want = {(i, j) for i in range(n) for j in range(n)
            if i != j and np.linalg.norm(coords[i] - coords[j]) <= cutoff}
    assert got == want


def test_rbf_peak_at_center_and_range():
    out = rbf_expand(np.array([2.5]), 5.0, 11)
    centers = np.linspace(0, 5.0, 11)
    assert out[0, np.argmin(np.abs(centers - 2.5))] == pytest.approx(1.0)
    assert np.all(out > 0) and np.all(out <= 1.0)


def test_rbf_hand_computed_two_basis():
    out = rbf_expand(np.array([2.0]), 4.0, 2)
    expected = np.exp(-(1.0 / 32.0) * 4.0)
    assert np.allclose(out, [[expected, expected]])
    assert expected == pytest.approx(0.8825, abs=1e-4)


def test_rbf_clamps_beyond_cutoff():
    assert np.array_equal(rbf_expand(np.array([7.0]), 5.0, 4),
                          rbf_expand(np.array([5.0]), 5.0, 4))


def test_schnet_isolated_atom_offset_and_zero_u2():
    model = small_model_3d()
    sch = model.layers[0].schnet
    x = Tensor(np.random.default_rng(0).normal(size=(1, 8)))
    coords = np.zeros((1, 3))
    sg = build_radius_graph(coords, 5.0)
    rbf = rbf_expand(sg.distances, 5.0, 8)
    out = sch(x, sg, rbf)
    # coordinate-independent offset only
    assert out.data.shape == (1, 8)
    sch.u2.weight.data[...] = 0.0
    sch.u2.bias.data[...] = 0.0
    assert np.array_equal(sch(x, sg, rbf).data, x.data)


def test_schnet_translation_invariance():
    model = small_model_3d(seed=1)
    sch = model.layers[0].schnet
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 8)))
    coords = rng.normal(size=(5, 3))
    moved = coords + np.array([10.0, -3.0, 0.25])

    def run(c):
        sg = build_radius_graph(c, 5.0)
        rbf = rbf_expand(sg.distances, 5.0, 8)
        return sch(x, sg, rbf).data

    assert np.abs(run(coords) - run(moved)).max() < 1e-10


def test_schnet_rotation_invariance():
    model = small_model_3d(seed=2)
    sch = model.layers[0].schnet
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(5, 8)))
    coords = rng.normal(size=(5, 3))
    theta = 1.1
    rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                    [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]])

    def run(c):
        sg = build_radius_graph(c, 5.0)
        rbf = rbf_expand(sg.distances, 5.0, 8)
        return sch(x, sg, rbf).data

    assert np.abs(run(coords) - run(coords @ rot.T)).max() < 1e-10


def test_set_max_pool_examples():
    a = Tensor([[1.0], [0.0]])
    b = Tensor([[0.0], [2.0]])
    assert np.array_equal(set_max_pool([a, b]).data, [[1.0], [2.0]])
    assert set_max_pool([a]) is a
    assert np.array_equal(set_max_pool([b, a]).data,
                          set_max_pool([a, b]).data)
    with pytest.raises(ValueError):
        set_max_pool([])


@pytest.mark.parametrize("seed", range(10))
def test_gin_aggregation_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    mol = random_molecule(rng, n=4)
    model = small_model_3d(seed=seed)
    gin = model.layers[0].gin
    x = rng.normal(size=(4, 8))
    from molgnn.tensor import gather, segment_sum
    src, dst = mol.edge_index[:, 0], mol.edge_index[:, 1]
    e = gin.edge_encoder(mol.edge_feat)
    agg = segment_sum((gather(Tensor(x), src) + e).relu(), dst, 4)
    eps = float(gin.eps.data)
    ours = ((gin.eps + 1.0) * Tensor(x) + agg).data
    ref = gin_oracle(x, mol.edge_index, e.data, eps)
    assert np.abs(ours - ref).max() < 1e-12


def test_confdss_single_conformer_aggregate_is_schnet_output():
    model = small_model_3d(seed=3)
    layer = model.layers[0]
    rng = np.random.default_rng(3)
    mol = random_molecule(rng, n=4)
    coords = rng.normal(size=(4, 3))
    sg = build_radius_graph(coords, model.config.radius_cutoff)
    rbf = rbf_expand(sg.distances, model.config.radius_cutoff,
                     model.config.num_rbf)
    x = Tensor(rng.normal(size=(4, 8)))
    h = layer.schnet(x, sg, rbf)
    pooled = set_max_pool([h])
    assert np.array_equal(pooled.data, h.data)


def test_model_conformer_permutation_and_duplication_exact():
    model = small_model_3d(seed=4)
    rng = np.random.default_rng(4)
    mol = random_molecule(rng, n=5)
    confs = random_conformers(rng, 5, 3)
    base = model.forward(mol, ConformerSet("m", confs)).data
    permuted = model.forward(mol, ConformerSet("m", [confs[2], confs[0],
                                                     confs[1]])).data
    dup = model.forward(mol, ConformerSet("m", confs + [confs[1]])).data
    assert np.array_equal(base, permuted)
    assert np.array_equal(base, dup)


def test_model_e3_invariance():
    model = small_model_3d(seed=5)
    rng = np.random.default_rng(5)
    mol = random_molecule(rng, n=5)
    confs = random_conformers(rng, 5, 2)
    base = float(model.forward(mol, ConformerSet("m", confs)).data)
    theta = 0.4
    rot = np.array([[1, 0, 0],
                    [0, np.cos(theta), -np.sin(theta)],
                    [0, np.sin(theta), np.cos(theta)]])
    moved = [c @ rot.T + np.array([3.0, 1.0, -2.0]) for c in confs]
    assert abs(float(model.forward(mol, ConformerSet("m", moved)).data)
               - base) < 1e-8


def test_model_atom_permutation_invariance_exact():
    model = small_model_3d(seed=6)
    rng = np.random.default_rng(6)
    mol = random_molecule(rng, n=5)
    confs = random_conformers(rng, 5, 2)
    perm = rng.permutation(5)
    pm = _permute_molecule(mol, perm)
    with deterministic_mode():
        a = model.forward(mol, ConformerSet("m", confs)).data
        b = model.forward(pm, ConformerSet("m", [c[perm] for c in confs])).data
    assert np.array_equal(a, b)


def test_model_empty_conformer_set_yields_none():
    model = small_model_3d()
    mol = random_molecule(np.random.default_rng(0), n=3)
    assert model.forward(mol, ConformerSet("m", [])) is None


def test_train_subsampling_respects_cap_and_reseeds():
    cfg = Model3DConfig(num_confdss_layers=1, hidden_dim=8, num_rbf=4,
                        max_train_conformers=2, max_predict_conformers=3)
    model = Model3D(cfg, seed=7)
    rng = np.random.default_rng(7)
    mol = random_molecule(rng, n=4)
    confs = random_conformers(rng, 4, 6)
    cs = ConformerSet("m", confs)
    a = model.forward(mol, cs, training=True, rng=np.random.default_rng(1)).data
    b = model.forward(mol, cs, training=True, rng=np.random.default_rng(2)).data
    assert not np.array_equal(a, b)   # different subsets across epochs
    # prediction caps deterministically at max_predict_conformers
    p1 = model.forward(mol, cs).data
    p2 = model.forward(mol, cs).data
    assert np.array_equal(p1, p2)


def test_full_model_gradcheck():
    model = small_model_3d(seed=8)
    rng = np.random.default_rng(8)
    mol = random_molecule(rng, n=4)
    confs = random_conformers(rng, 4, 2)
    cs = ConformerSet("m", confs)
    report = finite_diff_check(lambda: model.forward(mol, cs),
                               model.parameters(), tolerance=1e-4)
    assert report.passed, str(report)
