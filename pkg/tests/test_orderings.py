import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import from_edges, random_tree_edges, star, tridiagonal, two_cliques
from fillin.orderings import (EigenConvergenceError, OrderingMethod, cuthill_mckee,
                              fiedler_ordering, fiedler_vector, minimum_degree, natural, order,
                              reverse_cuthill_mckee)
from fillin.sparse import (GraphView, Permutation, apply_permutation, generate_grid_laplacian,
                           generate_random_spd, to_graph)
from fillin.symbolic import brute_force_fill, symbolic_fill


def bandwidth(A):
    S = A.to_scipy().tocoo()
    return int(np.max(np.abs(S.row - S.col)))


def test_natural():
    assert natural(3).old_of_new.tolist() == [0, 1, 2]
    assert natural(1).old_of_new.tolist() == [0]
    p = Permutation(np.array([2, 0, 1]))
    assert natural(3).compose(p) == p and p.compose(natural(3)) == p


def test_rcm_path_bandwidth_one():
    A = tridiagonal(4)
    p = reverse_cuthill_mckee(to_graph(A))
    assert bandwidth(apply_permutation(A, p)) == 1


def test_rcm_star_puts_center_late():
    A = star(5, center=0)
    G = to_graph(A)
    cm, rcm = cuthill_mckee(G), reverse_cuthill_mckee(G)
    # CM starts at a leaf, so the hub is eliminated second with three neighbors left
    assert cm.old_of_new[1] == 0 and rcm.old_of_new[3] == 0
    assert symbolic_fill(A, rcm).fill_count == 0
    assert symbolic_fill(A, cm).fill_count == brute_force_fill(A, cm).report(A).fill_count == 6


def test_rcm_beats_natural_on_grid():
    A = generate_grid_laplacian(10, 10)
    assert symbolic_fill(A, reverse_cuthill_mckee(to_graph(A))).fill_count < symbolic_fill(A).fill_count


def test_rcm_reversed_is_cm():
    G = to_graph(generate_random_spd(60, 0.05, seed=1))
    assert reverse_cuthill_mckee(G).reversed() == cuthill_mckee(G)


def test_rcm_disconnected_components_in_order():
    G = GraphView.from_edges(6, [(3, 4), (4, 5), (0, 1)])
    cm = cuthill_mckee(G).old_of_new.tolist()
    assert set(cm[:2]) == {0, 1} and cm[2] == 2 and set(cm[3:]) == {3, 4, 5}


def test_md_path_no_fill():
    A = tridiagonal(5)
    p = minimum_degree(to_graph(A))
    assert p.old_of_new[0] in (0, 4)
    assert symbolic_fill(A, p).fill_count == 0


@pytest.mark.parametrize("seed", range(50))
def test_md_tree_no_fill(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 51))
    A = from_edges(n, random_tree_edges(n, r))
    assert symbolic_fill(A, minimum_degree(to_graph(A))).fill_count == 0


def test_md_grid_not_worse_than_natural():
    A = generate_grid_laplacian(8, 8)
    assert symbolic_fill(A, minimum_degree(to_graph(A))).fill_count <= symbolic_fill(A).fill_count


def test_md_ties_smallest_index():
    G = GraphView.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert minimum_degree(G).old_of_new[0] == 0


def test_fiedler_path_monotone():
    G = to_graph(tridiagonal(4))
    x = fiedler_vector(G)
    assert np.all(np.diff(x) > 0) or np.all(np.diff(x) < 0)
    assert fiedler_ordering(G).old_of_new.tolist() in ([0, 1, 2, 3], [3, 2, 1, 0])


def test_fiedler_complete_graph_deterministic():
    G = GraphView.from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    a, b = fiedler_ordering(G), fiedler_ordering(G)
    assert a == b


def test_fiedler_two_cliques_contiguous():
    k = 5
    G = two_cliques(k)
    pos = fiedler_ordering(G).new_of_old
    left, right = sorted(pos[:k]), sorted(pos[k:])
    assert left == list(range(left[0], left[0] + k)) and right == list(range(right[0], right[0] + k))
    # agreement with a dense eigensolver on the sign-fixed vector
    _, vecs = scipy.linalg.eigh(G.laplacian().toarray())
    ref = vecs[:, 1]
    ref = ref if np.corrcoef(ref, np.arange(2 * k))[0, 1] > 0 else -ref
    np.testing.assert_allclose(fiedler_vector(G), ref, atol=1e-8)


@pytest.mark.parametrize("rows,cols", [(9, 10), (12, 12)])
def test_fiedler_iterative_residual(rows, cols):
    G = to_graph(generate_grid_laplacian(rows, cols))
    x = fiedler_vector(G)
    L = G.laplacian()
    lam = x @ (L @ x)
    assert np.linalg.norm(L @ x - lam * x) <= 1e-6 * np.linalg.norm(x)
    assert abs(x.sum()) < 1e-8
    _, vecs = scipy.linalg.eigh(L.toarray(), subset_by_index=[0, 2])
    assert lam == pytest.approx(_[1], rel=1e-6)


def test_fiedler_weight_scaling_invariance():
    A = generate_random_spd(80, 0.06, seed=5)
    G = to_graph(A)
    Gs = GraphView(G.n, G.adj_ptr, G.adj_idx, 7.5 * G.weights)
    assert fiedler_ordering(G, weighted=True) == fiedler_ordering(Gs, weighted=True)


def test_fiedler_nonconvergence():
    G = to_graph(generate_grid_laplacian(15, 15))
    with pytest.raises(EigenConvergenceError) as exc:
        fiedler_ordering(G, tol=1e-14, max_iter=2)
    assert exc.value.residual > 0


def test_fiedler_disconnected():
    G = GraphView.from_edges(7, [(0, 1), (1, 2), (4, 5), (5, 6)])
    p = fiedler_ordering(G).old_of_new.tolist()
    assert set(p[:3]) == {0, 1, 2} and p[3] == 3 and set(p[4:]) == {4, 5, 6}


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 80), seed=st.integers(0, 10**6),
       method=st.sampled_from(["natural", "rcm", "md", "fiedler"]))
def test_every_method_returns_bijection(n, seed, method):
    G = to_graph(generate_random_spd(n, min(1.0, 4.0 / n), seed))
    p = order(G, method)
    assert sorted(p.old_of_new.tolist()) == list(range(n))


def test_order_rejects_pfm():
    with pytest.raises(ValueError):
        order(to_graph(tridiagonal(3)), OrderingMethod.PFM)


@pytest.mark.parametrize("rows,cols", [(10, 10), (12, 13), (20, 20)])
def test_fiedler_direction_nearly_irrelevant_on_grids(rows, cols):
    A = generate_grid_laplacian(rows, cols)
    p = fiedler_ordering(to_graph(A))
    rev = Permutation(p.old_of_new[::-1].copy())
    up, down = symbolic_fill(A, p).fill_count, symbolic_fill(A, rev).fill_count
    assert abs(up - down) <= 0.01 * max(up, down)
