"""Fill-reducing orderings for sparse symmetric matrices, with a learned
proximal fill-in minimization method next to classical baselines."""
from .orderings import (OrderingMethod, fiedler_ordering, minimum_degree, natural, order,
                        reverse_cuthill_mckee)
from .sparse import (GraphView, Permutation, SparseSymMatrix, apply_permutation,
                     generate_grid_laplacian, generate_random_spd, parse_matrix_market,
                     read_permutation, to_graph, write_matrix_market, write_permutation)
from .symbolic import FillReport, brute_force_fill, dense_cholesky, symbolic_fill

__version__ = "0.1.0"

__all__ = [
    "OrderingMethod", "fiedler_ordering", "minimum_degree", "natural", "order",
    "reverse_cuthill_mckee", "GraphView", "Permutation", "SparseSymMatrix",
    "apply_permutation", "generate_grid_laplacian", "generate_random_spd",
    "parse_matrix_market", "read_permutation", "to_graph", "write_matrix_market",
    "write_permutation", "FillReport", "brute_force_fill", "dense_cholesky", "symbolic_fill",
]
