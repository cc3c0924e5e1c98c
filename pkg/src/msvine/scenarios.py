"""The two four-dimensional simulation scenarios with a Gaussian and a Gumbel regime.

Regime 0 is a Gaussian D-vine on the path 1-2-3-4, regime 1 a Gumbel
C-vine with root order 1, 2, 3, 4. Every pair copula on tree k carries the
same Kendall's tau. The chain stays in regime 0 with probability 0.95 and
in regime 1 with probability 0.9.
"""
from __future__ import annotations

import numpy as np

from .ms_em import MSRVineModel
from .pair_copula import CopulaFamily, PairCopula, tau_to_param
from .rvine import RVineMatrix, RVineSpec, c_vine_matrix, d_vine_matrix

STAY = (0.95, 0.9)

TREE_TAUS = {
    1: {"gauss": (0.8, 0.6, 0.4), "gumbel": (0.8, 0.6, 0.4)},
    2: {"gauss": (0.3, 0.2, 0.1), "gumbel": (0.8, 0.6, 0.4)},
}


def vine_with_tree_taus(matrix, family, taus) -> RVineSpec:
    """All edges of tree k get ``family`` at Kendall's tau ``taus[k - 1]``."""
    matrix = RVineMatrix(matrix)
    family = CopulaFamily(family)
    grid = {}
    for e in matrix.edges():
        grid[(e.row, e.col)] = PairCopula(family, tau_to_param(family, taus[e.tree - 1]))
    d = matrix.d
    copulas = tuple(tuple(grid.get((r, c)) for c in range(d)) for r in range(d))
    return RVineSpec(matrix, copulas)


def two_state_transition(a: float, b: float) -> np.ndarray:
    """Column-stochastic matrix staying in regime 0 w.p. ``a`` and in regime 1 w.p. ``b``."""
    return np.array([[a, 1.0 - b], [1.0 - a, b]])


def scenario(number: int) -> MSRVineModel:
    if number not in TREE_TAUS:
        raise ValueError(f"unknown scenario {number}; choose 1 or 2")
    taus = TREE_TAUS[number]
    gauss = vine_with_tree_taus(d_vine_matrix([1, 2, 3, 4]), CopulaFamily.GAUSSIAN, taus["gauss"])
    gumbel = vine_with_tree_taus(c_vine_matrix([1, 2, 3, 4]), CopulaFamily.GUMBEL, taus["gumbel"])
    return MSRVineModel((gauss, gumbel), two_state_transition(*STAY))
