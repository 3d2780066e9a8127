"""Closed-loop Markov chains of stationary policies and their stationary laws."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .transitions import Decision, TransitionModel

__all__ = [
    "closed_loop_matrix",
    "stationary_distribution",
    "stationary_on_class",
    "terminal_classes",
]

STATIONARY_TOL = 1e-10


def closed_loop_matrix(model: TransitionModel, decisions: np.ndarray) -> tuple[sparse.csr_matrix, int]:
    """Chain obtained by fixing one decision per state.

    Decisions infeasible in their state are coerced to HOLD (the same
    convention the simulator uses); the number of coerced states is
    returned with the matrix.
    """
    n = model.n_states
    effective = np.asarray(decisions, dtype=np.int64).copy()
    infeasible = ~model.feasible[np.arange(n), effective]
    coerced = int(infeasible.sum())
    effective[infeasible] = int(Decision.HOLD)

    parts = []
    for k in model.decisions:
        take = np.flatnonzero(effective == int(k))
        select = sparse.csr_matrix(
            (np.ones(len(take)), (take, np.arange(len(take)))), shape=(n, len(take))
        )
        parts.append(select @ model.matrices[k][take, :])
    mat = sum(parts[1:], start=parts[0]).tocsr()
    return mat, coerced


def terminal_classes(chain: sparse.csr_matrix) -> list[np.ndarray]:
    """Strongly-connected classes with no outgoing edges, ascending by member."""
    n_comp, labels = csgraph.connected_components(chain, directed=True, connection="strong")
    coo = chain.tocoo()
    has_exit = np.zeros(n_comp, dtype=bool)
    mask = labels[coo.row] != labels[coo.col]
    has_exit[np.unique(labels[coo.row[mask]])] = True
    classes = [np.flatnonzero(labels == c) for c in range(n_comp) if not has_exit[c]]
    classes.sort(key=lambda members: int(members[0]))
    return classes


def stationary_on_class(chain: sparse.csr_matrix, members: np.ndarray) -> np.ndarray:
    """Stationary distribution restricted to one closed recurrent class.

    Solved directly from the balance equations; a damped power iteration
    covers periodic or ill-conditioned classes.
    """
    r = chain[members][:, members].tocsc()
    m = len(members)
    if m == 1:
        return np.ones(1)

    a = (r.T - sparse.identity(m, format="csc")).tolil()
    a[m - 1, :] = 1.0
    b = np.zeros(m)
    b[m - 1] = 1.0
    pi = None
    try:
        cand = spsolve(a.tocsc(), b)
        if np.all(np.isfinite(cand)):
            resid = np.abs(cand @ r - cand).max()
            if resid <= STATIONARY_TOL and cand.min() >= -STATIONARY_TOL:
                pi = cand
    except RuntimeError:
        pi = None
    if pi is None:
        damp = 0.05
        pi = np.full(m, 1.0 / m)
        for _ in range(500_000):
            nxt = (1.0 - damp) * (pi @ r) + damp * pi
            delta = np.abs(nxt - pi).max()
            pi = nxt
            if delta < STATIONARY_TOL / 10:
                break
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def stationary_distribution(chain: sparse.csr_matrix, start: int) -> np.ndarray:
    """Stationary law of the recurrent class reachable from ``start``.

    Restricts the chain to states reachable from the start, requires a
    unique terminal class there, and embeds its stationary distribution
    into the full state space (transient states get zero mass).
    """
    n = chain.shape[0]
    order = csgraph.breadth_first_order(chain, start, directed=True, return_predecessors=False)
    reachable = np.sort(np.atleast_1d(order))
    sub = chain[reachable][:, reachable].tocsr()
    classes = terminal_classes(sub)
    if len(classes) != 1:
        raise RuntimeError(
            f"closed loop has {len(classes)} terminal classes reachable from start; expected 1"
        )
    members = reachable[classes[0]]
    pi = np.zeros(n)
    pi[members] = stationary_on_class(chain, members)
    return pi
