from dataclasses import dataclass
from typing import List, Optional
import logging

import numpy as np

from src.duality.linear_data import LinearABSDEData, TerminalData, TerminalNodes
from src.errors import DtTooLargeError, InvalidArgumentError
from .scenario_tree import ScenarioTree

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    """Y on tree levels 0..K_T and (Z, Q, V) on levels 0..K_T-1; terminal data extend them on [T, T + delta]."""
    tree: ScenarioTree
    m: int
    Y: List[np.ndarray]
    Z: List[np.ndarray]
    Q: List[np.ndarray]
    V: List[np.ndarray]
    terminal: TerminalNodes

    @property
    def y0(self) -> float:
        return float(self.Y[0][0])

    @property
    def terminal_level(self) -> int:
        return len(self.Y) - 1

    def orthogonality_residuals(self) -> List[float]:
        """Per level, max over nodes of |E[dY - E[dY] - Z dW - Q dN~ - V . dPhi~ | node]|."""
        tree = self.tree
        residuals = []
        for k in range(self.terminal_level):
            states = tree.level_states[k]
            probs = tree.children_probs(k)
            y_next = self.Y[k + 1].reshape(probs.shape)
            mean = np.sum(probs * y_next, axis=1)
            switching = np.einsum("nj,nbj->nb", self.V[k], tree.dPhi_tilde[states])
            resid = (
                y_next
                - mean[:, None]
                - self.Z[k][:, None] * tree.dW[None, :]
                - self.Q[k][:, None] * tree.dN_tilde[None, :]
                - switching
            )
            residuals.append(float(np.max(np.abs(np.sum(probs * resid, axis=1)))))
        return residuals


def _project_switching(tree: ScenarioTree, states: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    """V at each node: least squares of Y_{k+1} on the active dPhi~_j (j != current state).

    weighted is (n, B) with entries P(b) * Y_{k+1}(b).
    """
    D = tree.D
    V = np.zeros((states.size, D))
    if D == 1:
        return V
    for i in range(D):
        nodes = np.flatnonzero(states == i)
        if not nodes.size:
            continue
        active = [j for j in range(D) if j != i]
        increments = tree.dPhi_tilde[i][:, active]
        gram = increments.T @ (tree.branch_probs[i][:, None] * increments)
        rhs = weighted[nodes] @ increments
        V[np.ix_(nodes, active)] = np.linalg.solve(gram, rhs.T).T
    return V


def solve_absde_backward(
    tree: ScenarioTree,
    data: LinearABSDEData,
    terminal: TerminalData,
    m: Optional[int] = None,
) -> BackwardSolution:
    """Implicit-in-Y, explicit-in-(Z, Q, V) backward recursion with exact conditional sums on the tree.

    The tree spans [t, T + delta] with K levels; the equation lives on levels 0..K_T = K - m.
    """
    grid = tree.grid
    m = grid.m if m is None else int(m)
    K_T = grid.K - m
    if m < 0 or K_T < 1:
        raise InvalidArgumentError(f"anticipation of m={m} steps leaves no backward horizon on a depth-{grid.K} tree")
    if data.n_regimes != tree.D:
        raise InvalidArgumentError(f"linear data know {data.n_regimes} regimes but the tree has {tree.D}")

    dt = grid.dt
    D = tree.D
    marks = tree.jump_spec.marks
    nu = float(tree.jump_spec.levy_mass[0]) if tree.jump_spec.rate > 0 else 0.0
    p_jump = tree.jump_probability
    off = tree.chain_spec.off_diagonal
    nodes = terminal.on_nodes(np.array([grid.time(K_T + j) for j in range(m + 1)]), marks, D)
    # E[lambda'_j(alpha_{k+m}) | alpha_k = i] under the tree chain.
    lagged_intensity = np.linalg.matrix_power(tree.chain_step, m) @ off

    Y: List[Optional[np.ndarray]] = [None] * (K_T + 1)
    Z: List[Optional[np.ndarray]] = [None] * K_T
    Q: List[Optional[np.ndarray]] = [None] * K_T
    V: List[Optional[np.ndarray]] = [None] * K_T
    Y[K_T] = np.full(tree.branch_factor ** K_T, nodes.xi[0])

    for k in range(K_T - 1, -1, -1):
        t = grid.time(k)
        states = tree.level_states[k]
        probs = tree.children_probs(k)
        y_next = Y[k + 1].reshape(probs.shape)
        weighted = probs * y_next

        ey = weighted.sum(axis=1)
        Z[k] = weighted @ tree.dW / dt
        Q[k] = weighted @ tree.dN_tilde / (p_jump * (1.0 - p_jump)) if nu > 0 else np.zeros(states.size)
        V[k] = _project_switching(tree, states, weighted)

        b = data.scalar("b", t, states)
        b_bar = data.scalar("b_bar", t, states)
        eta = data.per_mark("eta", t, states, marks)[:, 0]
        eta_bar = data.per_mark("eta_bar", t, states, marks)[:, 0]
        gamma = data.vector("gamma", t, states)
        gamma_bar = data.vector("gamma_bar", t, states)
        own_intensity = off[states]

        if m == 0:
            factor = 1.0 - (b + b_bar) * dt
            anticipated_y = 0.0
            anticipated_z, anticipated_q, anticipated_v = Z[k], Q[k], own_intensity * V[k]
        elif k + m < K_T:
            level = k + m
            anticipated_y = tree.conditional_mean(Y[level], level, m)
            anticipated_z = tree.conditional_mean(Z[level], level, m)
            anticipated_q = tree.conditional_mean(Q[level], level, m)
            anticipated_v = tree.conditional_mean(off[tree.level_states[level]] * V[level], level, m)
            factor = 1.0 - b * dt
        else:
            j = k + m - K_T
            anticipated_y = nodes.xi[j]
            anticipated_z = nodes.psi[j]
            anticipated_q = nodes.zeta[j, 0]
            anticipated_v = nodes.vartheta[j][None, :] * lagged_intensity[states]
            factor = 1.0 - b * dt

        if np.any(factor <= 0):
            raise DtTooLargeError(f"implicit backward step loses positivity at level k={k}: min factor {float(np.min(factor)):.6g}")

        driver = (
            b_bar * anticipated_y
            + data.scalar("sigma", t, states) * Z[k]
            + data.scalar("sigma_bar", t, states) * anticipated_z
            + nu * eta * Q[k]
            + nu * eta_bar * anticipated_q
            + np.sum(own_intensity * gamma * V[k], axis=1)
            + np.sum(gamma_bar * anticipated_v, axis=1)
            + data.scalar("l", t, states)
        )
        Y[k] = (ey + dt * driver) / factor

    logger.info(f"Backward recursion on depth-{grid.K} tree (m={m}): Y(t0) = {float(Y[0][0]):.10g}")
    return BackwardSolution(tree, m, Y, Z, Q, V, nodes)
