"""Contact force distribution for the manipulation fingers.

Given the wrench the object controller wants, split it across the
fingertips in contact while staying inside linearized friction cones and
actuator torque limits.  The decision variable is the vector of pyramid
edge weights beta >= 0 per contact, so cone membership is built into the
parameterization and only torque rows remain as general constraints.

The cost trades off force magnitude, force slew between ticks, and wrench
tracking error Psi = F_des - G f (the alpha3 term dominates by three
orders of magnitude so Psi only yields when the wrench is infeasible).

Solved by a primal active-set method on the slightly Tikhonov-regularized
Hessian; the regularization (1e-7) exists because the edge weights of a
pyramid are an overcomplete basis for its 3-D cone, and costs the
optimal objective less than ~1e-6 relative to the exact optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import skew, tangent_basis

N_EDGES_DEFAULT = 8
MU_DEFAULT = 0.8
ALPHA_DEFAULT = (0.01, 0.01, 1000.0)
TAU_LIMIT_DEFAULT = 0.5  # N*m
_RIDGE = 1e-7
_TOL = 1e-10


def build_pyramid(normal: np.ndarray, mu: float, n_edges: int = N_EDGES_DEFAULT) -> np.ndarray:
    """Unit edge generators of an inscribed friction pyramid (3 x n_edges).

    The effective coefficient mu' = mu * cos(pi/n_edges) shrinks the
    pyramid inside the exact cone, so every conic combination of edges is
    guaranteed feasible for the true friction bound.
    """
    if mu <= 0.0:
        raise ValueError(f"friction coefficient must be positive, got {mu}")
    if n_edges < 3:
        raise ValueError(f"need at least 3 pyramid edges, got {n_edges}")
    n = np.asarray(normal, dtype=float)
    norm = float(np.linalg.norm(n))
    if norm < 1e-12:
        raise ValueError("zero contact normal")
    n = n / norm
    t1, t2 = tangent_basis(n)
    mu_eff = mu * np.cos(np.pi / n_edges)
    theta = 2.0 * np.pi * np.arange(n_edges) / n_edges
    edges = n[:, None] + mu_eff * (np.outer(t1, np.cos(theta)) + np.outer(t2, np.sin(theta)))
    return edges / np.linalg.norm(edges, axis=0, keepdims=True)


def build_grasp_map(
    contact_frames: list[np.ndarray | None],
    contact_points: list[np.ndarray | None],
    com: np.ndarray,
) -> np.ndarray:
    """G (6 x 3*n_fingers): stacked contact-frame forces -> object wrench.

    Column block i is [R_i; skew(p_i - com) R_i]; fingers without a contact
    frame get an all-zero block so no wrench can be routed through them.
    """
    com = np.asarray(com, dtype=float)
    n = len(contact_frames)
    g = np.zeros((6, 3 * n))
    for i in range(n):
        rot = contact_frames[i]
        if rot is None:
            continue
        g[:3, 3 * i : 3 * i + 3] = rot
        g[3:, 3 * i : 3 * i + 3] = skew(np.asarray(contact_points[i], dtype=float) - com) @ rot
    return g


@dataclass
class ForceProblem:
    """One tick's force-distribution QP in edge-weight coordinates."""

    g_map: np.ndarray  # (6, 3n) grasp map
    basis: np.ndarray  # (3n, m) block-diagonal pyramid edges
    jh: np.ndarray  # (3n, nq) hand Jacobian (contact frames)
    f_des: np.ndarray  # (6,) desired object wrench
    f_prev: np.ndarray  # (3n,) previous contact forces
    alpha: tuple[float, float, float] = ALPHA_DEFAULT
    tau_lo: np.ndarray | float = -TAU_LIMIT_DEFAULT
    tau_hi: np.ndarray | float = TAU_LIMIT_DEFAULT

    hess: np.ndarray = field(init=False)
    lin: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        a1, a2, a3 = self.alpha
        gb = self.g_map @ self.basis
        bb = self.basis.T @ self.basis
        self.hess = 2.0 * ((a1 + a2) * bb + a3 * gb.T @ gb)
        self.lin = -2.0 * (a2 * self.basis.T @ self.f_prev + a3 * gb.T @ self.f_des)

    @property
    def n_beta(self) -> int:
        return self.basis.shape[1]

    def objective(self, beta: np.ndarray) -> float:
        a1, a2, a3 = self.alpha
        f = self.basis @ beta
        psi = self.f_des - self.g_map @ f
        return float(a1 * f @ f + a2 * (f - self.f_prev) @ (f - self.f_prev) + a3 * psi @ psi)

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        """Gradient of the unregularized objective."""
        return self.hess @ beta + self.lin

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """All rows in `row @ beta >= rhs` form: bounds first, then torque
        lower sides, then torque upper sides (negated)."""
        m = self.n_beta
        a_tau = self.jh.T @ self.basis  # (nq, m)
        keep = np.linalg.norm(a_tau, axis=1) > 1e-12
        a_tau = a_tau[keep]
        lo = np.broadcast_to(np.asarray(self.tau_lo, dtype=float), (self.jh.shape[1],))[keep]
        hi = np.broadcast_to(np.asarray(self.tau_hi, dtype=float), (self.jh.shape[1],))[keep]
        rows = np.vstack([np.eye(m), a_tau, -a_tau])
        rhs = np.concatenate([np.zeros(m), lo, -hi])
        return rows, rhs


@dataclass
class ForceSolution:
    beta: np.ndarray
    f: np.ndarray  # (3n,) contact-frame forces
    tau: np.ndarray  # (nq,) joint torques J_h^T f
    psi: np.ndarray  # (6,) wrench slack F_des - G f
    objective: float
    iterations: int
    n_active: int
    status: str  # "optimal" | "iteration_limit"
    multipliers: np.ndarray  # one per constraint row, zero when inactive
    active: np.ndarray  # boolean mask over constraint rows


def optimize_forces(
    problem: ForceProblem,
    warm: ForceSolution | None = None,
    max_iterations: int = 200,
) -> ForceSolution:
    """Primal active-set solve of the force QP.

    Iterates stay feasible throughout; on hitting the iteration cap the
    best feasible iterate is returned with status "iteration_limit" so the
    caller can hold its previous command.
    """
    m = problem.n_beta
    rows, rhs = problem.constraints()
    n_rows = rows.shape[0]
    hess = problem.hess + 2.0 * _RIDGE * np.eye(m)
    lin = problem.lin

    x = np.zeros(m)
    active = np.zeros(n_rows, dtype=bool)
    active[:m] = True  # beta = 0 vertex
    if warm is not None and warm.beta.shape == (m,) and n_rows == warm.active.shape[0]:
        x0 = np.maximum(warm.beta, 0.0)
        slack = rows @ x0 - rhs
        if np.all(slack >= -1e-9):
            x = x0
            active = (slack <= _TOL) & warm.active

    iterations = 0
    status = "iteration_limit"
    while iterations < max_iterations:
        iterations += 1
        grad = hess @ x + lin
        act_idx = np.flatnonzero(active)
        e_mat = rows[act_idx]
        k = len(act_idx)
        kkt = np.zeros((m + k, m + k))
        kkt[:m, :m] = hess
        kkt[:m, m:] = e_mat.T
        kkt[m:, :m] = e_mat
        rhs_kkt = np.concatenate([-grad, np.zeros(k)])
        try:
            sol = np.linalg.solve(kkt, rhs_kkt)
            if float(np.linalg.norm(kkt @ sol - rhs_kkt)) > 1e-6 * (1.0 + float(np.linalg.norm(rhs_kkt))):
                sol = np.linalg.lstsq(kkt, rhs_kkt, rcond=None)[0]
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs_kkt, rcond=None)[0]
        p = sol[:m]
        lam = -sol[m:]  # KKT block gives -multipliers for >= rows

        at_subproblem_min = float(np.linalg.norm(p)) <= 1e-11 * (1.0 + float(np.linalg.norm(x)))
        if not at_subproblem_min:
            # largest feasible step along p
            step = 1.0
            block = -1
            proj = rows @ p
            gap = rows @ x - rhs
            for j in np.flatnonzero(~active):
                if proj[j] < -1e-13:
                    limit = gap[j] / (-proj[j])
                    if limit < step - 1e-14:
                        step = max(limit, 0.0)
                        block = j
            x = x + step * p
            if block >= 0:
                active[block] = True
                continue
            # unblocked full step lands on the subproblem minimizer and the
            # solve's lam is its multiplier vector; re-solving from here only
            # returns roundoff noise, so go straight to the multiplier test
            at_subproblem_min = True

        if at_subproblem_min:
            if k == 0 or np.all(lam >= -1e-8):
                status = "optimal"
                break
            drop = act_idx[int(np.argmin(lam))]
            active[drop] = False

    x = np.maximum(x, 0.0)
    multipliers = np.zeros(n_rows)
    if status == "optimal":
        act_idx = np.flatnonzero(active)
        if len(act_idx):
            multipliers[act_idx] = np.maximum(lam, 0.0)

    f = problem.basis @ x
    return ForceSolution(
        beta=x,
        f=f,
        tau=problem.jh.T @ f,
        psi=problem.f_des - problem.g_map @ f,
        objective=problem.objective(x),
        iterations=iterations,
        n_active=int(np.sum(active)),
        status=status,
        multipliers=multipliers,
        active=active.copy(),
    )


def torques_from_forces(jh: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Joint torques that realize stacked contact-frame forces f."""
    return np.asarray(jh).T @ np.asarray(f, dtype=float)


def kkt_residuals(problem: ForceProblem, solution: ForceSolution) -> dict[str, float]:
    """Optimality certificate residuals for a claimed solution.

    stationarity uses the solver's own multipliers against the regularized
    gradient; feasibility and complementarity are checked from scratch.
    All three near zero certify a global optimum of the (convex) QP.
    """
    rows, rhs = problem.constraints()
    beta = solution.beta
    grad = problem.gradient(beta) + 2.0 * _RIDGE * beta
    stationarity = float(np.linalg.norm(grad - rows.T @ solution.multipliers, ord=np.inf))
    slack = rows @ beta - rhs
    feasibility = float(max(0.0, -slack.min()))
    complementarity = float(np.max(np.abs(solution.multipliers * slack)))
    return {
        "stationarity": stationarity,
        "feasibility": feasibility,
        "complementarity": complementarity,
        "dual_feasibility": float(max(0.0, -solution.multipliers.min())),
    }


def assemble_problem(
    hand_jacobian: np.ndarray,
    contact_frames: list[np.ndarray | None],
    contact_points: list[np.ndarray | None],
    com: np.ndarray,
    f_des: np.ndarray,
    f_prev: np.ndarray | None = None,
    mu: float = MU_DEFAULT,
    n_edges: int = N_EDGES_DEFAULT,
    alpha: tuple[float, float, float] = ALPHA_DEFAULT,
    tau_limit: float = TAU_LIMIT_DEFAULT,
) -> ForceProblem:
    """Build the per-tick QP from contact state.

    Pyramids live in each contact frame (+z presses into the surface), so
    the block-diagonal basis maps edge weights straight to contact-frame
    forces; fingers without contact contribute no columns' worth of force
    (their basis block is zero alongside their grasp-map block).
    """
    n = len(contact_frames)
    basis = np.zeros((3 * n, n_edges * n))
    ez = np.array([0.0, 0.0, 1.0])
    for i in range(n):
        if contact_frames[i] is None:
            continue
        basis[3 * i : 3 * i + 3, n_edges * i : n_edges * (i + 1)] = build_pyramid(ez, mu, n_edges)
    g_map = build_grasp_map(contact_frames, contact_points, com)
    if f_prev is None:
        f_prev = np.zeros(3 * n)
    return ForceProblem(
        g_map=g_map,
        basis=basis,
        jh=hand_jacobian,
        f_des=np.asarray(f_des, dtype=float),
        f_prev=np.asarray(f_prev, dtype=float),
        alpha=alpha,
        tau_lo=-tau_limit,
        tau_hi=tau_limit,
    )
