"""Follower level: Nash quasi-equilibrium of the two tracking games.

For a frozen leader control u each follower k minimizes

    J_k(v1, v2; u) = (mu_k / 2) |v_k|^2_{omega_k x (0,T)}
                   + (nu_k / 2) int_Q xi_* |y - y_{k,d}|^2,

subject to the quasi-linear state equation driven by xi0 u + xi1 v1
+ xi2 v2.  Stationarity of the discrete cost identifies the equilibrium
with the fixed point

    v_k = (1/mu_k) xi_k p_k,

where p_k solves the adjoint of the state linearization with source
-nu_k xi_* (y - y_{k,d}) and vanishing terminal datum.  ``compute_nash``
iterates that map with adaptive damping; every adjoint solve reuses one
factorization per slice through transposed triangular solves, so the
stationarity identity holds at the level of rounding once the iteration
has converged.

Cost functionals and duality pairings use the right-endpoint rule
tau * sum_{m=1..M}: backward Euler's summation-by-parts identity is exact
for that rule and for no other, and the fixed-point identity above then
holds node-wise at every slice instead of acquiring endpoint artifacts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonConvergenceError, ValidationError
from .grids import (
    CutoffRegion,
    Field,
    SpaceTimeField,
    SpatialGrid,
    TimeGrid,
    box_mask,
    boxes_intersect,
    gradient,
    stepped_pairing,
    stepped_norm2,
    trajectory_gradient,
)
from .solvers import (
    LinearCoefficients,
    Nonlinearity,
    combine_control_source,
    march_adjoint,
    march_forward,
    sensitivity_factors,
    solve_forward_quasilinear,
)

CUTOFF_KEYS = ("leader", "follower1", "follower2", "tracking")


@dataclass(frozen=True, eq=False)
class HierarchicProblem:
    """Geometry, weights and data of one Stackelberg–Nash instance.

    ``cutoffs`` maps the four region names (leader, follower1, follower2,
    tracking) to their smooth plateau cutoffs; the tracking cutoff is the
    weight xi_* of both follower costs.  The leader's inner plateau must
    meet the tracking plateau: their intersection is the focus region
    where the Carleman weight concentrates.
    """

    grid: SpatialGrid
    tgrid: TimeGrid
    nl: Nonlinearity
    cutoffs: dict[str, CutoffRegion]
    mu: tuple[float, float]
    nu: tuple[float, float]
    y0: Field
    targets: tuple[SpaceTimeField, SpaceTimeField]
    control_bound: float | None = None
    name: str = "problem"

    def __post_init__(self):
        for key in CUTOFF_KEYS:
            if key not in self.cutoffs:
                raise ValidationError(f"cutoffs missing region {key!r}")
            if not self.cutoffs[key].grid.same_as(self.grid):
                raise ValidationError(f"cutoff {key!r} lives on a different grid")
        if len(self.mu) != 2 or any(m <= 0 for m in self.mu):
            raise ValidationError(f"follower weights mu must be two positive numbers, got {self.mu}")
        if len(self.nu) != 2 or any(n < 0 for n in self.nu):
            raise ValidationError(f"tracking weights nu must be two nonnegative numbers, got {self.nu}")
        if not boxes_intersect(self.grid.dim, self.cutoffs["leader"].inner, self.cutoffs["tracking"].inner):
            raise ValidationError(
                "leader plateau and tracking plateau do not intersect; "
                "the weight construction has no focus region"
            )
        if len(self.targets) != 2:
            raise ValidationError("two follower targets are required")
        for k, t in enumerate(self.targets):
            if not t.grid.same_as(self.grid) or t.tgrid.n_slices != self.tgrid.n_slices:
                raise ValidationError(f"target {k + 1} does not match the problem discretization")
            trace = float(np.abs(t.values[:, self.grid.boundary]).max()) if self.grid.boundary.any() else 0.0
            if trace > 1e-12:
                warnings.warn(
                    f"target {k + 1} has nonzero boundary trace ({trace:.3g}); "
                    "only its values inside the tracking region matter",
                    stacklevel=2,
                )
        if not self.y0.grid.same_as(self.grid):
            raise ValidationError("initial state lives on a different grid")
        if self.control_bound is not None and self.control_bound <= 0:
            raise ValidationError("control_bound must be positive when given")

    # geometry helpers -------------------------------------------------------
    def focus_box(self) -> tuple[tuple[float, float], ...]:
        """Intersection of the leader and tracking plateaus (per-axis intervals)."""
        a = self.cutoffs["leader"].inner
        b = self.cutoffs["tracking"].inner
        return tuple((max(al, bl), min(ah, bh)) for (al, ah), (bl, bh) in zip(a, b))

    def follower_mask(self, k: int) -> np.ndarray:
        """Nodes of omega_k, the outer control box of follower k (1-based)."""
        return box_mask(self.grid, self.cutoffs[f"follower{k}"].outer)

    def xi(self, key: str) -> np.ndarray:
        return self.cutoffs[key].values


@dataclass(frozen=True, eq=False)
class NashSolution:
    """Equilibrium triple with its adjoint states and iteration record.

    ``first_order_residuals`` stays None until a caller attaches the
    stationarity check (see ``with_first_order_residuals``); the update
    history of the Picard loop itself is in ``residuals``.
    """

    y: SpaceTimeField
    v1: SpaceTimeField
    v2: SpaceTimeField
    p1: SpaceTimeField
    p2: SpaceTimeField
    picard_iterations: int
    final_update_norm: float
    residuals: tuple[float, ...]
    converged: bool
    costs: dict[str, float]
    first_order_residuals: tuple[float, float] | None = None


# ---------------------------------------------------------------------------
# linearization at a trajectory


def coefficients_from_state(
    nl: Nonlinearity,
    state: SpaceTimeField,
    rho0: float | None = None,
) -> LinearCoefficients:
    """Adjoint-side coefficient roster (A, e, d0) of the linearization at ``state``.

    A = a + (grad y . partial_zeta a) on the diagonal (the symmetrized
    curvature of the flux), e = -a_y grad y + partial_zeta f, and
    d0 = -f_y + div(partial_zeta f sampled along the trajectory), the
    divergence taken discretely.  Gradient-dependent diffusion is only
    admitted in one dimension, where the symmetrized correction stays
    diagonal.
    """
    grid, tgrid = state.grid, state.tgrid
    r0 = nl.rho0 if rho0 is None else rho0
    M1, n, dim = tgrid.n_slices, grid.n_nodes, grid.dim
    y = state.values
    gy = trajectory_gradient(state)

    a = nl.a(y, gy)
    a_y = nl.a_y(y, gy)
    a_z = np.asarray(nl.a_z(y, gy), dtype=float).reshape(M1, n, dim)
    if dim > 1 and float(np.abs(a_z).max()) > 0.0:
        raise ValidationError(
            "gradient-dependent diffusion is restricted to one dimension: "
            "the symmetrized flux correction would leave the diagonal"
        )

    A = np.empty((M1, n, dim))
    for ax in range(dim):
        A[:, :, ax] = a + gy[:, :, ax] * a_z[:, :, ax]

    f_y = np.asarray(nl.f_y(y, gy), dtype=float)
    f_z = np.asarray(nl.f_z(y, gy), dtype=float).reshape(M1, n, dim)
    e = f_z - a_y[:, :, None] * gy

    # discrete divergence of the sampled zeta-gradient field, slice by slice
    div_fz = np.zeros((M1, n))
    for m in range(M1):
        acc = np.zeros(n)
        for ax in range(dim):
            acc += gradient(Field(grid, f_z[m, :, ax]))[:, ax]
        div_fz[m] = acc
    g0 = -f_y + div_fz

    return LinearCoefficients(
        grid=grid,
        tgrid=tgrid,
        b=A.copy(),
        f_adv=None,
        f0=None,
        B=A,
        g=e,
        g0=g0,
        rho0=r0,
    )


# ---------------------------------------------------------------------------
# cost evaluation


def evaluate_cost(
    problem: HierarchicProblem,
    u: SpaceTimeField | None,
    v1: SpaceTimeField,
    v2: SpaceTimeField,
    k: int | None = None,
    state: SpaceTimeField | None = None,
    refreshes: int = 2,
):
    """Follower costs at (v1, v2) under leader control u.

    Solves the quasi-linear state once unless ``state`` is supplied.
    With ``k`` in {1, 2} returns that follower's scalar cost; otherwise a
    dict with both costs split into control and tracking parts.
    """
    y = state if state is not None else _state(problem, u, v1, v2, refreshes)
    out = {}
    xi_star = problem.xi("tracking")
    for j, vj in ((1, v1), (2, v2)):
        mask = problem.follower_mask(j)
        control = stepped_norm2(problem.grid, problem.tgrid, vj.values, mask=mask)
        diff = y.values - problem.targets[j - 1].values
        tracking = stepped_pairing(problem.grid, problem.tgrid, xi_star[None, :] * diff, diff)
        mu_j, nu_j = problem.mu[j - 1], problem.nu[j - 1]
        out[f"control{j}"] = 0.5 * mu_j * control
        out[f"tracking{j}"] = 0.5 * nu_j * tracking
        out[f"J{j}"] = out[f"control{j}"] + out[f"tracking{j}"]
    if k is not None:
        return out[f"J{k}"]
    return out


def _state(problem: HierarchicProblem, u, v1, v2, refreshes: int) -> SpaceTimeField:
    src = combine_control_source(problem.cutoffs, u, v1, v2)
    return solve_forward_quasilinear(
        problem.nl, problem.grid, problem.tgrid, problem.y0, source=src, refreshes=refreshes
    )


# ---------------------------------------------------------------------------
# the equilibrium iteration


def compute_nash(
    problem: HierarchicProblem,
    u: SpaceTimeField | None = None,
    v_init: tuple[SpaceTimeField, SpaceTimeField] | None = None,
    tol: float = 1e-11,
    max_iter: int = 80,
    damping: float = 1.0,
    refreshes: int = 2,
) -> NashSolution:
    """Damped Picard iteration on  v_k <- (1/mu_k) xi_k p_k[v].

    The step factor starts at ``damping`` and is halved (at most five
    times) whenever the fixed-point residual increases.  On convergence
    the state and adjoints are recomputed at the accepted controls so the
    returned fields are mutually consistent.
    """
    grid, tgrid = problem.grid, problem.tgrid
    M1, n = tgrid.n_slices, grid.n_nodes
    zeros = np.zeros((M1, n))
    if v_init is None:
        v1 = zeros.copy()
        v2 = zeros.copy()
    else:
        v1 = v_init[0].values.copy()
        v2 = v_init[1].values.copy()

    xi = [problem.xi("follower1"), problem.xi("follower2")]
    xi_star = problem.xi("tracking")
    theta = damping
    halvings = 0
    prev_res = np.inf
    residuals: list[float] = []
    converged = False
    it = 0

    def fixed_point_map(v1a, v2a):
        yf = _state(
            problem,
            u,
            SpaceTimeField(grid, tgrid, v1a),
            SpaceTimeField(grid, tgrid, v2a),
            refreshes,
        )
        c = coefficients_from_state(problem.nl, yf)
        factors = sensitivity_factors(c)
        ps = []
        for k in (1, 2):
            nu_k = problem.nu[k - 1]
            if nu_k == 0.0:
                ps.append(zeros.copy())
                continue
            src = -nu_k * xi_star[None, :] * (yf.values - problem.targets[k - 1].values)
            ps.append(march_adjoint(factors, np.zeros(n), src))
        vhat = [xi[k][None, :] * ps[k] / problem.mu[k] for k in (0, 1)]
        return yf, ps, vhat

    y_field = None
    p1 = p2 = zeros
    for it in range(1, max_iter + 1):
        y_field, ps, vhat = fixed_point_map(v1, v2)
        p1, p2 = ps
        res = 0.0
        for vk, vhk in ((v1, vhat[0]), (v2, vhat[1])):
            num = np.sqrt(stepped_norm2(grid, tgrid, vhk - vk))
            den = 1.0 + np.sqrt(stepped_norm2(grid, tgrid, vhk))
            res = max(res, num / den)
        residuals.append(res)
        if res < tol:
            v1, v2 = vhat
            converged = True
            break
        if res > prev_res and halvings < 5:
            theta *= 0.5
            halvings += 1
        v1 = v1 + theta * (vhat[0] - v1)
        v2 = v2 + theta * (vhat[1] - v2)
        prev_res = res

    if not converged:
        raise NonConvergenceError(
            f"Nash iteration did not reach tol={tol:.1e} in {max_iter} iterations "
            f"(last residual {residuals[-1]:.3e})",
            history=residuals,
        )

    # one consistency pass at the accepted controls
    y_field, ps, vhat = fixed_point_map(v1, v2)
    p1, p2 = ps
    final_res = 0.0
    for vk, vhk in ((v1, vhat[0]), (v2, vhat[1])):
        num = np.sqrt(stepped_norm2(grid, tgrid, vhk - vk))
        den = 1.0 + np.sqrt(stepped_norm2(grid, tgrid, vhk))
        final_res = max(final_res, num / den)
    residuals.append(final_res)

    v1f = SpaceTimeField(grid, tgrid, v1)
    v2f = SpaceTimeField(grid, tgrid, v2)
    costs = evaluate_cost(problem, u, v1f, v2f, state=y_field)
    return NashSolution(
        y=y_field,
        v1=v1f,
        v2=v2f,
        p1=SpaceTimeField(grid, tgrid, p1),
        p2=SpaceTimeField(grid, tgrid, p2),
        picard_iterations=it,
        final_update_norm=final_res,
        residuals=tuple(residuals),
        converged=True,
        costs=costs,
    )


# ---------------------------------------------------------------------------
# stationarity checks


def random_directions(
    problem: HierarchicProblem,
    k: int,
    count: int,
    seed: int = 0,
) -> list[np.ndarray]:
    """Unit-norm space-time directions supported on omega_k, slices 1..M."""
    grid, tgrid = problem.grid, problem.tgrid
    rng = np.random.default_rng(seed)
    mask = problem.follower_mask(k)
    dirs = []
    for _ in range(count):
        w = np.zeros((tgrid.n_slices, grid.n_nodes))
        w[1:, mask] = rng.standard_normal((tgrid.steps, int(mask.sum())))
        w /= np.sqrt(stepped_norm2(grid, tgrid, w))
        dirs.append(w)
    return dirs


def gateaux_residual(
    problem: HierarchicProblem,
    u: SpaceTimeField | None,
    solution: NashSolution,
    directions: list[np.ndarray] | None = None,
    n_directions: int = 10,
    seed: int = 0,
) -> tuple[float, float]:
    """First-order residuals (r1, r2) of both costs at the equilibrium.

    The directional derivative of J_k along w is assembled from the
    linearized sensitivity state driven by xi_k w:

        dJ_k[w] = mu_k <v_k, w>_{omega_k} + nu_k <xi_* (y - y_{k,d}), y_s>,

    with every inner product the stepped space-time quadrature.  The
    derivative is linear in w; r_k is the worst |dJ_k| over the supplied
    (or generated unit-norm) directions, normalized by 1 + |J_k|.
    """
    grid, tgrid = problem.grid, problem.tgrid
    n = grid.n_nodes
    c = coefficients_from_state(problem.nl, solution.y)
    factors = sensitivity_factors(c)
    xi_star = problem.xi("tracking")
    out = []
    for k in (1, 2):
        dirs = directions if directions is not None else random_directions(problem, k, n_directions, seed + k)
        mu_k, nu_k = problem.mu[k - 1], problem.nu[k - 1]
        vk = (solution.v1 if k == 1 else solution.v2).values
        mask = problem.follower_mask(k)
        diff = xi_star[None, :] * (solution.y.values - problem.targets[k - 1].values)
        worst = 0.0
        for w in dirs:
            deriv = mu_k * stepped_pairing(grid, tgrid, vk, w, mask=mask)
            if nu_k != 0.0:
                y_s = march_forward(factors, np.zeros(n), problem.xi(f"follower{k}")[None, :] * w)
                deriv += nu_k * stepped_pairing(grid, tgrid, diff, y_s)
            worst = max(worst, abs(deriv))
        out.append(worst / (1.0 + abs(solution.costs[f"J{k}"])))
    return out[0], out[1]


def with_first_order_residuals(
    problem: HierarchicProblem,
    u: SpaceTimeField | None,
    solution: NashSolution,
    n_directions: int = 10,
    seed: int = 0,
) -> NashSolution:
    """Copy of ``solution`` with the stationarity residuals filled in."""
    r = gateaux_residual(problem, u, solution, n_directions=n_directions, seed=seed)
    return replace(solution, first_order_residuals=r)


def fd_gateaux_residual(
    problem: HierarchicProblem,
    u: SpaceTimeField | None,
    solution: NashSolution,
    n_dirs: int = 3,
    eps: float = 1e-4,
    seed: int = 0,
    refreshes: int = 2,
) -> dict[str, float]:
    """Directional-derivative residual of both costs by central differences.

    Every probe re-solves the full quasi-linear state, so this check shares
    no code path with the adjoint representation used by ``compute_nash``
    or by ``gateaux_residual``.  Directions are unit-norm, supported on
    omega_k and on slices 1..M.  Returns the worst |dJ_k| per follower,
    normalized by 1 + |J_k|.
    """
    grid, tgrid = problem.grid, problem.tgrid
    base = {1: solution.v1.values, 2: solution.v2.values}
    out = {}
    for k in (1, 2):
        worst = 0.0
        for w in random_directions(problem, k, n_dirs, seed + k):
            vals = {}
            for sgn in (+1.0, -1.0):
                vk = base[k] + sgn * eps * w
                pair = {1: (vk, base[2]), 2: (base[1], vk)}[k]
                v1f = SpaceTimeField(grid, tgrid, pair[0])
                v2f = SpaceTimeField(grid, tgrid, pair[1])
                vals[sgn] = evaluate_cost(problem, u, v1f, v2f, k=k, refreshes=refreshes)
            deriv = (vals[1.0] - vals[-1.0]) / (2.0 * eps)
            ref = 1.0 + abs(vals[1.0] + vals[-1.0]) / 2.0
            worst = max(worst, abs(deriv) / ref)
        out[f"follower{k}"] = worst
    return out
