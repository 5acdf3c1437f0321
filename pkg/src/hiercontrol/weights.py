"""Carleman weight families for the observability machinery.

The weights are built from a spatial profile eta that vanishes on the
boundary, is positive inside, and has no critical point outside a chosen
focus region (a subset of the observation region).  In 1D,

    eta(x) = x (1 - x) (1 + c (x - x_*)),   x_* = centre of the focus,

with the tilt c chosen by bisection so the unique interior critical point
falls inside the focus, then rescaled to max eta = 1.  In 2D the profile is
the product of two such 1D profiles.

From eta and parameters (mu, lambda) the usual singular-in-time families
follow, with theta(t) = t (T - t):

    beta  = exp(mu eta) / theta          beta0 = 1 / theta
    nu    = (exp(mu eta) - exp(2 mu eta_max)) / theta      (negative)
    nu0   = (1 - exp(2 mu eta_max)) / theta

and the terminal-time variants built on l(t) = T^2/4 for t <= T/2 and
l(t) = theta(t) after, so they are finite at t = 0:

    beta_bar = exp(mu eta) / l           nu_bar = (exp(mu eta) - exp(2 mu eta_max)) / l
    nu_bar_star(t) = min_x nu_bar        rho_hat(t) = exp(-lambda nu_bar_star(t))

rho_hat is non-decreasing and blows up at t = T; quantities derived from it
are evaluated in log space where overflow would otherwise occur.

lambda defaults to a balance rule: the observation weight
exp(2 lambda nu) beta^7 is made to peak at exactly 1 over the cylinder
(attained at the eta-maximum at mid-time).  Large multiples of this value
drive every weighted quantity below the floating-point floor, tiny values
flatten the weight; both extremes are legitimate experiments reachable
through the scenario file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EtaConstructionError, WeightDomainError
from .grids import Field, SpatialGrid, TimeGrid, box_mask, gradient, _frozen, _normalize_box


def _eta_coeffs(c: float, xstar: float) -> np.ndarray:
    """Coefficients of eta(x) = x(1-x)(1 + c(x - xstar)) as [x^3, x^2, x, 1]."""
    return np.array([-c, c + c * xstar - 1.0, 1.0 - c * xstar, 0.0])


def _eta_argmax(c: float, xstar: float) -> float:
    """Location of the maximum of eta_c on (0, 1)."""
    if abs(c) < 1e-15:
        return 0.5
    # eta'(x) = -3c x^2 + 2(c + c xstar - 1) x + (1 - c xstar)
    a = -3.0 * c
    b = 2.0 * (c + c * xstar - 1.0)
    d = 1.0 - c * xstar
    disc = b * b - 4.0 * a * d
    if disc < 0:
        raise EtaConstructionError("eta profile lost its interior critical point")
    r1 = (-b + math.sqrt(disc)) / (2.0 * a)
    r2 = (-b - math.sqrt(disc)) / (2.0 * a)
    best = None
    for r in (r1, r2):
        if 0.0 < r < 1.0 and (-6.0 * c * r + b) < 0.0:  # second derivative negative: max
            best = r if best is None else best
    if best is None:
        raise EtaConstructionError("no interior maximum for the eta profile")
    return best


def _build_eta_axis(focus: tuple[float, float]) -> tuple[float, float]:
    """Pick the tilt c for one axis; returns (c, argmax)."""
    a, b = focus
    xstar = 0.5 * (a + b)
    if abs(xstar - 0.5) < 1e-12:
        return 0.0, 0.5
    # keep 1 + c (x - xstar) positive on [0, 1]
    cmax = 0.95 / max(xstar, 1.0 - xstar)
    lo, hi = (0.0, cmax) if xstar > 0.5 else (-cmax, 0.0)
    target = xstar
    f_lo = _eta_argmax(lo, xstar) - target
    f_hi = _eta_argmax(hi, xstar) - target
    if f_lo * f_hi > 0:
        # cannot centre the maximum; accept the extreme tilt if it lands inside
        c = hi if xstar > 0.5 else lo
        xm = _eta_argmax(c, xstar)
        margin = 0.1 * (b - a)
        if not (a + margin < xm < b - margin):
            raise EtaConstructionError(
                f"cannot place the eta critical point inside focus ({a}, {b}); "
                f"best achievable location {xm:.4f}"
            )
        return c, xm
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _eta_argmax(mid, xstar) - target
        if f_lo * fm <= 0:
            hi = mid
        else:
            lo, f_lo = mid, fm
        if hi - lo < 1e-14:
            break
    c = 0.5 * (lo + hi)
    return c, _eta_argmax(c, xstar)


def build_eta(grid: SpatialGrid, focus, tol_grad: float = 1e-3) -> Field:
    """Construct the weight profile: zero on the boundary, max 1, critical point in focus.

    The no-critical-point condition is checked on the discrete gradient: every
    node outside the open focus region must satisfy |grad eta| >= tol_grad (in
    2D the tolerance is scaled by h, since a product profile has gradients of
    order h near the corners).
    """
    F = _normalize_box(grid.dim, focus)
    for ax, (a, b) in enumerate(F):
        if not (0.0 < a < b < 1.0):
            raise EtaConstructionError(f"focus axis {ax}: need 0 < lo < hi < 1, got ({a}, {b})")
    vals = np.ones(grid.n_nodes)
    for ax in range(grid.dim):
        a, b = F[ax]
        c, xm = _build_eta_axis((a, b))
        xstar = 0.5 * (a + b)
        coords = grid.nodes[:, ax]
        prof = coords * (1.0 - coords) * (1.0 + c * (coords - xstar))
        peak = np.polyval(_eta_coeffs(c, xstar), xm)
        vals *= prof / peak
    eta = Field(grid, vals)
    g = np.linalg.norm(gradient(eta), axis=1)
    # interior nodes only: a product profile on the square necessarily has
    # a vanishing gradient at the corners, where nothing is integrated
    outside = ~box_mask(grid, F) & ~grid.boundary
    tol = tol_grad if grid.dim == 1 else tol_grad * grid.h
    bad = np.flatnonzero(outside & (g < tol))
    if bad.size:
        node = int(bad[0])
        raise EtaConstructionError(
            f"|grad eta| = {g[node]:.3e} < {tol:.3e} at node {node} "
            f"(x={grid.nodes[node]}) outside the focus region"
        )
    return eta


def lambda_auto(mu: float, eta_max: float, T: float) -> float:
    """Balance rule: make max over Q of exp(2 lambda nu) beta^7 equal to 1.

    The maximum sits at the eta peak at t = T/2, where
    beta_c = 4 exp(mu eta_max) / T^2 and |nu_c| = 4 (exp(2 mu eta_max) -
    exp(mu eta_max)) / T^2.
    """
    beta_c = 4.0 * math.exp(mu * eta_max) / (T * T)
    nu_c = 4.0 * (math.exp(2.0 * mu * eta_max) - math.exp(mu * eta_max)) / (T * T)
    return 7.0 * math.log(beta_c) / (2.0 * nu_c)


@dataclass(frozen=True, eq=False)
class CarlemanWeights:
    """Weight family bound to a grid, a horizon and a focus region."""

    grid: SpatialGrid
    tgrid: TimeGrid
    focus: tuple
    mu: float
    lam: float
    eta: np.ndarray
    eta_max: float
    tol_grad: float
    focus_mask: np.ndarray

    @property
    def T(self) -> float:
        return self.tgrid.T

    def exp_mu_eta(self) -> np.ndarray:
        return np.exp(self.mu * self.eta)


def build_weights(
    grid: SpatialGrid,
    tgrid: TimeGrid,
    focus,
    mu: float = 2.0,
    lam: float | None = None,
    tol_grad: float = 1e-3,
) -> CarlemanWeights:
    if mu <= 0:
        raise WeightDomainError(f"mu must be positive, got {mu}")
    eta = build_eta(grid, focus, tol_grad=tol_grad)
    eta_max = 1.0
    if lam is None:
        lam = lambda_auto(mu, eta_max, tgrid.T)
    if lam <= 0:
        raise WeightDomainError(f"lambda must be positive, got {lam}")
    return CarlemanWeights(
        grid=grid,
        tgrid=tgrid,
        focus=_normalize_box(grid.dim, focus),
        mu=float(mu),
        lam=float(lam),
        eta=_frozen(eta.values),
        eta_max=eta_max,
        tol_grad=float(tol_grad),
        focus_mask=box_mask(grid, focus),
    )


def _theta(T: float, t: float) -> float:
    return t * (T - t)


def eval_weights(w: CarlemanWeights, t: float) -> dict[str, np.ndarray]:
    """beta, beta0, nu, nu0 at an interior time 0 < t < T (singular at the ends)."""
    T = w.T
    if not (0.0 < t < T):
        raise WeightDomainError(f"weights are singular at t={t}; need 0 < t < T={T}")
    th = _theta(T, t)
    emu = w.exp_mu_eta()
    cap = math.exp(2.0 * w.mu * w.eta_max)
    beta0 = 1.0 / th
    return {
        "beta": emu / th,
        "beta0": np.full(w.grid.n_nodes, beta0),
        "nu": (emu - cap) / th,
        "nu0": np.full(w.grid.n_nodes, (1.0 - cap) / th),
    }


def eval_terminal_weights(w: CarlemanWeights, t: float) -> dict[str, float | np.ndarray]:
    """l, beta_bar, nu_bar, nu_bar_star, log_rho_hat, rho_hat for 0 <= t < T.

    rho_hat may overflow to inf close to T; log_rho_hat is always finite on
    the sampled grid and is what monotonicity checks should use.
    """
    T = w.T
    if not (0.0 <= t < T):
        raise WeightDomainError(f"terminal weights need 0 <= t < T={T}, got t={t}")
    l = T * T / 4.0 if t <= T / 2.0 else _theta(T, t)
    emu = w.exp_mu_eta()
    cap = math.exp(2.0 * w.mu * w.eta_max)
    nu_bar = (emu - cap) / l
    nu_bar_star = float((np.min(emu) - cap) / l)
    log_rho_hat = -w.lam * nu_bar_star
    return {
        "l": l,
        "beta_bar": emu / l,
        "nu_bar": nu_bar,
        "nu_bar_star": nu_bar_star,
        "log_rho_hat": log_rho_hat,
        "rho_hat": math.exp(log_rho_hat) if log_rho_hat < 709.0 else math.inf,
    }


def observation_weight(w: CarlemanWeights, t: float) -> np.ndarray:
    """exp(2 lambda nu) beta^7 at an interior time; decays to 0 at both ends."""
    vals = eval_weights(w, t)
    return np.exp(2.0 * w.lam * vals["nu"] + 7.0 * np.log(vals["beta"]))


def observation_weight_trajectory(w: CarlemanWeights) -> np.ndarray:
    """Slice-sampled observation weight with the endpoint slices forced to zero.

    Shape (M+1, n_nodes).  The limits at t=0 and t=T are zero; forcing the
    endpoint rows avoids evaluating the singular formulas there.
    """
    out = np.zeros((w.tgrid.n_slices, w.grid.n_nodes))
    for m in range(1, w.tgrid.steps):
        out[m] = observation_weight(w, float(w.tgrid.times[m]))
    return out


def control_energy(w: CarlemanWeights, u: np.ndarray, weights_arr: np.ndarray) -> float:
    """Literal weighted control energy  tau * sum_{m=1..M-1} <exp(-2 lam nu) beta^-7 u, u>.

    Evaluated in log space: the inverse weight overflows near the time
    endpoints, but wherever u vanishes the contribution is zero, so the
    integrand is reconstructed as exp(-2 lam nu - 7 ln beta + 2 ln|u|)
    node by node.
    """
    tau = w.tgrid.tau
    total = 0.0
    for m in range(1, w.tgrid.steps):
        vals = eval_weights(w, float(w.tgrid.times[m]))
        log_inv = -2.0 * w.lam * vals["nu"] - 7.0 * np.log(vals["beta"])
        um = u[m]
        nz = um != 0.0
        if not np.any(nz):
            continue
        contrib = np.zeros_like(um)
        contrib[nz] = np.exp(log_inv[nz] + 2.0 * np.log(np.abs(um[nz])))
        total += tau * float(np.dot(weights_arr, contrib))
    return total


def weighted_target_norm(w: CarlemanWeights, target: np.ndarray, weights_arr: np.ndarray) -> float:
    """Diagnostic  tau * sum_m <rho_hat^2 y, y>  in log space (inf if it overflows)."""
    tau = w.tgrid.tau
    total = 0.0
    for m in range(w.tgrid.steps):
        tw = eval_terminal_weights(w, float(w.tgrid.times[m]))
        ym = target[m]
        nz = ym != 0.0
        if not np.any(nz):
            continue
        log_vals = 2.0 * tw["log_rho_hat"] + 2.0 * np.log(np.abs(ym[nz]))
        if np.any(log_vals > 700.0):
            return math.inf
        contrib = np.zeros_like(ym)
        contrib[nz] = np.exp(log_vals)
        total += tau * float(np.dot(weights_arr, contrib))
    return total
