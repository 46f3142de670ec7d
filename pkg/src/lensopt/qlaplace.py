"""q-Laplace damping kernels and inequality oracles.

All kernels act on the last axis of their inputs, so a single 2-vector and a
stack of element gradients of shape ``(m, 2)`` go through the same code path.
"""

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize_scalar

from .errors import SingularLinearization
from .models import InequalityReport, RegularizedNorm

Reg = RegularizedNorm | float


def _reg(reg: Reg) -> RegularizedNorm:
    return reg if isinstance(reg, RegularizedNorm) else RegularizedNorm(eps_reg=float(reg))


def _eps(reg: Reg) -> float:
    return _reg(reg).eps_reg


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=-1)


def regularized_norm(g: np.ndarray, reg: Reg = 0.0) -> np.ndarray:
    """|g|_ε = sqrt(|g|² + ε²) along the last axis."""
    return _reg(reg).norm(g)


def _power(norm: np.ndarray, exponent: float) -> np.ndarray:
    # 0**negative is replaced by 0; callers only hit it where the factor it
    # multiplies vanishes faster.
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(norm > 0, norm**exponent, 0.0 if exponent != 0 else 1.0)


def flux(g: np.ndarray, q: float, reg: Reg = 0.0) -> np.ndarray:
    """Return |g|_ε^{q-1} g."""
    if q < 1:
        raise ValueError("flux needs q >= 1")
    g = np.asarray(g, dtype=float)
    if q == 1:
        return g.copy()
    return _power(regularized_norm(g, reg), q - 1)[..., None] * g


def _linearized(y: np.ndarray, g: np.ndarray, q: float, eps: float) -> np.ndarray:
    norm = regularized_norm(g, eps)
    first = _power(norm, q - 1)[..., None] * y
    if q == 1:
        return first
    second = (q - 1) * _power(norm, q - 3) * _dot(g, y)
    return first + second[..., None] * g


def flux_linearized(
    y: np.ndarray, g: np.ndarray, q: float, reg: Reg = 0.0
) -> np.ndarray:
    """Directional derivative of :func:`flux` at ``g`` in direction ``y``.

    Returns |g|_ε^{q-1} Y + (q-1)|g|_ε^{q-3}(g·Y) g.

    Raises:
        SingularLinearization: ε = 0, g = 0 somewhere and 1 < q < 3.
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    eps = _eps(reg)
    if eps == 0.0 and 1 < q < 3 and np.any(_dot(g, g) == 0.0):
        raise SingularLinearization(
            "linearised flux undefined at zero gradient", q=q, eps_reg=eps
        )
    return _linearized(y, g, q, eps)


def flux_tensor(g: np.ndarray, q: float, reg: Reg = 0.0) -> np.ndarray:
    """Matrix of :func:`flux_linearized`: |g|^{q-1} I + (q-1)|g|^{q-3} g⊗g."""
    g = np.asarray(g, dtype=float)
    norm = regularized_norm(g, reg)
    eye = np.broadcast_to(np.eye(2), g.shape[:-1] + (2, 2))
    tensor = _power(norm, q - 1)[..., None, None] * eye
    if q != 1:
        outer = g[..., :, None] * g[..., None, :]
        tensor = tensor + ((q - 1) * _power(norm, q - 3))[..., None, None] * outer
    return tensor


def calL(x: np.ndarray, y: np.ndarray, q: float, reg: Reg = 0.0) -> np.ndarray:  # noqa: N802
    """Auxiliary operator |x|_ε^{q-3}(x·y) x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = _eps(reg)
    if eps == 0.0 and q < 3 and np.any(_dot(x, x) == 0.0):
        raise SingularLinearization(
            "auxiliary operator undefined at zero argument", q=q, eps_reg=eps
        )
    return (_power(regularized_norm(x, eps), q - 3) * _dot(x, y))[..., None] * x


def _calL_safe(x: np.ndarray, y: np.ndarray, q: float) -> np.ndarray:  # noqa: N802
    return (_power(regularized_norm(x), q - 3) * _dot(x, y))[..., None] * x


# ============================================================================
# REPRESENTATION FORMULA
# ============================================================================


def repr_formula_residual(
    x: np.ndarray, y: np.ndarray, q: float, n_quad: int = 64
) -> np.ndarray | float:
    """Residual of the integral representation of flux(x) - flux(y).

    The right-hand side ∫₀¹ G_{y+σ(x-y)}(x-y) dσ is evaluated with
    Gauss-Legendre quadrature after splitting [0, 1] at the point of the
    segment closest to the origin and substituting σ = σ* ± s² on each
    piece, which removes the kink of |y + σ(x-y)| there.

    The returned value is the absolute residual |LHS - RHS|.
    """
    if q < 1:
        raise ValueError("representation formula needs q >= 1")
    if n_quad < 8:
        raise ValueError("n_quad must be at least 8")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)

    d = x - y
    lhs = flux(x, q) - flux(y, q)
    dd = _dot(d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        closest = np.where(dd > 0, np.clip(-_dot(y, d) / dd, 0.0, 1.0), 0.0)

    nodes, weights = leggauss(n_quad)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    integral = np.zeros_like(d)
    for sign, length in ((-1.0, closest), (1.0, 1.0 - closest)):
        root = np.sqrt(length)[:, None]
        s = root * t[None, :]
        sigma = closest[:, None] + sign * s**2
        jacobian = 2.0 * s * root * w[None, :]
        z = y[:, None, :] + sigma[..., None] * d[:, None, :]
        integrand = _linearized(np.broadcast_to(d[:, None, :], z.shape), z, q, 0.0)
        integral += np.sum(integrand * jacobian[..., None], axis=1)

    residual = regularized_norm(lhs - integral)
    return float(residual[0]) if scalar else residual


# ============================================================================
# INEQUALITY ORACLES
# ============================================================================


def _ratio(lhs: np.ndarray, core: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lhs > 0, lhs / core, 0.0)
    return np.where(np.isfinite(ratio), ratio, 0.0)


def inequality_oracles(
    x: np.ndarray,
    y: np.ndarray,
    q: float,
    eta: float,
    z: np.ndarray | None = None,
    w: np.ndarray | None = None,
    *,
    n_sigma: int = 11,
    printed: bool = False,
    tol: float = 1e-12,
) -> InequalityReport:
    """Check the q-Laplace inequality chain on a batch of vector pairs.

    Constant-free inequalities are asserted directly (``*_ok`` flags with the
    smallest slack). Inequalities carrying an unspecified constant C_q report
    the largest empirical ratio LHS / (RHS without C_q).

    The power bound on ||x|^{q-1} - |y|^{q-1}| is checked with the
    homogeneous exponent q-2+η; ``printed=True`` uses q-1+η instead, which
    is not scale invariant and yields unbounded ratios for small vectors.

    The auxiliary-operator estimate needs q > 2 and two more vectors ``z``
    and ``w`` (defaults: ``y`` and ``x``); it reports the decomposition
    identity gap and the ratio of (LHS - second term)⁺ to the C_q core.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    nx, ny = regularized_norm(x), regularized_norm(y)
    d = x - y
    nd = regularized_norm(d)

    sigma = np.linspace(0.0, 1.0, n_sigma)
    segment = regularized_norm(y[:, None, :] + sigma[None, :, None] * d[:, None, :])
    bound = ny ** (q - 1) + nx ** (q - 1)
    slack2 = bound[:, None] - segment ** (q - 1)
    ok2 = bool(np.all(slack2 >= -tol * (1.0 + bound[:, None])))

    flux_gap = flux(x, q) - flux(y, q)
    lhs3 = regularized_norm(flux_gap)
    core3 = nd ** (1 - eta) * (ny ** (q - 1 + eta) + nx ** (q - 1 + eta))

    lhs4 = np.abs(nx ** (q - 1) - ny ** (q - 1))
    exponent = q - 1 + eta if printed else q - 2 + eta
    with np.errstate(divide="ignore"):
        core4 = nd ** (1 - eta) * (_power(ny, exponent) + _power(nx, exponent))

    lhs5 = _dot(flux_gap, d)
    slack5 = lhs5 - 2.0 ** (1 - q) * nd ** (q + 1)
    ok5 = bool(np.all(slack5 >= -tol * (1.0 + np.abs(lhs5))))

    auxiliary_ratio = None
    identity_gap = None
    if q > 2:
        zz = y if z is None else np.atleast_2d(np.asarray(z, dtype=float))
        ww = x if w is None else np.atleast_2d(np.asarray(w, dtype=float))
        nz = regularized_norm(zz)
        difference = _calL_safe(x, y, q) - _calL_safe(zz, ww, q)
        identity = _dot(x, y)[:, None] * (
            _power(nx, q - 3)[:, None] * x - _power(nz, q - 3)[:, None] * zz
        ) + (_power(nz, q - 3) * (_dot(y - ww, x) + _dot(ww, x - zz)))[:, None] * zz
        lhs6 = regularized_norm(difference)
        identity_gap = float(
            np.max(regularized_norm(difference - identity) / (1.0 + lhs6))
        )
        second = nz ** (q - 2) * (
            regularized_norm(y - ww) * nx + regularized_norm(ww) * regularized_norm(x - zz)
        )
        core6 = (
            regularized_norm(x - zz) ** (1 - eta)
            * (_power(nx, q - 3 + eta) + _power(nz, q - 3 + eta))
            * nx
            * ny
        )
        auxiliary_ratio = float(np.max(_ratio(np.maximum(lhs6 - second, 0.0), core6)))

    return InequalityReport(
        samples=int(x.shape[0]),
        q=q,
        eta=eta,
        bounded_by_sum_ok=ok2,
        bounded_by_sum_slack=float(np.min(slack2)),
        holder_ratio=float(np.max(_ratio(lhs3, core3))),
        holder_norm_ratio=float(np.max(_ratio(lhs4, core4))),
        monotonicity_ok=ok5,
        monotonicity_slack=float(np.min(slack5)),
        auxiliary_ratio=auxiliary_ratio,
        auxiliary_identity_gap=identity_gap,
    )


def young_constant(eps: float, r: float) -> float:
    """Smallest C with |xy| ≤ ε|x|^r + C|y|^{r/(r-1)} for all scalars.

    Maximising |x||y| - ε|x|^r over |x| gives
    C = (r-1) r^{-r/(r-1)} ε^{-1/(r-1)}, which decays in ε.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 1 < r < math.inf:
        raise ValueError("r must lie in (1, inf)")
    return (r - 1) * r ** (-r / (r - 1)) * eps ** (-1.0 / (r - 1))


def young_constant_numeric(eps: float, r: float) -> float:
    """max_{s ≥ 0} (s - ε s^r) by bounded scalar maximisation.

    Independent check of :func:`young_constant` (take |y| = 1).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 1 < r < math.inf:
        raise ValueError("r must lie in (1, inf)")
    # s - ε s^r < 0 beyond ε^{-1/(r-1)}
    upper = eps ** (-1.0 / (r - 1))
    result = minimize_scalar(
        lambda s: eps * s**r - s,
        bounds=(0.0, upper),
        method="bounded",
        options={"xatol": 1e-14 * max(1.0, upper), "maxiter": 500},
    )
    return float(-result.fun)
