"""Structured thermal bath: spectral density, quadrature and polaron kernels.

The spectral density is a lognormal background plus a discrete vibrational
mode damped by an Ohmic environment. Polaron-frame quantities are built from
a displacement fraction ``f``: ``f = 0`` leaves the full linear coupling on
the site projectors (weak-coupling limit), ``f = 1`` moves it entirely into
the hopping terms (full polaron).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, QuadratureError

EULER_GAMMA = 0.57721566490153286061


# exponential integral ------------------------------------------------------


def _ei_series(x: np.ndarray) -> np.ndarray:
    term = x.copy()
    total = x.copy()
    k = 1
    while True:
        k += 1
        term = term * x * (k - 1) / (k * k)
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)) or k > 400:
            break
    return EULER_GAMMA + np.log(np.abs(x)) + total


def _ei_asymptotic(x: np.ndarray) -> np.ndarray:
    # e^x / x * sum k!/x^k, stopped at the smallest term
    total = np.ones_like(x)
    term = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 200):
        nxt = term * k / x
        active &= np.abs(nxt) < np.abs(term)
        if not active.any():
            break
        term = np.where(active, nxt, term)
        total = total + np.where(active, nxt, 0.0)
        if np.all(np.abs(term[active]) < 1e-17):
            break
    return np.exp(x) / x * total


def _e1_contfrac(x: np.ndarray) -> np.ndarray:
    # modified Lentz evaluation of E1(x), x > 1
    tiny = 1e-300
    b = x + 1.0
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, 500):
        a = -float(i * i)
        b = b + 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return h * np.exp(-x)


def ei(x) -> np.ndarray:
    """Vectorized principal-value exponential integral Ei(x), x != 0.

    Power series for ``-5 <= x <= 40``, the asymptotic expansion above 40,
    and a continued fraction for E1 below -5.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise ArithmeticError("Ei has a logarithmic singularity at x = 0")
    out = np.empty_like(x)
    ser = (x >= -5.0) & (x <= 40.0)
    big = x > 40.0
    neg = x < -5.0
    if ser.any():
        out[ser] = _ei_series(x[ser])
    if big.any():
        out[big] = _ei_asymptotic(x[big])
    if neg.any():
        out[neg] = -_e1_contfrac(-x[neg])
    return out


def exp_integral_ei(x: float) -> float:
    return float(ei(np.array([x], dtype=float))[0])


# spectral density ------------------------------------------------------------


@dataclass(frozen=True)
class SpectralParams:
    """Bath parameters; ``S`` and ``X`` default to ``0.06 x_f`` and ``0.025 x_f``."""

    omega_c: float = 1.0
    sigma: float = 0.7
    xi: float = 0.3
    Lambda: float = 5.0
    zeta: float = 5.0
    x_f: float = 2.0
    k_bt: float = 1.0
    S: float | None = None
    X: float | None = None

    def __post_init__(self):
        if self.S is None:
            object.__setattr__(self, "S", 0.06 * self.x_f)
        if self.X is None:
            object.__setattr__(self, "X", 0.025 * self.x_f)
        for name in ("omega_c", "sigma", "Lambda", "zeta", "k_bt"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        for name in ("xi", "x_f", "S", "X"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be non-negative")

    @classmethod
    def from_coupling(cls, x_f: float, **kw) -> "SpectralParams":
        return cls(x_f=x_f, **kw)

    def with_coupling(self, x_f: float) -> "SpectralParams":
        return replace(self, x_f=x_f, S=0.06 * x_f, X=0.025 * x_f)

    @property
    def omega_max(self) -> float:
        return 50.0 * max(self.Lambda, self.zeta, self.omega_c * math.exp(4 * self.sigma))


def _j_ohm(w, p: SpectralParams):
    return p.xi * w * np.exp(-w / p.Lambda)


def _j_bg(w, p: SpectralParams):
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    lw = np.log(w[pos] / p.omega_c) / p.sigma
    out[pos] = math.sqrt(math.pi / 2) * p.S * w[pos] / p.sigma * np.exp(-0.5 * lw * lw)
    return out


def _j_vib(w, p: SpectralParams):
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    wp = w[pos]
    jo = _j_ohm(wp, p)
    g = p.zeta - p.xi * p.Lambda / math.pi + jo * ei(wp / p.Lambda) / math.pi
    out[pos] = p.X * wp * wp * jo / ((wp - g) ** 2 + jo * jo)
    return out


def spectral_density(omega, p: SpectralParams):
    """Return ``(J_bg, J_vib, J_com)`` at ``omega > 0`` (scalar or array)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise InvalidArgument("spectral density is defined for omega > 0")
    bg, vib = _j_bg(w, p), _j_vib(w, p)
    if w.ndim == 0:
        return float(bg), float(vib), float(bg + vib)
    return bg, vib, bg + vib


def _vib_over_w3_at_zero(p: SpectralParams) -> float:
    # J_vib ~ X xi w^3 / (zeta - xi Lambda / pi)^2 as w -> 0
    return p.X * p.xi / (p.zeta - p.xi * p.Lambda / math.pi) ** 2


def _coth(x):
    return 1.0 / np.tanh(x)


# adaptive Gauss-Legendre panels ----------------------------------------------


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(order: int):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def _panel_nodes(a, b, order):
    x, w = _gl(order)
    a = np.asarray(a)[:, None]
    b = np.asarray(b)[:, None]
    half = 0.5 * (b - a)
    return (a + half * (x + 1.0)), half * w


@dataclass
class QuadratureRule:
    """Composite Gauss-Legendre rule: ``integral f ~= sum(weights * f(nodes))``."""

    nodes: np.ndarray
    weights: np.ndarray
    n_panels: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return values @ self.weights


def adaptive_rule(func, a: float, b: float, tol: float = 1e-8, order: int = 16,
                  n_initial: int = 32, max_panels: int = 200000) -> QuadratureRule:
    """Bisect panels until each agrees with its two halves to a length-weighted tolerance.

    ``func`` maps a 1-D array of nodes to an array of shape ``(m, len(nodes))``
    (several integrands adapted together) or ``(len(nodes),)``.
    """
    edges = np.linspace(a, b, n_initial + 1)
    todo = list(zip(edges[:-1], edges[1:]))
    done: list[tuple[float, float]] = []
    length = b - a
    while todo:
        lo = np.array([t[0] for t in todo])
        hi = np.array([t[1] for t in todo])
        mid = 0.5 * (lo + hi)
        # evaluate whole panel and both halves in one call
        allo = np.concatenate([lo, lo, mid])
        allhi = np.concatenate([hi, mid, hi])
        x, w = _panel_nodes(allo, allhi, order)
        vals = np.atleast_2d(func(x.ravel()))
        vals = vals.reshape(vals.shape[0], *x.shape)
        est = (vals * w[None]).sum(-1)
        n = len(todo)
        coarse, fine = est[:, :n], est[:, n:2 * n] + est[:, 2 * n:]
        err = np.abs(coarse - fine).max(axis=0)
        ok = err <= tol * (hi - lo) / length
        nxt = []
        for i in range(n):
            if ok[i]:
                done.append((lo[i], mid[i]))
                done.append((mid[i], hi[i]))
            else:
                nxt.append((lo[i], mid[i]))
                nxt.append((mid[i], hi[i]))
        if len(done) + len(nxt) > max_panels:
            raise QuadratureError(
                f"adaptive quadrature on [{a}, {b}] exceeded {max_panels} panels "
                f"(worst panel error {err.max():.3e}, tol {tol:.1e})"
            )
        todo = nxt
    done.sort()
    lo = np.array([d[0] for d in done])
    hi = np.array([d[1] for d in done])
    x, w = _panel_nodes(lo, hi, order)
    return QuadratureRule(x.ravel(), w.ravel(), len(done))


# bath integrals ------------------------------------------------------------


_COMPONENTS = ("background", "vibrational", "ohmic", "total")


def _component_density(w, p, component):
    if component == "background":
        return _j_bg(w, p)
    if component == "vibrational":
        return _j_vib(w, p)
    if component == "ohmic":
        return _j_ohm(np.asarray(w, dtype=float), p)
    if component == "total":
        return _j_bg(w, p) + _j_vib(w, p)
    raise InvalidArgument(f"unknown component {component!r}; expected one of {_COMPONENTS}")


def reorganization_energy(p: SpectralParams, component: str = "total", tol: float = 1e-8) -> float:
    """Integral of J(omega)/omega over (0, inf) for one spectral component."""

    def integrand(w):
        w = np.asarray(w, dtype=float)
        safe = np.where(w > 0, w, 1.0)
        return np.where(w > 0, _component_density(safe, p, component) / safe, 0.0)

    if component == "ohmic":
        upper = 50.0 * p.Lambda
    else:
        upper = p.omega_max
    for _ in range(8):
        body = adaptive_rule(integrand, 0.0, upper, tol=tol)
        value = float(body.integrate(integrand(body.nodes)))
        tail_rule = adaptive_rule(integrand, upper, 4.0 * upper, tol=tol)
        tail = float(tail_rule.integrate(integrand(tail_rule.nodes)))
        if abs(tail) <= 1e-10 * max(abs(value), 1e-300) or value == 0.0 and tail == 0.0:
            return value
        upper *= 4.0
    raise QuadratureError(
        f"reorganization energy ({component}) tail did not converge: value={value:.6e}, tail={tail:.3e}"
    )


def _phi_envelope(w, p):
    """J(w)/w^2 coth(w/2T), with its finite w -> 0 limit."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    pos = w > 0
    wp = w[pos]
    out[pos] = (_j_bg(wp, p) + _j_vib(wp, p)) / (wp * wp) * _coth(wp / (2.0 * p.k_bt))
    out[~pos] = 2.0 * p.k_bt * _vib_over_w3_at_zero(p)
    return out


def _phi_sine_weight(w, p):
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    wp = w[pos]
    out[pos] = (_j_bg(wp, p) + _j_vib(wp, p)) / (wp * wp)
    return out


def _cz_envelope(w, p):
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    wp = w[pos]
    out[pos] = (_j_bg(wp, p) + _j_vib(wp, p)) * _coth(wp / (2.0 * p.k_bt))
    return out


def _cz_sine_weight(w, p):
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = _j_bg(w[pos], p) + _j_vib(w[pos], p)
    return out


def _oscillatory_transform(cos_weight, sin_weight, times, p, tol):
    """int_0^wmax dw [cos_weight(w) cos(wt) - i sin_weight(w) sin(wt)] for each t."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t_abs = np.abs(times)
    probe = np.unique(np.concatenate([[0.0], np.linspace(0.0, t_abs.max(), 5)[1:]])) if t_abs.size else np.zeros(1)

    def adapt(w):
        cw, sw = cos_weight(w, p), sin_weight(w, p)
        ph = np.outer(probe, w)
        return np.vstack([cw * np.cos(ph), sw * np.sin(ph)])

    rule = adaptive_rule(adapt, 0.0, p.omega_max, tol=tol)
    cw = cos_weight(rule.nodes, p) * rule.weights
    sw = sin_weight(rule.nodes, p) * rule.weights
    out = np.empty(times.shape, dtype=complex)
    chunk = max(1, 2_000_000 // max(1, rule.nodes.size))
    for s in range(0, times.size, chunk):
        ph = np.outer(times[s:s + chunk], rule.nodes)
        out[s:s + chunk] = np.cos(ph) @ cw - 1j * (np.sin(ph) @ sw)
    return out


def phonon_propagator(t, f: float, p: SpectralParams, tol: float = 1e-8):
    """phi(t) = f^2 int dw J(w)/w^2 [coth(w/2T) cos(wt) - i sin(wt)].

    Accepts a scalar or an array of times; a scalar returns a complex.
    """
    if not 0.0 <= f <= 1.0:
        raise InvalidArgument(f"displacement fraction must lie in [0, 1], got {f}")
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if f == 0.0:
        out = np.zeros(times.shape, dtype=complex)
    else:
        out = f * f * _oscillatory_transform(_phi_envelope, _phi_sine_weight, times, p, tol / (f * f))
    return complex(out[0]) if scalar else out


def renormalization_factor(f: float, p: SpectralParams, tol: float = 1e-8) -> tuple[float, float]:
    """Return ``(B, R)``: hopping renormalization exp(-Re phi(0)/2) and polaron shift."""
    phi0 = phonon_propagator(0.0, f, p, tol=tol)
    b = math.exp(-0.5 * phi0.real)
    r = -f * (2.0 - f) * reorganization_energy(p, "total") if f > 0 else 0.0
    return b, r


def bare_correlation(t, p: SpectralParams, tol: float = 1e-8):
    """Site-diagonal bath correlation int dw J(w) [coth cos(wt) - i sin(wt)]."""
    return _oscillatory_transform(_cz_envelope, _cz_sine_weight, t, p, tol)


@dataclass
class BathKernels:
    """Correlation kernels tabulated on a uniform grid, shared read-only."""

    f: float
    B: float
    V: float
    V_R: float
    R: float
    reorganization: float
    grid: np.ndarray
    C_z: np.ndarray
    C_X: np.ndarray
    C_Y: np.ndarray
    params: SpectralParams = field(default_factory=SpectralParams)

    def __post_init__(self):
        for arr in (self.grid, self.C_z, self.C_X, self.C_Y):
            arr.setflags(write=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "Cz_re", "Cz_im", "CX_re", "CX_im", "CY_re", "CY_im"])
            for i, t in enumerate(self.grid):
                w.writerow([format(float(v), ".17g") for v in (
                    t, self.C_z[i].real, self.C_z[i].imag, self.C_X[i].real,
                    self.C_X[i].imag, self.C_Y[i].real, self.C_Y[i].imag)])


def tabulate_kernels(grid, f: float, V: float, p: SpectralParams, tol: float = 1e-8) -> BathKernels:
    """Tabulate C_z, C_X, C_Y on ``grid`` for displacement fraction ``f``.

    C_z carries the residual site coupling ``(1 - f)``; C_X and C_Y are the
    two quadratures of the dressed hopping fluctuations,
    ``V_R^2 (cosh 2 phi - 1)`` and ``V_R^2 sinh 2 phi`` with ``V_R = B^2 V``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[0] != 0.0:
        raise InvalidArgument("kernel grid must be increasing, uniform and start at 0")
    if not 0.0 <= f <= 1.0:
        raise InvalidArgument(f"displacement fraction must lie in [0, 1], got {f}")
    e_r = reorganization_energy(p, "total")
    if f > 0:
        phi = phonon_propagator(grid, f, p, tol=tol)
        b = math.exp(-0.5 * phi[0].real)
        r = -f * (2.0 - f) * e_r
    else:
        phi = np.zeros(grid.shape, dtype=complex)
        b, r = 1.0, 0.0
    v_r = b * b * V
    if f < 1.0:
        c_z = (1.0 - f) ** 2 * bare_correlation(grid, p, tol=tol)
    else:
        c_z = np.zeros(grid.shape, dtype=complex)
    c_x = v_r * v_r * (np.cosh(2.0 * phi) - 1.0)
    c_y = v_r * v_r * np.sinh(2.0 * phi)
    return BathKernels(f=f, B=b, V=V, V_R=v_r, R=r, reorganization=e_r, grid=grid,
                       C_z=c_z, C_X=c_x, C_Y=c_y, params=p)
