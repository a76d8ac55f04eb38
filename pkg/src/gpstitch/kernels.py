"""Matern correlation and multivariate Matern cross-covariance.

The correlation is H(d) = (2^(1-nu)/Gamma(nu)) (phi d)^nu K_nu(phi d) with
H(0) = 1.  Cross-covariances come from the sufficient validity condition

    sigma_ij = b_ij * Gamma((nu_ii+nu_jj+d)/2) Gamma(nu_ij)
               / (phi_ij^(2*delta_A+nu_ii+nu_jj) Gamma(nu_ij + d/2))

with (b_ij) required to be positive definite clique by clique.  Two rules fix
the cross smoothness/decay from the marginals: "parsimonious" (common decay)
and "simple_ag" (squared decays averaged).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import (
    InvalidCrossSpecError,
    MissingEdgeParameterError,
)

__all__ = [
    "MaternMarginal",
    "CrossSpec",
    "ShiftSpec",
    "matern_corr",
    "sigma_from_b",
    "b_from_sigma",
    "cross_cov_mm",
    "validate_cross_spec",
    "shift_cross_cov",
    "cov_block",
    "params_to_json",
    "params_from_json",
]

_CLOSED_FORM_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class MaternMarginal:
    """Marginal spatial parameters of one variable."""

    sigma: float
    phi: float
    nu: float = 0.5
    tau2: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0 or self.phi <= 0 or self.nu <= 0:
            raise ValueError("sigma, phi, nu must be positive")
        if self.tau2 < 0:
            raise ValueError("tau2 must be nonnegative")


@dataclass(frozen=True)
class CrossSpec:
    """Cross-covariance parameters b_ij with the rule fixing nu_ij, phi_ij.

    b maps canonical edges (i,j), i<j, to real values.  delta_A >= 0 enters
    the decay exponent.  rule is "parsimonious" (requires all marginal decays
    equal; phi_ij is that common value) or "simple_ag"
    (phi_ij^2 = (phi_ii^2 + phi_jj^2)/2).  dim is the spatial dimension.
    """

    b: dict = field(default_factory=dict)
    delta_a: float = 0.0
    rule: str = "simple_ag"
    dim: int = 2

    def __post_init__(self):
        if self.rule not in ("parsimonious", "simple_ag"):
            raise InvalidCrossSpecError("unknown rule %r" % (self.rule,))
        if self.delta_a < 0:
            raise InvalidCrossSpecError("delta_a must be nonnegative")
        if self.dim not in (1, 2, 3):
            raise InvalidCrossSpecError("dim must be 1, 2 or 3")
        canon = {}
        for (i, j), val in self.b.items():
            if i == j:
                raise InvalidCrossSpecError("b entries are for pairs i != j")
            canon[(min(i, j), max(i, j))] = float(val)
        object.__setattr__(self, "b", canon)

    def b_value(self, i, j):
        key = (min(i, j), max(i, j))
        if key not in self.b:
            raise MissingEdgeParameterError("no b entry for edge %s" % (key,))
        return self.b[key]

    def has_pair(self, i, j):
        return (min(i, j), max(i, j)) in self.b

    def with_b(self, i, j, value):
        new_b = dict(self.b)
        new_b[(min(i, j), max(i, j))] = float(value)
        return CrossSpec(b=new_b, delta_a=self.delta_a, rule=self.rule, dim=self.dim)


@dataclass(frozen=True)
class ShiftSpec:
    """Per-variable spatial shift vectors for the asymmetric kernel."""

    a: dict

    def vector(self, i, dim):
        v = np.asarray(self.a.get(i, np.zeros(dim)), dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("shift vector for variable %d not finite" % i)
        return v


def _matern_closed(t, nu):
    if nu == 0.5:
        return np.exp(-t)
    if nu == 1.5:
        return (1.0 + t) * np.exp(-t)
    if nu == 2.5:
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError("no closed form for nu=%r" % nu)


def _matern_bessel(t, nu):
    t = np.asarray(t, dtype=float)
    out = np.ones_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = (2.0 ** (1.0 - nu) / gamma_fn(nu)) * tp**nu * kv(nu, tp)
    # kv underflows to 0 for large arguments; 0*inf guards
    np.nan_to_num(out, copy=False, nan=0.0, posinf=0.0, neginf=0.0)
    return out


def matern_corr(dist, nu, phi, method="auto"):
    """Matern correlation H(d) at distances ``dist`` (scalar or array).

    method "auto" uses the closed forms at nu in {0.5, 1.5, 2.5} and the
    Bessel route otherwise; "bessel" forces the general evaluation (used to
    cross-check the closed forms).
    """
    if nu <= 0 or phi <= 0:
        raise ValueError("nu and phi must be positive")
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    t = phi * d
    if method == "auto" and nu in _CLOSED_FORM_NU:
        out = _matern_closed(t, nu)
    else:
        out = _matern_bessel(t, nu)
    if np.ndim(dist) == 0:
        return float(out)
    return out


def _cross_nu_phi(mi, mj, spec):
    nu_ij = 0.5 * (mi.nu + mj.nu)
    if spec.rule == "parsimonious":
        if not math.isclose(mi.phi, mj.phi, rel_tol=1e-12):
            raise InvalidCrossSpecError(
                "parsimonious rule requires a common decay; got %g and %g"
                % (mi.phi, mj.phi)
            )
        phi_ij = mi.phi
    else:
        phi_ij = math.sqrt(0.5 * (mi.phi**2 + mj.phi**2))
    return nu_ij, phi_ij


def sigma_from_b(b_ij, mi, mj, spec):
    """Cross variance sigma_ij implied by b_ij under the validity condition."""
    nu_ij, phi_ij = _cross_nu_phi(mi, mj, spec)
    d = spec.dim
    num = gamma_fn(0.5 * (mi.nu + mj.nu + d)) * gamma_fn(nu_ij)
    den = phi_ij ** (2.0 * spec.delta_a + mi.nu + mj.nu) * gamma_fn(nu_ij + 0.5 * d)
    return b_ij * num / den


def b_from_sigma(sigma_ii, m, spec):
    """Diagonal b_ii implied by the marginal variance (condition inverted at i=j)."""
    return sigma_ii * m.phi ** (2.0 * spec.delta_a + 2.0 * m.nu) / gamma_fn(m.nu)


def cross_cov_mm(i, j, s, sp, marginals, spec):
    """Pointwise multivariate-Matern covariance C_ij(s, s')."""
    s = np.asarray(s, dtype=float)
    sp = np.asarray(sp, dtype=float)
    d = float(np.linalg.norm(s - sp))
    mi = marginals[i - 1]
    if i == j:
        return mi.sigma * matern_corr(d, mi.nu, mi.phi)
    mj = marginals[j - 1]
    nu_ij, phi_ij = _cross_nu_phi(mi, mj, spec)
    sigma_ij = sigma_from_b(spec.b_value(i, j), mi, mj, spec)
    return sigma_ij * matern_corr(d, nu_ij, phi_ij)


def validate_cross_spec(spec, marginals, cs):
    """Clique-wise positive definiteness of the b matrix.

    Returns (True, None) or (False, offending_clique).  Every within-clique
    pair must have a b entry (cliques are complete).  The PD check is a plain
    Cholesky with no jitter.
    """
    for K in cs.cliques:
        verts = sorted(K)
        k = len(verts)
        B = np.empty((k, k))
        for a, i in enumerate(verts):
            B[a, a] = b_from_sigma(marginals[i - 1].sigma, marginals[i - 1], spec)
            for c in range(a + 1, k):
                j = verts[c]
                B[a, c] = B[c, a] = spec.b_value(i, j)
        try:
            cholesky(B, lower=True)
        except np.linalg.LinAlgError:
            return False, K
    return True, None


def shift_cross_cov(i, j, s, sp, marginals, spec, shift):
    """Asymmetric cross-covariance C_ij(s - s' + (a_i - a_j))."""
    s = np.asarray(s, dtype=float)
    sp = np.asarray(sp, dtype=float)
    lag = s - sp + shift.vector(i, s.size) - shift.vector(j, s.size)
    origin = np.zeros_like(lag)
    return cross_cov_mm(i, j, lag, origin, marginals, spec)


def cov_block(i, j, A, B, marginals, spec, shift=None, nugget=False):
    """Matrix C_ij(A, B) for location lists A (rows) and B (columns).

    With ``nugget`` true and i == j, tau2_i is added wherever the row and
    column locations coincide (response-process kernel).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    mi = marginals[i - 1]
    if shift is not None:
        delta = shift.vector(i, A.shape[1]) - shift.vector(j, A.shape[1])
        dists = cdist(A + delta, B)
    else:
        delta = None
        dists = cdist(A, B)
    if i == j:
        out = mi.sigma * matern_corr(dists, mi.nu, mi.phi)
    else:
        mj = marginals[j - 1]
        nu_ij, phi_ij = _cross_nu_phi(mi, mj, spec)
        sigma_ij = sigma_from_b(spec.b_value(i, j), mi, mj, spec)
        out = sigma_ij * matern_corr(dists, nu_ij, phi_ij)
    if nugget and i == j and mi.tau2 > 0:
        out = out + mi.tau2 * (dists < 1e-12)
    return out


def params_to_json(marginals, spec):
    obj = {
        "marginals": [
            {"sigma": m.sigma, "phi": m.phi, "nu": m.nu, "tau2": m.tau2}
            for m in marginals
        ],
        "b": {"%d-%d" % k: v for k, v in sorted(spec.b.items())},
        "delta_A": spec.delta_a,
        "rule": spec.rule,
        "dim": spec.dim,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def params_from_json(text):
    obj = json.loads(text) if isinstance(text, str) else text
    marginals = [
        MaternMarginal(
            sigma=m["sigma"], phi=m["phi"], nu=m.get("nu", 0.5), tau2=m.get("tau2", 0.0)
        )
        for m in obj["marginals"]
    ]
    b = {}
    for key, val in obj.get("b", {}).items():
        i, j = key.split("-")
        b[(int(i), int(j))] = float(val)
    spec = CrossSpec(
        b=b,
        delta_a=obj.get("delta_A", 0.0),
        rule=obj.get("rule", "simple_ag"),
        dim=obj.get("dim", 2),
    )
    return marginals, spec
