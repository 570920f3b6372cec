"""Polynomials and rational functions of the sideband frequency Omega.

Rational functions keep their denominator in factored form (a list of poles,
monic) and their numerator as a coefficient array that may also carry its
roots when those are known exactly.  Keeping poles explicit lets products and
quotients cancel shared factors exactly, which matters for the nearly
marginal mechanical responses used throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Number
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DomainError

__all__ = [
    "CLUSTER_RTOL",
    "MAX_POLE_ORDER",
    "Polynomial",
    "RationalFunction",
    "PoleTerm",
    "PartialFractionExpansion",
    "roots",
    "partial_fractions",
    "reflect",
    "cluster_roots",
]

CLUSTER_RTOL = 1e-7
MAX_POLE_ORDER = 4

_EXACT_RTOL = 1e-12
_CANCEL_TOL = 1e-12
# relative cancellation threshold for poles shared by the two terms of a sum
_ADD_TOL = 1e-9
# poles of two summands closer than this (relative) are treated as one
_SNAP_RTOL = 1e-10
_EPS = np.finfo(float).eps


def _trim(coef) -> np.ndarray:
    c = np.atleast_1d(np.asarray(coef, dtype=complex)).ravel()
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1, dtype=complex)
    return c[: nz[-1] + 1].copy()


# ---------------------------------------------------------------------------
# root grouping helpers


def _components(vals: np.ndarray, rtol: float, atol: float) -> list[list[int]]:
    """Single-linkage grouping of complex numbers closer than the tolerance."""
    n = len(vals)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            d = abs(vals[i] - vals[j])
            if d <= max(rtol * max(abs(vals[i]), abs(vals[j])), atol):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def cluster_roots(vals, rtol: float = CLUSTER_RTOL, scale: float | None = None):
    """Merge roots closer than ``rtol`` (relative) into multiple roots.

    Returns a list of ``(root, multiplicity)`` with each cluster replaced by
    its mean.  Roots much smaller than ``scale`` are compared on an absolute
    basis, ``rtol * scale``.
    """
    vals = np.asarray(vals, dtype=complex).ravel()
    if vals.size == 0:
        return []
    if scale is None:
        scale = float(np.max(np.abs(vals)))
    groups = _components(vals, rtol, rtol * scale)
    return [(complex(np.mean(vals[g])), len(g)) for g in groups]


def _match_exact(a: np.ndarray, b: np.ndarray, rtol: float | None = None):
    """Multiset intersection of two root lists under a tight tolerance.

    Returns ``(common, a_rest, b_rest)``; matched values are taken from ``b``.
    """
    rtol = _EXACT_RTOL if rtol is None else rtol
    a = list(np.asarray(a, dtype=complex).ravel())
    b = list(np.asarray(b, dtype=complex).ravel())
    common = []
    rest_a = []
    for x in a:
        hit = -1
        best = math.inf
        for j, y in enumerate(b):
            d = abs(x - y)
            if d <= rtol * max(abs(x), abs(y)) and d < best:
                hit, best = j, d
        if hit >= 0:
            common.append(b.pop(hit))
        else:
            rest_a.append(x)
    return (np.array(common, dtype=complex), np.array(rest_a, dtype=complex),
            np.array(b, dtype=complex))


# ---------------------------------------------------------------------------
# root finding


def _polish(c: np.ndarray, r: np.ndarray, iters: int = 8) -> np.ndarray:
    dc = npoly.polyder(c)
    out = r.copy()
    for k, x in enumerate(out):
        fx = npoly.polyval(x, c)
        for _ in range(iters):
            d = npoly.polyval(x, dc)
            if d == 0 or fx == 0:
                break
            y = x - fx / d
            fy = npoly.polyval(y, c)
            if abs(fy) >= abs(fx):
                break
            x, fx = y, fy
        out[k] = x
    return out


def _find_roots(coef: np.ndarray) -> np.ndarray:
    c = _trim(coef)
    k = int(np.flatnonzero(c)[0])
    zero_roots = np.zeros(k, dtype=complex)
    c = c[k:]
    n = len(c) - 1
    if n == 0:
        return zero_roots
    lead = c[-1]
    # characteristic frequency: largest coefficient-ratio magnitude
    j = np.arange(n)
    ratios = np.abs(c[:n] / lead)
    mask = ratios > 0
    s = float(np.max(ratios[mask] ** (1.0 / (n - j[mask]))))
    if not np.isfinite(s) or s <= 0:
        s = 1.0
    cs = c * s ** np.arange(n + 1) / (lead * s**n)
    r = np.roots(cs[::-1]).astype(complex)
    r = _polish(cs, r)
    merged = cluster_roots(r, CLUSTER_RTOL, max(1.0, float(np.max(np.abs(r)))))
    merged = _merge_multiple(cs, merged)
    r = np.array([x for x, m in merged for _ in range(m)], dtype=complex)
    return np.concatenate([zero_roots, r * s])


def _merge_multiple(c: np.ndarray, merged: list, loose: float = 1e-3, tol: float = 1e-12) -> list:
    """Collapse loose clusters that are numerically a single multiple root.

    A multiple root of order m splits into m roots spread by roughly
    eps**(1/m); such a group is merged when the first m-1 derivatives vanish
    at its mean (relative to the coefficient magnitudes).
    """
    vals = np.array([x for x, _ in merged])
    mult = np.array([m for _, m in merged])
    groups = _components(vals, loose, loose * max(1.0, float(np.max(np.abs(vals)))))
    out = []
    for g in groups:
        m = int(mult[g].sum())
        if m == 1:
            out.append(merged[g[0]])
            continue
        x = complex(np.average(vals[g], weights=mult[g]))
        # the (m-1)-th derivative has a simple root at a true m-fold root
        dm = npoly.polyder(c, m - 1)
        dm1 = npoly.polyder(dm)
        for _ in range(6):
            den = npoly.polyval(x, dm1)
            if den == 0:
                break
            x = x - npoly.polyval(x, dm) / den
        ok = True
        d = c
        for _ in range(m):
            bound = npoly.polyval(abs(x), np.abs(d)).real
            if abs(npoly.polyval(x, d)) > tol * bound:
                ok = False
                break
            d = npoly.polyder(d)
        if ok:
            out.append((x, m))
        else:
            out.extend(merged[i] for i in g)
    return out


def roots(p) -> np.ndarray:
    """Roots of a polynomial, with multiplicity.

    Companion-matrix eigenvalues of the frequency-rescaled polynomial,
    refined by Newton steps; roots closer than ``CLUSTER_RTOL`` are merged
    into a multiple root.

    Raises
    ------
    DomainError
        For constant or empty polynomials.
    """
    p = p if isinstance(p, Polynomial) else Polynomial(p)
    if p.degree < 1:
        raise DomainError("roots() needs a polynomial of degree >= 1")
    if p._roots is None:
        p._roots = _find_roots(p.coef)
    return p._roots.copy()


# ---------------------------------------------------------------------------


class Polynomial:
    """Complex polynomial in Omega, coefficients in ascending order."""

    __slots__ = ("coef", "_roots")

    def __init__(self, coef, roots=None):
        self.coef = _trim(coef)
        self.coef.setflags(write=False)
        self._roots = None if roots is None else np.asarray(roots, dtype=complex).ravel()

    @classmethod
    def from_roots(cls, rts, lead=1.0) -> "Polynomial":
        rts = np.asarray(rts, dtype=complex).ravel()
        if rts.size == 0:
            return cls([lead])
        c = npoly.polyfromroots(rts) * lead
        return cls(c, roots=rts if lead != 0 else None)

    @property
    def degree(self) -> int:
        return -1 if self.is_zero else len(self.coef) - 1

    @property
    def is_zero(self) -> bool:
        return len(self.coef) == 1 and self.coef[0] == 0

    @property
    def lead(self) -> complex:
        return complex(self.coef[-1])

    @property
    def roots_known(self) -> bool:
        return self._roots is not None or self.degree < 1

    def roots(self) -> np.ndarray:
        if self.degree < 1:
            return np.zeros(0, dtype=complex)
        return roots(self)

    def __call__(self, x):
        return npoly.polyval(np.asarray(x, dtype=complex), self.coef)

    def deriv(self, m: int = 1) -> "Polynomial":
        return Polynomial(npoly.polyder(self.coef, m) if self.degree >= m else [0])

    def conj(self) -> "Polynomial":
        r = None if self._roots is None else np.conj(self._roots)
        return Polynomial(np.conj(self.coef), roots=r)

    def __neg__(self):
        return Polynomial(-self.coef, roots=self._roots)

    def __add__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return NotImplemented
        return Polynomial(npoly.polyadd(self.coef, other.coef))

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return NotImplemented
        return Polynomial(npoly.polysub(self.coef, other.coef))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Number):
            r = self._roots if other != 0 else None
            return Polynomial(self.coef * other, roots=r)
        other = _as_poly(other)
        if other is NotImplemented:
            return NotImplemented
        r = None
        if self.roots_known and other.roots_known and not (self.is_zero or other.is_zero):
            r = np.concatenate([self.roots(), other.roots()])
        return Polynomial(npoly.polymul(self.coef, other.coef), roots=r)

    __rmul__ = __mul__

    def __eq__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return NotImplemented
        return len(self.coef) == len(other.coef) and bool(np.all(self.coef == other.coef))

    def __hash__(self):
        return hash(self.coef.tobytes())

    def __repr__(self):
        return f"Polynomial({np.array2string(self.coef, precision=6)})"


def _as_poly(x):
    if isinstance(x, Polynomial):
        return x
    if isinstance(x, Number):
        return Polynomial([x])
    if isinstance(x, (list, tuple, np.ndarray)):
        return Polynomial(x)
    return NotImplemented


# ---------------------------------------------------------------------------


def _abs_conv(a, b):
    return npoly.polymul(np.abs(a), np.abs(b)).real


def _root_bound(rts) -> np.ndarray:
    """Coefficients of ``prod (w + |r|)``: a rounding-error scale for ``prod (w - r)``."""
    rts = np.asarray(rts, dtype=complex)
    if rts.size == 0:
        return np.ones(1)
    return npoly.polyfromroots(-np.abs(rts)).real


def _deflated_bound(ref: np.ndarray, rts) -> np.ndarray:
    """Propagate a coefficient error scale through synthetic division by ``w - r``."""
    for r in rts:
        n = len(ref) - 1
        if n < 1:
            return np.zeros(1)
        q = np.zeros(n)
        q[n - 1] = ref[n]
        for k in range(n - 1, 0, -1):
            q[k - 1] = ref[k] + abs(r) * q[k]
        ref = q
    return ref


def _deflate(num: np.ndarray, ref: np.ndarray, poles: np.ndarray, tol: float):
    """Cancel denominator roots that are (numerically) roots of ``num``.

    Poles are grouped into clusters; for every cluster the numerator is
    divided by the product over the distinct cluster members when the
    remainder is negligible against ``ref`` (a coefficientwise magnitude
    bound of the pre-cancellation terms), then member by member.
    """
    poles = list(poles)
    if not poles or (len(num) == 1 and num[0] == 0):
        return num, poles
    scale = max(abs(p) for p in poles) or 1.0
    arr = np.array(poles, dtype=complex)
    groups = _components(arr, CLUSTER_RTOL, CLUSTER_RTOL * scale)
    keep: list[complex] = []
    for g in groups:
        vals = arr[g]
        uniq: list[list] = []
        for v in vals:
            for u in uniq:
                if abs(u[0] - v) <= _EXACT_RTOL * max(abs(u[0]), abs(v)):
                    u[1] += 1
                    break
            else:
                uniq.append([complex(v), 1])
        while len(num) > 1:
            base = [u for u in uniq if u[1] > 0]
            if not base:
                break
            done = False
            trials = [base] if len(base) > 1 else []
            trials += [[u] for u in base]
            for trial in trials:
                rts = np.array([u[0] for u in trial])
                if len(rts) > len(num) - 1:
                    continue
                ok = True
                for r in rts:
                    mag = npoly.polyval(abs(r), ref).real
                    if abs(npoly.polyval(r, num)) > tol * mag:
                        ok = False
                        break
                if ok:
                    c = npoly.polyfromroots(rts)
                    num = _trim(npoly.polydiv(num, c)[0])
                    ref = _deflated_bound(ref, rts)[: len(num)] + np.abs(num)
                    for u in trial:
                        u[1] -= 1
                    done = True
                    break
            if not done:
                break
        for u in uniq:
            keep.extend([u[0]] * u[1])
    return num, keep


def _group_exact(vals):
    """``(value, multiplicity)`` pairs of a root list under the exact-match tolerance."""
    out: list[list] = []
    for v in np.asarray(vals, dtype=complex).ravel():
        for u in out:
            if abs(u[0] - v) <= _EXACT_RTOL * max(abs(u[0]), abs(v)):
                u[1] += 1
                break
        else:
            out.append([complex(v), 1])
    return [(u[0], u[1]) for u in out]


def _local_taylor(p: "Polynomial", extra_roots, r: complex, n: int) -> np.ndarray:
    """First ``n`` Taylor coefficients at ``r`` of ``p(w) * prod(w - q)`` over ``extra_roots``."""
    if p.roots_known:
        t = np.zeros(n, complex)
        t[0] = p.lead
        roots = np.concatenate([p.roots(), np.asarray(extra_roots, dtype=complex)])
    else:
        # Taylor shift by repeated synthetic division
        c = np.array(p.coef, dtype=complex)
        t = np.zeros(n, complex)
        for k in range(n):
            if len(c) == 0:
                break
            q = np.zeros(max(len(c) - 1, 0), complex)
            acc = 0j
            for j in range(len(c) - 1, -1, -1):
                acc = acc * r + c[j]
                if j:
                    q[j - 1] = acc
            t[k] = acc
            c = q
        roots = np.asarray(extra_roots, dtype=complex)
    for q in roots.ravel():
        t = np.concatenate([[0j], t[:-1]]) + (r - q) * t
    return t


def _cancel_against(p: "Polynomial", poles: np.ndarray):
    """Divide out of ``p`` the poles at which it vanishes (to rounding), to their order."""
    if p.degree < 1 or poles.size == 0:
        return p, poles
    coef = p.coef
    absp = Polynomial(np.abs(coef))
    kept = []
    for r, c in _group_exact(poles):
        t = _local_taylor(Polynomial(coef), (), r, c)
        bound = _local_taylor(absp, (), abs(r), c).real
        k = 0
        while k < c and k < len(coef) - 1 and abs(t[k]) <= _CANCEL_TOL * bound[k]:
            k += 1
        if k:
            coef = _trim(npoly.polydiv(coef, npoly.polyfromroots(np.full(k, r)))[0])
        kept.extend([r] * (c - k))
    return Polynomial(coef), np.array(kept, dtype=complex)


class RationalFunction:
    """Ratio ``N(Omega) / prod(Omega - p_k)`` with complex coefficients.

    Parameters
    ----------
    numerator : Polynomial or array_like
        Numerator polynomial (ascending coefficients).  The overall gain
        lives here; the denominator is monic.
    poles : array_like
        Denominator roots, with multiplicity.
    reduce : bool
        Cancel common numerator/denominator factors on construction.
    """

    __slots__ = ("numerator", "poles")

    def __init__(self, numerator=1.0, poles=(), *, reduce: bool = True, _ref=None, _fixed=()):
        num = numerator if isinstance(numerator, Polynomial) else Polynomial(numerator)
        poles = np.asarray(poles, dtype=complex).ravel()
        # _fixed: poles known not to cancel (kept out of the deflation test)
        fixed = np.asarray(_fixed, dtype=complex).ravel()
        if num.is_zero:
            poles = np.zeros(0, dtype=complex)
        elif reduce and poles.size:
            if num.roots_known and num.degree >= 1:
                common, z, poles = _match_exact(num.roots(), poles)
                if common.size:
                    num = Polynomial.from_roots(z, num.lead)
            if poles.size and num.degree >= 1:
                ref = np.abs(num.coef) if _ref is None else np.asarray(_ref, dtype=float)
                coef, kept = _deflate(num.coef, ref, poles, _CANCEL_TOL)
                if len(kept) != len(poles):
                    num = Polynomial(coef)
                    poles = np.array(kept, dtype=complex)
        if fixed.size and not num.is_zero:
            poles = np.concatenate([poles, fixed])
        self.numerator = num
        self.poles = poles
        self.poles.setflags(write=False)

    # -- construction -------------------------------------------------------
    @classmethod
    def from_coeffs(cls, num, den) -> "RationalFunction":
        """Build from numerator and denominator coefficient arrays (ascending)."""
        den = _as_poly(den)
        if den.is_zero:
            raise DomainError("denominator is identically zero")
        num = _as_poly(num)
        if den.degree == 0:
            return cls(num * (1.0 / den.lead))
        return cls(num * (1.0 / den.lead), den.roots())

    @classmethod
    def from_zpk(cls, zeros, poles, gain) -> "RationalFunction":
        return cls(Polynomial.from_roots(zeros, gain), poles)

    @classmethod
    def constant(cls, c) -> "RationalFunction":
        return cls(Polynomial([c]))

    @classmethod
    def omega(cls) -> "RationalFunction":
        """The identity function ``Omega``."""
        return cls(Polynomial([0.0, 1.0], roots=[0.0]))

    # -- properties ---------------------------------------------------------
    @property
    def denominator(self) -> Polynomial:
        return Polynomial.from_roots(self.poles)

    @property
    def zeros(self) -> np.ndarray:
        return self.numerator.roots()

    @property
    def gain(self) -> complex:
        return self.numerator.lead

    @property
    def is_zero(self) -> bool:
        return self.numerator.is_zero

    @property
    def relative_degree(self) -> int:
        """``deg(den) - deg(num)``; large for the zero function."""
        if self.is_zero:
            return 10**6
        return len(self.poles) - self.numerator.degree

    @property
    def proper(self) -> bool:
        return self.relative_degree >= 0

    @property
    def strictly_proper(self) -> bool:
        return self.relative_degree >= 1

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        out = npoly.polyval(w, self.numerator.coef)
        for p in self.poles:
            out = out / (w - p)
        return out

    # -- algebra ------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, RationalFunction):
            return other
        if isinstance(other, Polynomial):
            return RationalFunction(other)
        if isinstance(other, Number):
            return RationalFunction.constant(other)
        return NotImplemented

    def __neg__(self):
        return RationalFunction(-self.numerator, self.poles, reduce=False)

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        common, f_only, g_only = _match_exact(self.poles, other.poles, _SNAP_RTOL)
        pf = npoly.polyfromroots(g_only) if g_only.size else np.ones(1, complex)
        pg = npoly.polyfromroots(f_only) if f_only.size else np.ones(1, complex)
        a = npoly.polymul(self.numerator.coef, pf)
        b = npoly.polymul(other.numerator.coef, pg)
        ref = npoly.polyadd(_abs_conv(self.numerator.coef, _root_bound(g_only)),
                            _abs_conv(other.numerator.coef, _root_bound(f_only))).real
        num = npoly.polyadd(a, b)
        n = len(num)
        ref = np.pad(ref, (0, max(0, n - len(ref))))[:n]
        # drop leading coefficients that cancelled to rounding level
        while len(num) > 1 and abs(num[-1]) <= 64 * _EPS * ref[len(num) - 1]:
            num = num[:-1]
        if len(num) == 1 and abs(num[0]) <= 64 * _EPS * ref[0]:
            return RationalFunction(0.0)
        ref = ref[: len(num)]
        # Only shared or nearly shared poles can cancel: at a pole of one term
        # alone the other term vanishes and the reduced numerator does not.
        # Exactly shared poles are tested on local expansions of the factored
        # terms, which is far sharper than a coefficient bound.
        kept = []
        for r, c in _group_exact(common):
            ta = _local_taylor(self.numerator, g_only, r, c)
            tb = _local_taylor(other.numerator, f_only, r, c)
            k = 0
            while k < c and abs(ta[k] + tb[k]) <= _ADD_TOL * (abs(ta[k]) + abs(tb[k])):
                k += 1
            if k:
                rts = np.full(k, r)
                num = _trim(npoly.polydiv(num, npoly.polyfromroots(rts))[0])
                ref = _deflated_bound(ref, rts)[: len(num)] + np.abs(num)
            kept.extend([r] * (c - k))
        poles = np.concatenate([np.array(kept, dtype=complex), f_only, g_only])
        return RationalFunction(Polynomial(num), poles, reduce=False)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if self.is_zero or other.is_zero:
            return RationalFunction(0.0)
        nf, ng = self.numerator, other.numerator
        pf, pg = self.poles, other.poles
        # exact cancellation of known numerator roots against the other's poles
        if nf.roots_known and nf.degree >= 1 and pg.size:
            c, z, pg = _match_exact(nf.roots(), pg)
            if c.size:
                nf = Polynomial.from_roots(z, nf.lead)
        if ng.roots_known and ng.degree >= 1 and pf.size:
            c, z, pf = _match_exact(ng.roots(), pf)
            if c.size:
                ng = Polynomial.from_roots(z, ng.lead)
        # Remaining cancellations can only pair poles of one factor with
        # zeros of the other's numerator; test each on that numerator alone.
        if not nf.roots_known:
            nf, pg = _cancel_against(nf, pg)
        if not ng.roots_known:
            ng, pf = _cancel_against(ng, pf)
        return RationalFunction(nf * ng, np.concatenate([pf, pg]), reduce=False)

    __rmul__ = __mul__

    def inverse(self) -> "RationalFunction":
        if self.is_zero:
            raise DomainError("division by the zero rational function")
        lead = self.numerator.lead
        num = Polynomial.from_roots(self.poles, 1.0 / lead)
        return RationalFunction(num, self.zeros, reduce=False)

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self * other.inverse()

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other * self.inverse()

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            return NotImplemented
        out = RationalFunction.constant(1.0)
        for _ in range(k):
            out = out * self
        return out

    def reflect(self) -> "RationalFunction":
        """``g(Omega) = conj(f(conj(Omega)))``."""
        return RationalFunction(self.numerator.conj(), np.conj(self.poles), reduce=False)

    def rescale(self, s: float) -> "RationalFunction":
        """Return ``g(w) = f(s * w)``."""
        n = len(self.poles)
        c = self.numerator.coef * s ** np.arange(len(self.numerator.coef)) / s**n
        r = None if self.numerator._roots is None else self.numerator._roots / s
        return RationalFunction(Polynomial(c, roots=r), self.poles / s, reduce=False)

    def scale_value(self, c) -> "RationalFunction":
        return RationalFunction(self.numerator * c, self.poles, reduce=False)

    def polynomial_division(self):
        """Quotient and remainder numerator of ``N / D``."""
        den = npoly.polyfromroots(self.poles) if self.poles.size else np.ones(1, complex)
        q, r = npoly.polydiv(self.numerator.coef, den)
        return Polynomial(q), Polynomial(r)

    def __repr__(self):
        return (f"RationalFunction(num={np.array2string(self.numerator.coef, precision=4)}, "
                f"poles={np.array2string(self.poles, precision=4)})")


def reflect(f: RationalFunction) -> RationalFunction:
    """Para-hermitian reflection ``conj(f(conj(Omega)))``."""
    return f.reflect()


# ---------------------------------------------------------------------------
# partial fractions


@dataclass(frozen=True)
class PoleTerm:
    """Principal part ``sum_j residues[j] / (Omega - pole)**(j+1)``."""

    pole: complex
    multiplicity: int
    residues: tuple

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        out = np.zeros_like(w)
        for j, a in enumerate(self.residues):
            out = out + a / (w - self.pole) ** (j + 1)
        return out


@dataclass(frozen=True)
class PartialFractionExpansion:
    polynomial_part: Polynomial
    terms: tuple

    def __call__(self, w):
        out = self.polynomial_part(w)
        for t in self.terms:
            out = out + t(w)
        return out

    def select(self, predicate) -> "PartialFractionExpansion":
        return PartialFractionExpansion(Polynomial([0.0]), tuple(t for t in self.terms if predicate(t.pole)))

    def to_rational(self) -> RationalFunction:
        return _terms_to_rational(self.terms, self.polynomial_part)


def _terms_to_rational(terms: Sequence[PoleTerm], poly: Polynomial | None = None) -> RationalFunction:
    poles = [t.pole for t in terms for _ in range(t.multiplicity)]
    if not poles:
        return RationalFunction(poly if poly is not None else 0.0)
    num = np.zeros(1, dtype=complex)
    ref = np.zeros(1)
    for i, t in enumerate(terms):
        others = [u.pole for k, u in enumerate(terms) if k != i for _ in range(u.multiplicity)]
        base = npoly.polyfromroots(others) if others else np.ones(1, complex)
        for j, a in enumerate(t.residues):
            extra = t.multiplicity - (j + 1)
            c = npoly.polymul(base, npoly.polyfromroots([t.pole] * extra)) if extra else base
            num = npoly.polyadd(num, a * c)
            ref = npoly.polyadd(ref, abs(a) * _root_bound(others + [t.pole] * extra)).real
    if poly is not None and not poly.is_zero:
        d = npoly.polyfromroots(poles)
        num = npoly.polyadd(num, npoly.polymul(poly.coef, d))
        ref = npoly.polyadd(ref, _abs_conv(poly.coef, _root_bound(poles))).real
    ref = np.pad(ref, (0, max(0, len(num) - len(ref))))[: len(num)]
    while len(num) > 1 and abs(num[-1]) <= 64 * _EPS * ref[len(num) - 1]:
        num = num[:-1]
    # principal parts fix every pole order, so nothing can cancel
    return RationalFunction(Polynomial(num), poles, reduce=False)


def _log_derivs(x: complex, others: Sequence[tuple[complex, int]], order: int) -> list[complex]:
    """Derivatives of ``u(w) = prod (w - q)^(-m)`` at ``x`` up to ``order``."""
    u0 = 1.0 + 0j
    for q, m in others:
        u0 /= (x - q) ** m
    lam = [0j] * (order + 1)
    for n in range(1, order + 1):
        s = 0j
        for q, m in others:
            s += m / (x - q) ** n
        lam[n] = -((-1) ** (n - 1)) * math.factorial(n - 1) * s
    u = [u0]
    for n in range(order):
        v = 0j
        for i in range(n + 1):
            v += math.comb(n, i) * u[i] * lam[n + 1 - i]
        u.append(v)
    return u


def principal_parts(num: Polynomial, poles: Sequence[tuple[complex, int]]) -> list[PoleTerm]:
    """Principal parts of ``num / prod (w - p)^m`` at every listed pole."""
    terms = []
    for i, (p, k) in enumerate(poles):
        others = [poles[j] for j in range(len(poles)) if j != i]
        u = _log_derivs(p, others, k - 1)
        nd = [num]
        for _ in range(k - 1):
            nd.append(nd[-1].deriv())
        nvals = [d(p) for d in nd]
        coeffs = []
        for j in range(k):
            h = 0j
            for i2 in range(j + 1):
                h += math.comb(j, i2) * nvals[i2] * u[j - i2]
            coeffs.append(h / math.factorial(j))
        # coeffs[j] multiplies (w - p)^(j - k)
        residues = tuple(complex(coeffs[k - 1 - j]) for j in range(k))
        terms.append(PoleTerm(complex(p), k, residues))
    return terms


def partial_fractions(f: RationalFunction) -> PartialFractionExpansion:
    """Partial-fraction expansion with poles clustered at ``CLUSTER_RTOL``.

    Raises
    ------
    DomainError
        If a (clustered) pole has multiplicity above ``MAX_POLE_ORDER``.
    """
    q, _ = f.polynomial_division()
    if f.is_zero or f.poles.size == 0:
        return PartialFractionExpansion(q if not f.is_zero else Polynomial([0.0]), ())
    clustered = cluster_roots(f.poles)
    for p, m in clustered:
        if m > MAX_POLE_ORDER:
            raise DomainError(f"pole of order {m} at {p} exceeds the supported order {MAX_POLE_ORDER}")
    return PartialFractionExpansion(q, tuple(principal_parts(f.numerator, clustered)))
