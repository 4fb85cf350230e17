"""Forward-mode arithmetic for exact mixed partial derivatives.

A CrossDual carries one coefficient per subset of up to eight tagged
variables: the coefficient of subset S is the mixed partial of the
computed quantity with respect to the variables in S, each variable
differentiated exactly once (the empty-set coefficient is the plain
value).  Multiplication follows the Leibniz rule, which on the subset
lattice is a convolution over complementary submask pairs, and applying
an elementary scalar function follows the chain rule summed over set
partitions of each subset.  Both rules are closed on the lattice
precisely because no variable is ever differentiated twice.

The module also hosts the ordinary-derivative tables of the elementary
functions (ElementaryTable) and two entry points used throughout the
package: cross_partial, which seeds a point and reads one mixed partial
off a function evaluation, and fd_oracle, a nested central-difference
estimate used as an independent check in the tests.

The coefficient routines (lattice_mul, lattice_compose) accept arrays
whose last axis is the 2^t subset axis, so batches of lattice values can
be pushed through a network with plain numpy arithmetic.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
import numpy.polynomial.polynomial as npoly
from scipy import special

MAX_TAGS = 8

_SQRT2 = math.sqrt(2.0)
_ASIN_CLAMP = 1.0 - 1e-9


class CapacityError(ValueError):
    """More tagged variables were requested than the lattice supports."""


class TagMismatchError(ValueError):
    """Binary operation between CrossDuals with different tag universes."""


class SingularityError(ZeroDivisionError):
    """Division or reciprocal taken at a value of zero."""


class DomainError(ValueError):
    """An elementary function was evaluated outside its domain."""

    def __init__(self, fname: str, value: float, constraint: str):
        self.fname = fname
        self.value = value
        self.constraint = constraint
        super().__init__(f"{fname} evaluated at {value!r}, which violates {constraint}")


# ---------------------------------------------------------------------------
# Subset-lattice index tables (memoized per tag count)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _submask_pairs(t: int):
    """Per mask S, the aligned index arrays (A, S ^ A) over all submasks A."""
    pairs = []
    for s in range(1 << t):
        subs = []
        a = s
        while True:
            subs.append(a)
            if a == 0:
                break
            a = (a - 1) & s
        idx = np.asarray(subs, dtype=np.intp)
        pairs.append((idx, s ^ idx))
    return pairs


def _set_partitions(bits: tuple[int, ...]):
    """Yield set partitions of ``bits``; each block is encoded as a bitmask."""
    if not bits:
        yield ()
        return
    first, rest = bits[0], bits[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + (part[i] | 1 << first,) + part[i + 1 :]
        yield part + (1 << first,)


@lru_cache(maxsize=None)
def _partitions(t: int):
    """Per mask S, the list of (block count, block masks) over partitions of S."""
    table = []
    for s in range(1 << t):
        bits = tuple(i for i in range(t) if s >> i & 1)
        table.append(tuple((len(p), p) for p in _set_partitions(bits)))
    return table


def lattice_mul(a: np.ndarray, b: np.ndarray, t: int) -> np.ndarray:
    """Leibniz product of two coefficient arrays (subset axis last)."""
    k = 1 << t
    if a.shape[-1] != k or b.shape[-1] != k:
        raise TagMismatchError("coefficient arrays do not match the tag count")
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (k,)
    out = np.empty(shape, dtype=np.float64)
    for s, (ia, ib) in enumerate(_submask_pairs(t)):
        out[..., s] = np.sum(a[..., ia] * b[..., ib], axis=-1)
    return out


def lattice_compose(table: "ElementaryTable", g: np.ndarray, t: int) -> np.ndarray:
    """Chain rule: coefficients of table(g) from the coefficients of g."""
    x0 = g[..., 0]
    table.check(x0)
    deriv = table.series(t, x0)
    out = np.empty_like(g, dtype=np.float64)
    out[..., 0] = deriv[0]
    parts = _partitions(t)
    for s in range(1, 1 << t):
        acc = np.zeros_like(x0, dtype=np.float64)
        for m, blocks in parts[s]:
            term = deriv[m]
            for blk in blocks:
                term = term * g[..., blk]
            acc = acc + term
        out[..., s] = acc
    return out


# ---------------------------------------------------------------------------
# Elementary function derivative tables
# ---------------------------------------------------------------------------


class ElementaryTable:
    """Ordinary-derivative table for one scalar elementary function.

    ``series(k, x)`` returns the list [f(x), f'(x), ..., f^(k)(x)], each
    entry shaped like ``x``; ``derivs(k, x)`` returns the order-k entry
    alone.  ``check(x)`` raises DomainError (or SingularityError) when x
    lies outside the function's domain; composition calls it first.
    """

    __slots__ = ("name", "_series", "_check")

    def __init__(self, name: str, series: Callable, check: Callable | None = None):
        self.name = name
        self._series = series
        self._check = check

    def series(self, k: int, x) -> list:
        return self._series(k, np.asarray(x, dtype=np.float64))

    def derivs(self, k: int, x):
        return self.series(k, x)[k]

    def check(self, x) -> None:
        if self._check is not None:
            self._check(np.asarray(x, dtype=np.float64))

    def __repr__(self) -> str:  # pragma: no cover
        return f"ElementaryTable({self.name!r})"


def _first_offender(x: np.ndarray, bad: np.ndarray) -> float:
    return float(np.atleast_1d(x)[np.atleast_1d(bad)][0])


def _check_positive(name: str, constraint: str = "x > 0"):
    def check(x):
        bad = ~(x > 0)
        if np.any(bad):
            raise DomainError(name, _first_offender(x, bad), constraint)

    return check


def _check_nonzero_singular(x):
    if np.any(x == 0.0):
        raise SingularityError("reciprocal of a value of zero")


def _check_unit_interval(name: str):
    def check(x):
        bad = np.abs(x) > 1.0 + 1e-6
        if np.any(bad):
            raise DomainError(name, _first_offender(x, bad), "|x| <= 1")

    return check


def _poly_ladder(start, step, n: int = MAX_TAGS):
    """Polynomial ladder L[1..n] with L[m+1] = step(L[m], m); L[0] unused."""
    polys: list = [None, np.asarray(start, dtype=np.float64)]
    for m in range(1, n):
        polys.append(step(polys[m], m))
    return polys


_X = np.asarray([0.0, 1.0])  # the monomial x, ascending coefficients

# tan' = 1 + tan^2, so every derivative is a polynomial in u = tan x.
_TAN_POLY = _poly_ladder([1, 0, 1], lambda c, m: npoly.polymul(npoly.polyder(c), [1, 0, 1]))
# tanh' = 1 - tanh^2
_TANH_POLY = _poly_ladder([1, 0, -1], lambda c, m: npoly.polymul(npoly.polyder(c), [1, 0, -1]))
# sigmoid' = u(1 - u) in u = sigmoid(x)
_SIG_POLY = _poly_ladder([0, 1, -1], lambda c, m: npoly.polymul(npoly.polyder(c), [0, 1, -1]))
# d^m arcsin = Q_m(x) (1-x^2)^(1/2-m):  Q_{m+1} = Q_m'(1-x^2) + (2m-1) x Q_m
_ASIN_POLY = _poly_ladder(
    [1],
    lambda c, m: npoly.polyadd(
        npoly.polymul(npoly.polyder(c), [1, 0, -1]), (2 * m - 1) * npoly.polymul(_X, c)
    ),
)
# d^m arctan = P_m(x) (1+x^2)^-m:  P_{m+1} = P_m'(1+x^2) - 2m x P_m
_ATAN_POLY = _poly_ladder(
    [1],
    lambda c, m: npoly.polysub(
        npoly.polymul(npoly.polyder(c), [1, 0, 1]), 2 * m * npoly.polymul(_X, c)
    ),
)
# d^m erf = E_m(x) exp(-x^2):  E_{m+1} = E_m' - 2x E_m
_ERF_POLY = _poly_ladder(
    [2.0 / math.sqrt(math.pi)],
    lambda c, m: npoly.polysub(npoly.polyder(c), 2 * npoly.polymul(_X, c)),
)


def _exp_series(k, x):
    e = np.exp(x)
    return [e] * (k + 1)


def _log_series(k, x):
    vals = [np.log(x)]
    for m in range(1, k + 1):
        vals.append((-1.0) ** (m - 1) * math.factorial(m - 1) * x ** (-float(m)))
    return vals


def _sin_series(k, x):
    s, c = np.sin(x), np.cos(x)
    cyc = (s, c, -s, -c)
    return [cyc[m % 4] for m in range(k + 1)]


def _cos_series(k, x):
    s, c = np.sin(x), np.cos(x)
    cyc = (c, -s, -c, s)
    return [cyc[m % 4] for m in range(k + 1)]


def _sinh_series(k, x):
    s, c = np.sinh(x), np.cosh(x)
    return [s if m % 2 == 0 else c for m in range(k + 1)]


def _tan_series(k, x):
    u = np.tan(x)
    return [u] + [npoly.polyval(u, _TAN_POLY[m]) for m in range(1, k + 1)]


def _tanh_series(k, x):
    u = np.tanh(x)
    return [u] + [npoly.polyval(u, _TANH_POLY[m]) for m in range(1, k + 1)]


def _sigmoid_series(k, x):
    u = special.expit(x)
    return [u] + [npoly.polyval(u, _SIG_POLY[m]) for m in range(1, k + 1)]


def _softplus_series(k, x):
    vals = [np.logaddexp(0.0, x)]
    if k >= 1:
        vals.extend(_sigmoid_series(k - 1, x))
    return vals


def _arcsin_series(k, x):
    x = np.clip(x, -_ASIN_CLAMP, _ASIN_CLAMP)
    vals = [np.arcsin(x)]
    if k >= 1:
        w = 1.0 - x * x
        for m in range(1, k + 1):
            vals.append(npoly.polyval(x, _ASIN_POLY[m]) * w ** (0.5 - m))
    return vals


def _arccos_series(k, x):
    tail = _arcsin_series(k, x)
    return [np.arccos(np.clip(x, -_ASIN_CLAMP, _ASIN_CLAMP))] + [-v for v in tail[1:]]


def _arctan_series(k, x):
    vals = [np.arctan(x)]
    if k >= 1:
        w = 1.0 + x * x
        for m in range(1, k + 1):
            vals.append(npoly.polyval(x, _ATAN_POLY[m]) * w ** (-float(m)))
    return vals


def _erf_series(k, x):
    vals = [special.erf(x)]
    if k >= 1:
        e = np.exp(-x * x)
        for m in range(1, k + 1):
            vals.append(npoly.polyval(x, _ERF_POLY[m]) * e)
    return vals


def _abs_series(k, x):
    # Subgradient convention: derivative 0 at the kink, all higher orders 0.
    vals = [np.abs(x)]
    if k >= 1:
        vals.append(np.sign(x))
        zero = np.zeros_like(x)
        vals.extend([zero] * (k - 1))
    return vals


def _recip_series(k, x):
    vals = []
    for m in range(k + 1):
        vals.append((-1.0) ** m * math.factorial(m) * x ** (-float(m + 1)))
    return vals


def _power_series_fn(p: float):
    def series(k, x):
        vals = [np.power(x, p)]
        c = 1.0
        for m in range(1, k + 1):
            c *= p - (m - 1)
            if c == 0.0:
                # Integer exponent exhausted; avoids 0^(negative) at x = 0.
                vals.append(np.zeros_like(x))
            else:
                vals.append(c * np.power(x, p - m))
        return vals

    return series


EXP = ElementaryTable("exp", _exp_series)
LOG = ElementaryTable("log", _log_series, _check_positive("log"))
SIN = ElementaryTable("sin", _sin_series)
COS = ElementaryTable("cos", _cos_series)
TAN = ElementaryTable("tan", _tan_series)
SINH = ElementaryTable("sinh", _sinh_series)
TANH = ElementaryTable("tanh", _tanh_series)
ARCSIN = ElementaryTable("arcsin", _arcsin_series, _check_unit_interval("arcsin"))
ARCCOS = ElementaryTable("arccos", _arccos_series, _check_unit_interval("arccos"))
ARCTAN = ElementaryTable("arctan", _arctan_series)
ERF = ElementaryTable("erf", _erf_series)
ABS = ElementaryTable("abs", _abs_series)
SIGMOID = ElementaryTable("sigmoid", _sigmoid_series)
SOFTPLUS = ElementaryTable("softplus", _softplus_series)
RECIPROCAL = ElementaryTable("reciprocal", _recip_series, _check_nonzero_singular)


def _check_nonzero_domain(x):
    if np.any(x == 0.0):
        raise DomainError("power", 0.0, "x != 0 for negative exponents")


@lru_cache(maxsize=None)
def power_table(p: float) -> ElementaryTable:
    """Derivative table for x^p (guards the integer-exponent zero run)."""
    p = float(p)
    if p.is_integer():
        check = None if p >= 0 else _check_nonzero_domain
    else:
        check = _check_positive("power", "x > 0 for non-integer exponents")
    return ElementaryTable(f"power[{p!r}]", _power_series_fn(p), check)


SQRT = ElementaryTable("sqrt", _power_series_fn(0.5), _check_positive("sqrt"))


@lru_cache(maxsize=None)
def max_const_table(c: float) -> ElementaryTable:
    """Derivative table for max(x, c) with subderivative 0 at the kink."""
    c = float(c)

    def series(k, x):
        vals = [np.maximum(x, c)]
        if k >= 1:
            vals.append((x > c).astype(np.float64))
            zero = np.zeros_like(x)
            vals.extend([zero] * (k - 1))
        return vals

    return ElementaryTable(f"max[{c!r}]", series)


#: Fixed tables by name; power and max-with-constant are parametrized factories.
TABLES = {
    t.name: t
    for t in (
        EXP, LOG, SIN, COS, TAN, SINH, TANH, ARCSIN, ARCCOS, ARCTAN,
        SQRT, ABS, ERF, SIGMOID, SOFTPLUS, RECIPROCAL,
    )
}


# ---------------------------------------------------------------------------
# CrossDual scalar type
# ---------------------------------------------------------------------------


class CrossDual:
    """A value together with its mixed partials over tagged variables.

    ``coeffs[s]`` is the mixed partial with respect to the tag subset
    whose bitmask is ``s``; ``coeffs[0]`` is the value itself.  Instances
    are treated as immutable; all arithmetic returns new objects.
    """

    __slots__ = ("ntags", "coeffs")

    # Keep numpy scalars from absorbing us into object arrays.
    __array_ufunc__ = None

    def __init__(self, ntags: int, coeffs):
        if ntags > MAX_TAGS:
            raise CapacityError(f"{ntags} tags requested, the lattice caps at {MAX_TAGS}")
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (1 << ntags,):
            raise ValueError(f"expected {1 << ntags} coefficients, got shape {coeffs.shape}")
        self.ntags = ntags
        self.coeffs = coeffs

    @classmethod
    def constant(cls, value: float, ntags: int) -> "CrossDual":
        c = np.zeros(1 << ntags)
        c[0] = value
        return cls(ntags, c)

    @classmethod
    def variable(cls, value: float, tag: int, ntags: int) -> "CrossDual":
        if not 0 <= tag < ntags:
            raise ValueError(f"tag {tag} outside universe of {ntags}")
        c = np.zeros(1 << ntags)
        c[0] = value
        c[1 << tag] = 1.0
        return cls(ntags, c)

    @classmethod
    def linear(cls, value: float, ntags: int, first_order: dict[int, float]) -> "CrossDual":
        """Seed with arbitrary first-order coefficients {tag: weight}."""
        c = np.zeros(1 << ntags)
        c[0] = value
        for tag, w in first_order.items():
            if not 0 <= tag < ntags:
                raise ValueError(f"tag {tag} outside universe of {ntags}")
            c[1 << tag] = w
        return cls(ntags, c)

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    def partial(self, tags: Iterable[int]) -> float:
        """Mixed partial with respect to the given tag slots."""
        mask = 0
        for tag in tags:
            if not 0 <= tag < self.ntags:
                raise ValueError(f"tag {tag} outside universe of {self.ntags}")
            mask |= 1 << tag
        return float(self.coeffs[mask])

    def _lift(self, other):
        if isinstance(other, CrossDual):
            if other.ntags != self.ntags:
                raise TagMismatchError(
                    f"operands carry {self.ntags} and {other.ntags} tags"
                )
            return other
        if isinstance(other, (int, float, np.integer, np.floating)):
            return CrossDual.constant(float(other), self.ntags)
        return None

    def __add__(self, other):
        o = self._lift(other)
        if o is None:
            return NotImplemented
        return CrossDual(self.ntags, self.coeffs + o.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        if o is None:
            return NotImplemented
        return CrossDual(self.ntags, self.coeffs - o.coeffs)

    def __rsub__(self, other):
        o = self._lift(other)
        if o is None:
            return NotImplemented
        return CrossDual(self.ntags, o.coeffs - self.coeffs)

    def __mul__(self, other):
        o = self._lift(other)
        if o is None:
            return NotImplemented
        if isinstance(other, (int, float, np.integer, np.floating)):
            return CrossDual(self.ntags, self.coeffs * float(other))
        return CrossDual(self.ntags, lattice_mul(self.coeffs, o.coeffs, self.ntags))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            if float(other) == 0.0:
                raise SingularityError("division by zero")
            return CrossDual(self.ntags, self.coeffs / float(other))
        o = self._lift(other)
        if o is None:
            return NotImplemented
        quot = self * compose(RECIPROCAL, o)
        # a*(1/b) rounds twice; pin the value slot to the true quotient
        # so plain and dual evaluation stay bit-identical
        quot.coeffs[0] = self.coeffs[0] / o.coeffs[0]
        return quot

    def __rtruediv__(self, other):
        o = self._lift(other)
        if o is None:
            return NotImplemented
        quot = o * compose(RECIPROCAL, self)
        quot.coeffs[0] = o.coeffs[0] / self.coeffs[0]
        return quot

    def __neg__(self):
        return CrossDual(self.ntags, -self.coeffs)

    def __pos__(self):
        return self

    def __abs__(self):
        return compose(ABS, self)

    def __pow__(self, p):
        if isinstance(p, CrossDual):
            return exp(p * log(self))
        return compose(power_table(float(p)), self)

    def __rpow__(self, base):
        b = float(base)
        if b <= 0.0:
            raise DomainError("pow", b, "base > 0 for a tagged exponent")
        return exp(self * math.log(b))

    def __repr__(self) -> str:
        return f"CrossDual(value={self.value!r}, ntags={self.ntags})"


def compose(u: ElementaryTable, g: CrossDual) -> CrossDual:
    """Coefficients of u(g) by the chain rule over set partitions."""
    if not isinstance(g, CrossDual):
        return u.derivs(0, g)
    return CrossDual(g.ntags, lattice_compose(u, g.coeffs, g.ntags))


def mul(a, b):
    """Leibniz product (operator form: ``a * b``)."""
    return a * b


def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def div(a, b):
    return a / b


def neg(a):
    return -a


# Scalar math that dispatches on CrossDual versus plain numbers, so the
# same formula source evaluates both ways.  Plain numbers read the
# table's order-0 entry rather than libm: np.exp and math.exp disagree
# by an ulp on some inputs, and the value slice of a dual evaluation is
# contracted to match plain evaluation bit for bit.

def _plain(table: ElementaryTable, x) -> float:
    return float(table.derivs(0, x))


def exp(x):
    return compose(EXP, x) if isinstance(x, CrossDual) else _plain(EXP, x)


def log(x):
    if isinstance(x, CrossDual):
        return compose(LOG, x)
    if x <= 0:
        raise DomainError("log", float(x), "x > 0")
    return _plain(LOG, x)


def sin(x):
    return compose(SIN, x) if isinstance(x, CrossDual) else _plain(SIN, x)


def cos(x):
    return compose(COS, x) if isinstance(x, CrossDual) else _plain(COS, x)


def tan(x):
    return compose(TAN, x) if isinstance(x, CrossDual) else _plain(TAN, x)


def sinh(x):
    return compose(SINH, x) if isinstance(x, CrossDual) else _plain(SINH, x)


def tanh(x):
    return compose(TANH, x) if isinstance(x, CrossDual) else _plain(TANH, x)


def arcsin(x):
    if isinstance(x, CrossDual):
        return compose(ARCSIN, x)
    return _plain(ARCSIN, max(-_ASIN_CLAMP, min(_ASIN_CLAMP, x)))


def arccos(x):
    if isinstance(x, CrossDual):
        return compose(ARCCOS, x)
    return _plain(ARCCOS, max(-_ASIN_CLAMP, min(_ASIN_CLAMP, x)))


def arctan(x):
    return compose(ARCTAN, x) if isinstance(x, CrossDual) else _plain(ARCTAN, x)


def sqrt(x):
    if isinstance(x, CrossDual):
        return compose(SQRT, x)
    if x <= 0:
        raise DomainError("sqrt", float(x), "x > 0")
    return _plain(SQRT, x)


def erf(x):
    return compose(ERF, x) if isinstance(x, CrossDual) else _plain(ERF, x)


def sigmoid(x):
    return compose(SIGMOID, x) if isinstance(x, CrossDual) else _plain(SIGMOID, x)


def softplus(x):
    if isinstance(x, CrossDual):
        return compose(SOFTPLUS, x)
    return _plain(SOFTPLUS, x)


def maximum(x, c: float):
    """max(x, c) with subderivative 0 at the kink."""
    if isinstance(x, CrossDual):
        return compose(max_const_table(float(c)), x)
    return x if x > c else type(x)(c)


# ---------------------------------------------------------------------------
# Seeding and the two derivative entry points
# ---------------------------------------------------------------------------


def seed(point: Sequence[float], tags: Iterable[int]) -> list[CrossDual]:
    """Lift a point to CrossDuals, tagging the given coordinate indices.

    Tag slots are assigned in sorted coordinate order; untagged entries
    become constants (value only, all derivative coefficients zero).
    """
    tag_list = sorted(set(int(i) for i in tags))
    if len(tag_list) > MAX_TAGS:
        raise CapacityError(f"{len(tag_list)} tags requested, the lattice caps at {MAX_TAGS}")
    n = len(point)
    if tag_list and (tag_list[0] < 0 or tag_list[-1] >= n):
        raise ValueError(f"tagged index outside the point's {n} coordinates")
    slot = {idx: i for i, idx in enumerate(tag_list)}
    t = len(tag_list)
    out = []
    for j, v in enumerate(point):
        if j in slot:
            out.append(CrossDual.variable(float(v), slot[j], t))
        else:
            out.append(CrossDual.constant(float(v), t))
    return out


def cross_partial(f: Callable, point: Sequence[float], indices: Iterable[int]) -> float:
    """The mixed partial of f at ``point`` over the given coordinate set.

    Each index is differentiated exactly once.  ``f`` receives the full
    point as a list of CrossDuals (untagged coordinates as constants) and
    must return a scalar; a plain-number return means f ignored every
    tagged coordinate, so the mixed partial is zero.
    """
    duals = seed(point, indices)
    y = f(duals)
    if isinstance(y, CrossDual):
        return float(y.coeffs[-1])
    if len(set(indices)) == 0:
        return float(y)
    return 0.0


def fd_oracle(f: Callable, point: Sequence[float], indices: Iterable[int], h: float = 1e-3) -> float:
    """Nested central-difference estimate of the same mixed partial.

    Independent of the lattice arithmetic; intended for tests.  Accuracy
    degrades with subset size, so sizes above 3 are not recommended.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    order = sorted(set(int(i) for i in indices))
    base = np.asarray(point, dtype=np.float64)

    def rec(x: np.ndarray, depth: int) -> float:
        if depth == len(order):
            return float(f(x))
        i = order[depth]
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        return (rec(xp, depth + 1) - rec(xm, depth + 1)) / (2.0 * h)

    return rec(base, 0)
