"""Collisional-ionization model of a p-i-n avalanche diode.

Mean multiplication, single-carrier avalanche probability, thermal and
tunneling generation rates, and the resulting dark count rate.  Everything is
in SI units.  Positions run from the p-side edge of the intrinsic
(depletion) layer at ``x = 0`` to ``L_dep``; the absorption layer follows at
``[L_dep, L_dep + L_ab]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy import integrate

from .errors import BreakdownRegime, DomainError, FormatError, NoConvergence, NonFinite, UnknownLayer
from .kvtext import format_value, parse_kv

Q_E = 1.602176634e-19  # C
HBAR = 1.054571817e-34  # J s
H_PLANCK = 6.62607015e-34  # J s
M_E = 9.1093837015e-31  # kg
EV = Q_E  # J per eV

QUAD_EPSREL = 1e-8
BREAKDOWN_EPS = 1e-12
LAYERS = ("depletion", "absorption")


@dataclass(frozen=True)
class DeviceParams:
    alpha_e: float
    alpha_h: float
    L_dep: float
    L_ab: float
    area: float
    field_profile: tuple[tuple[float, float], ...]
    E_g: float
    m_r: float
    m_lh: float
    m_c: float
    N_trap: float
    N_v: float
    N_c: float
    E_B1: float
    E_B2: float
    n_i: Mapping[str, float] = field(default_factory=dict)
    tau_i: Mapping[str, float] = field(default_factory=dict)
    q: float = Q_E
    hbar: float = HBAR
    h: float = H_PLANCK

    def __post_init__(self):
        object.__setattr__(self, "field_profile", tuple((float(x), float(f)) for x, f in self.field_profile))
        object.__setattr__(self, "n_i", _FrozenLayers(self.n_i))
        object.__setattr__(self, "tau_i", _FrozenLayers(self.tau_i))
        for name in ("L_dep", "L_ab", "area", "E_g", "m_r", "m_lh", "m_c", "N_v", "N_c", "E_B1", "E_B2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be finite and > 0, got {v!r}")
        for name in ("alpha_e", "alpha_h", "N_trap"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {v!r}")
        if len(self.field_profile) < 2:
            raise DomainError("field_profile needs at least 2 samples")
        xs = [x for x, _ in self.field_profile]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise DomainError("field_profile positions must be strictly increasing")
        for x, f in self.field_profile:
            if not (math.isfinite(x) and math.isfinite(f) and f >= 0):
                raise DomainError(f"field_profile sample ({x}, {f}) must be finite with F >= 0")
        for layer in LAYERS:
            if layer not in self.n_i or layer not in self.tau_i:
                raise DomainError(f"n_i and tau_i need a value for layer {layer!r}")
            if not self.n_i[layer] >= 0:
                raise DomainError(f"n_i[{layer}] must be >= 0")
            if not self.tau_i[layer] > 0:
                raise DomainError(f"tau_i[{layer}] must be > 0")

    @property
    def delta(self) -> float:
        return self.alpha_e - self.alpha_h

    def field_at(self, x):
        """Piecewise-linear field; zero outside the sampled range."""
        xs, fs = self._profile_arrays()
        return np.interp(x, xs, fs, left=0.0, right=0.0)

    def _profile_arrays(self):
        return _profile_arrays(self.field_profile)

    def scaled_field(self, factor: float) -> "DeviceParams":
        prof = tuple((x, f * factor) for x, f in self.field_profile)
        return _replace(self, field_profile=prof)


class _FrozenLayers(dict):
    """Hashable read-only per-layer mapping so DeviceParams stays hashable."""

    def __hash__(self):
        return hash(tuple(sorted(self.items())))

    def _ro(self, *a, **k):
        raise TypeError("per-layer values are read-only")

    __setitem__ = __delitem__ = update = pop = popitem = clear = setdefault = _ro


@lru_cache(maxsize=64)
def _profile_arrays(profile):
    arr = np.asarray(profile, dtype=float)
    return arr[:, 0].copy(), arr[:, 1].copy()


def _replace(params: DeviceParams, **changes) -> DeviceParams:
    kw = {f.name: getattr(params, f.name) for f in fields(params)}
    kw.update(changes)
    kw["n_i"] = dict(kw["n_i"])
    kw["tau_i"] = dict(kw["tau_i"])
    return DeviceParams(**kw)


def _quad(fn, a, b, points=None):
    if b <= a:
        return 0.0
    pts = None
    if points is not None:
        pts = [p for p in points if a < p < b] or None
    val, _ = integrate.quad(fn, a, b, epsabs=0.0, epsrel=QUAD_EPSREL, limit=500, points=pts)
    return val


def _check_position(params, x):
    if not (0.0 <= x <= params.L_dep):
        raise DomainError(f"x={x!r} outside the intrinsic layer [0, {params.L_dep}]")


def _ionization_exponent(params, a, b):
    """Integral of (alpha_e - alpha_h) over [a, b] by quadrature."""
    d = params.delta
    return _quad(lambda _s: d, a, b)


def mean_multiplication(params: DeviceParams, x: float, method: str = "quad") -> float:
    """Mean number of collisions M(x) for a carrier pair generated at ``x``.

    ``method="quad"`` integrates both nested integrals adaptively;
    ``method="closed"`` uses the constant-coefficient closed forms.
    """
    _check_position(params, x)
    L = params.L_dep
    ae, d = params.alpha_e, params.delta
    if method == "quad":
        num = math.exp(-_ionization_exponent(params, x, L))
        inner = _quad(lambda s: ae * math.exp(-_ionization_exponent(params, s, L)), 0.0, L)
        den = 1.0 - inner
    elif method == "closed":
        num = math.exp(-d * (L - x))
        den = 1.0 - ae * _expm1_ratio(d, L)
    else:
        raise ValueError(f"unknown method {method!r}")
    if den <= BREAKDOWN_EPS:
        raise BreakdownRegime(f"multiplication denominator {den:.3e} <= {BREAKDOWN_EPS}")
    return num / den


def _expm1_ratio(d, L):
    # (1 - exp(-d L)) / d, with the d -> 0 limit L
    if d == 0.0:
        return L
    return -math.expm1(-d * L) / d


def _f(params, x):
    return np.exp(-params.delta * np.asarray(x, dtype=float))


def _pp_given_p0(p0, fx):
    return p0 * fx / (p0 * fx + 1.0 - p0)


def _trigger_map(params, p0):
    L = params.L_dep
    if params.alpha_h == 0.0:
        return 0.0
    integral = _quad(lambda s: _pp_given_p0(p0, math.exp(-params.delta * s)), 0.0, L)
    return -math.expm1(-params.alpha_h * integral)


@lru_cache(maxsize=256)
def avalanche_p0(params: DeviceParams, damping: float = 0.5, start: float = 0.5,
                 tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Self-consistent avalanche probability at the p-side edge, P_p(0).

    Damped fixed-point iteration of ``P0 <- 1 - exp(-alpha_h * int P_p(x') dx')``.
    The map sends [0, 1] into [0, 1) and the damped average of two points in
    [0, 1] stays there, so no clipping is needed.
    """
    if params.alpha_h == 0.0:
        return 0.0
    p = start
    for _ in range(max_iter):
        nxt = (1.0 - damping) * p + damping * _trigger_map(params, p)
        if abs(nxt - p) < tol:
            return nxt
        p = nxt
    raise NoConvergence(f"avalanche fixed point not converged after {max_iter} iterations (last {p!r})")


def avalanche_probability(params: DeviceParams, x: float) -> float:
    _check_position(params, x)
    p0 = avalanche_p0(params)
    return float(_pp_given_p0(p0, _f(params, x)))


def thermal_generation(params: DeviceParams, layer: str) -> float:
    """Thermal generation rate n_i / tau_i of ``layer`` (per m^3 per s)."""
    if layer not in LAYERS:
        raise UnknownLayer(layer)
    return params.n_i[layer] / params.tau_i[layer]


def _tunnel_terms(params):
    pref_log = (0.5 * math.log(2.0 * params.m_r / params.E_g) + 2.0 * math.log(params.q)
                - math.log(4.0 * math.pi ** 3) - 2.0 * math.log(params.h))
    k = 2.0 * math.sqrt(2.0) * params.q * params.hbar
    a_bbt = math.pi * math.sqrt(params.m_r * params.E_g ** 3) / k
    a1 = math.pi * math.sqrt(params.m_lh * params.E_B1 ** 3) / k
    a2 = math.pi * math.sqrt(params.m_c * params.E_B2 ** 3) / k
    return pref_log, a_bbt, a1, a2


def tunneling_currents(params: DeviceParams, F: float) -> tuple[float, float]:
    """Band-to-band and trap-assisted tunneling current densities at field ``F``.

    Evaluated in log space; exponent arguments far past the double range
    underflow to exactly 0.  The formulas are taken as given, including the
    Planck constant in the prefactor and the reduced constant in the exponent.
    """
    if not F >= 0 or not math.isfinite(F):
        raise DomainError(f"field must be finite and >= 0, got {F!r}")
    if F == 0.0:
        return 0.0, 0.0
    pref_log, a_bbt, a1, a2 = _tunnel_terms(params)
    base = pref_log + 2.0 * math.log(F)
    log_bbt = base - a_bbt / F
    j_bbt = _safe_exp(log_bbt)
    if params.N_trap == 0.0:
        return j_bbt, 0.0
    e1, e2 = a1 / F, a2 / F
    log_den = np.logaddexp(math.log(params.N_v) - e1, math.log(params.N_c) - e2)
    log_tat = base + math.log(params.N_trap) - (e1 + e2) - float(log_den)
    return j_bbt, _safe_exp(log_tat)


def _safe_exp(v):
    if v > 700.0:
        raise NonFinite(f"tunneling current overflows (log value {v:.1f})")
    if v < -745.0:
        return 0.0
    return math.exp(v)


def tunneling_generation(params: DeviceParams, F: float) -> float:
    """Tunneling generation (J_BBT + J_TAT) / q at field ``F``."""
    j_bbt, j_tat = tunneling_currents(params, F)
    return (j_bbt + j_tat) / params.q


@dataclass(frozen=True)
class DcrBreakdown:
    thermal_dep: float
    tunnel_dep: float
    thermal_ab: float
    tunnel_ab: float

    @property
    def total(self) -> float:
        return self.thermal_dep + self.tunnel_dep + self.thermal_ab + self.tunnel_ab

    def as_dict(self) -> dict[str, float]:
        return {
            "thermal_dep": self.thermal_dep,
            "tunnel_dep": self.tunnel_dep,
            "thermal_ab": self.thermal_ab,
            "tunnel_ab": self.tunnel_ab,
            "total": self.total,
        }


def dark_count_rate(params: DeviceParams) -> DcrBreakdown:
    """Dark counts per second, split into the four generation contributions.

    Depletion-layer generation is weighted by the position-dependent avalanche
    probability, absorption-layer generation by P_p(0).
    """
    L, Lab = params.L_dep, params.L_ab
    xs, _ = params._profile_arrays()
    p0 = avalanche_p0(params)
    d = params.delta

    def pp(x):
        return _pp_given_p0(p0, math.exp(-d * x))

    def tunnel(x):
        return tunneling_generation(params, float(params.field_at(x)))

    g_dep = thermal_generation(params, "depletion")
    g_ab = thermal_generation(params, "absorption")
    pts_dep = list(xs)
    thermal_dep = g_dep * _quad(pp, 0.0, L) if g_dep else 0.0
    tunnel_dep = _quad(lambda x: tunnel(x) * pp(x), 0.0, L, pts_dep)
    thermal_ab = g_ab * Lab * p0
    tunnel_ab = p0 * _quad(tunnel, L, L + Lab, pts_dep)
    a = params.area
    return DcrBreakdown(a * thermal_dep, a * tunnel_dep, a * thermal_ab, a * tunnel_ab)


def format_dcr(b: DcrBreakdown) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in b.as_dict().items())


_SCALAR_KEYS = ("alpha_e", "alpha_h", "L_dep", "L_ab", "area", "E_g", "m_r", "m_lh", "m_c",
                "N_trap", "N_v", "N_c", "E_B1", "E_B2")


def parse_device_profile(text: str) -> DeviceParams:
    """Build DeviceParams from key=value text.

    Scalar keys use the field names; per-layer values are ``n_i_dep``,
    ``n_i_ab``, ``tau_dep``, ``tau_ab``; the field profile is
    ``field_profile = x0:F0, x1:F1, ...``.
    """
    kv = parse_kv(text)
    try:
        scalars = {k: float(kv[k]) for k in _SCALAR_KEYS}
        n_i = {"depletion": float(kv["n_i_dep"]), "absorption": float(kv["n_i_ab"])}
        tau = {"depletion": float(kv["tau_dep"]), "absorption": float(kv["tau_ab"])}
        prof_text = kv["field_profile"]
    except KeyError as exc:
        raise FormatError(f"device profile missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise FormatError(f"device profile: {exc}") from None
    profile = []
    for item in prof_text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            x, f = item.split(":")
            profile.append((float(x), float(f)))
        except ValueError:
            raise FormatError(f"bad field_profile sample {item!r}") from None
    return DeviceParams(field_profile=tuple(profile), n_i=n_i, tau_i=tau, **scalars)


def format_device_profile(params: DeviceParams) -> str:
    lines = [f"{k}={format_value(float(getattr(params, k)))}" for k in _SCALAR_KEYS]
    lines += [
        f"n_i_dep={float(params.n_i['depletion'])!r}",
        f"n_i_ab={float(params.n_i['absorption'])!r}",
        f"tau_dep={float(params.tau_i['depletion'])!r}",
        f"tau_ab={float(params.tau_i['absorption'])!r}",
        "field_profile=" + ", ".join(f"{float(x)!r}:{float(f)!r}" for x, f in params.field_profile),
    ]
    return "\n".join(lines) + "\n"


def silicon_like(**overrides) -> DeviceParams:
    """A representative Si p-i-n SPAD biased just above breakdown."""
    kw = dict(
        alpha_e=1.0e6,
        alpha_h=8.0e5,
        L_dep=2e-6,
        L_ab=10e-6,
        area=math.pi * (50e-6) ** 2,
        field_profile=((0.0, 8.0e6), (1e-6, 1.15e7), (2e-6, 1.0e7), (12e-6, 5.0e5)),
        E_g=1.12 * EV,
        m_r=0.16 * M_E,
        m_lh=0.16 * M_E,
        m_c=0.26 * M_E,
        N_trap=1e21,
        N_v=1.83e25,
        N_c=2.8e25,
        E_B1=0.56 * EV,
        E_B2=0.56 * EV,
        n_i={"depletion": 1e14, "absorption": 1e14},
        tau_i={"depletion": 1e-6, "absorption": 1e-6},
    )
    kw.update(overrides)
    return DeviceParams(**kw)
