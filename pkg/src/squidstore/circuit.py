"""Circuit energies of a two-box storage unit and the charge-basis check.

A unit is two Cooper-pair boxes, each with a flux-tunable dcSQUID to the
reservoir, joined by a third dcSQUID.  Capacitances (aF) map to the two
charging energies and the electrostatic cross energy; the third junction
adds a correlated double-tunneling channel that reduces, in the two-level
subspace, to the sigma_x sigma_x - sigma_y sigma_y coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import CONST
from .qcore import Operator


class SingularCircuitError(ValueError):
    """C_S1*C_S2 - C_J3^2 <= 0: the charging-energy matrix is singular."""


class DeviceFileError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceParams:
    """Raw junction/gate/shunt capacitances (aF) and Josephson energies (ueV)."""

    c_j1: float
    c_j2: float
    c_j3: float
    c_g1: float
    c_g2: float
    e_j1: float
    e_j2: float
    e_j3: float
    c_sh1: float = 0.0
    c_sh2: float = 0.0

    def __post_init__(self):
        for name in ("c_j1", "c_j2", "c_j3", "c_g1", "c_g2", "c_sh1", "c_sh2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("e_j1", "e_j2", "e_j3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.c_sigma1 * self.c_sigma2 <= self.c_j3**2:
            raise SingularCircuitError(
                "C_S1*C_S2 must exceed C_J3^2 for the energy formulas"
            )

    @property
    def c_sigma1(self) -> float:
        return self.c_j1 + self.c_j3 + self.c_g1 + self.c_sh1

    @property
    def c_sigma2(self) -> float:
        return self.c_j2 + self.c_j3 + self.c_g2 + self.c_sh2


@dataclass(frozen=True)
class CircuitEnergies:
    """Derived charging energies (ueV) and total box capacitances (aF)."""

    e_c1: float
    e_c2: float
    e_3: float
    c_s1: float
    c_s2: float


@dataclass(frozen=True)
class BiasPoint:
    """Gate charges (units of 2e), fluxes (units of Phi0), derived splittings."""

    n_g1: float
    n_g2: float
    f1: float = 0.5
    f2: float = 0.5
    f3: float = 0.5
    omega1: float = 0.0
    omega2: float = 0.0


def bias_point(en: CircuitEnergies, n_g1: float, n_g2: float,
               f1: float = 0.5, f2: float = 0.5, f3: float = 0.5) -> BiasPoint:
    om1, om2 = bias_splitting(en, n_g1, n_g2)
    return BiasPoint(n_g1, n_g2, f1, f2, f3, om1, om2)


def derive_energies(p: DeviceParams) -> CircuitEnergies:
    """Charging energies from the capacitance network.

    E_c1 = 2 e^2 C_S2 / (C_S1 C_S2 - C_J3^2), E_c2 with 1<->2, and the
    cross energy E_3 = e^2 C_J3 / 2(C_S1 C_S2 - C_J3^2), all in ueV.
    """
    c1, c2 = p.c_sigma1, p.c_sigma2
    det = c1 * c2 - p.c_j3**2
    if det <= 0:
        raise SingularCircuitError("capacitance matrix is singular")
    e2 = CONST.e2_uev_af  # e^2/aF in ueV
    return CircuitEnergies(
        e_c1=2.0 * e2 * c2 / det,
        e_c2=2.0 * e2 * c1 / det,
        e_3=e2 * p.c_j3 / (2.0 * det),
        c_s1=c1,
        c_s2=c2,
    )


def effective_josephson(e_j: float, f: float) -> float:
    """Flux-tuned Josephson energy E_J cos(pi f); zero at f = 1/2."""
    return e_j * np.cos(np.pi * f)


def bias_splitting(en: CircuitEnergies, n_g1: float, n_g2: float) -> tuple[float, float]:
    """Omega_i = E_ci (n_gi - 1/2) + 2 E_3 (n_gj - 1/2), i != j."""
    om1 = en.e_c1 * (n_g1 - 0.5) + 2.0 * en.e_3 * (n_g2 - 0.5)
    om2 = en.e_c2 * (n_g2 - 0.5) + 2.0 * en.e_3 * (n_g1 - 0.5)
    return om1, om2


def full_charge_hamiltonian(p: DeviceParams, bias: BiasPoint,
                            window=range(-2, 4)) -> Operator:
    """Two-box Hamiltonian on the charge window |n1, n2>.

    Diagonal: E_c1 (n1-n_g1)^2 + E_c2 (n2-n_g2)^2 + 4 E_3 (n1-n_g1)(n2-n_g2).
    Single-pair tunneling -(E_Ji cos pi f_i)/2 on |n_i> <-> |n_i + 1>;
    the third junction tunnels one pair into both boxes at once:
    -(E_J3 cos pi f_3)/2 on |n1, n2> <-> |n1+1, n2+1|>.
    """
    ns = list(window)
    if not ns:
        raise ValueError("empty charge window")
    en = derive_energies(p)
    nn = len(ns)
    dim = nn * nn
    idx = {n: i for i, n in enumerate(ns)}
    h = np.zeros((dim, dim), dtype=complex)

    tj1 = -0.5 * effective_josephson(p.e_j1, bias.f1)
    tj2 = -0.5 * effective_josephson(p.e_j2, bias.f2)
    tj3 = -0.5 * effective_josephson(p.e_j3, bias.f3)

    for n1 in ns:
        for n2 in ns:
            i = idx[n1] * nn + idx[n2]
            d1 = n1 - bias.n_g1
            d2 = n2 - bias.n_g2
            h[i, i] = en.e_c1 * d1**2 + en.e_c2 * d2**2 + 4.0 * en.e_3 * d1 * d2
            if n1 + 1 in idx:
                j = idx[n1 + 1] * nn + idx[n2]
                h[j, i] += tj1
                h[i, j] += tj1
            if n2 + 1 in idx:
                j = idx[n1] * nn + idx[n2 + 1]
                h[j, i] += tj2
                h[i, j] += tj2
            if n1 + 1 in idx and n2 + 1 in idx:
                j = idx[n1 + 1] * nn + idx[n2 + 1]
                h[j, i] += tj3
                h[i, j] += tj3
    return Operator(h, (nn, nn))


def project_two_level(h: Operator, window) -> np.ndarray:
    """Restrict a charge-window operator to the {0,1} x {0,1} block."""
    ns = list(window)
    idx = {n: i for i, n in enumerate(ns)}
    if 0 not in idx or 1 not in idx:
        raise ValueError("window must contain charge states 0 and 1")
    nn = len(ns)
    sel = [idx[a] * nn + idx[b] for a in (0, 1) for b in (0, 1)]
    return h.entries[np.ix_(sel, sel)]


@dataclass(frozen=True)
class RegimeCheck:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class RegimeReport:
    checks: tuple
    n_warnings: int

    @property
    def ok(self) -> bool:
        return self.n_warnings == 0


def validate_charge_regime(p: DeviceParams, en: CircuitEnergies | None = None,
                           min_ec_over_ej: float = 5.0,
                           max_e3_over_ej3: float = 0.05) -> RegimeReport:
    """Charge-regime sanity checks; always returns a report, never raises.

    Warns when a box has E_c/E_J below ``min_ec_over_ej`` (two-level
    reduction degrades) or when E_3/E_J3 exceeds ``max_e3_over_ej3`` (the
    cross phase stops being a small correction).
    """
    en = en or derive_energies(p)
    checks = []
    for label, ec, ej in (("box1", en.e_c1, p.e_j1), ("box2", en.e_c2, p.e_j2)):
        ratio = np.inf if ej == 0 else ec / ej
        checks.append(RegimeCheck(
            name=f"ec_over_ej_{label}",
            value=float(ratio),
            threshold=min_ec_over_ej,
            passed=bool(ratio >= min_ec_over_ej),
            note="charging energy must dominate the tunneling energy",
        ))
    ratio3 = 0.0 if p.e_j3 == 0 else en.e_3 / p.e_j3
    checks.append(RegimeCheck(
        name="e3_over_ej3",
        value=float(ratio3),
        threshold=max_e3_over_ej3,
        passed=bool(ratio3 <= max_e3_over_ej3),
        note="cross charging energy must stay a small phase correction",
    ))
    n_warn = sum(1 for c in checks if not c.passed)
    return RegimeReport(checks=tuple(checks), n_warnings=n_warn)


# --- device description files -----------------------------------------------

_DEVICE_KEYS = {
    "c_j1", "c_j2", "c_j3", "c_g1", "c_g2", "c_sh1", "c_sh2",
    "e_j1", "e_j2", "e_j3",
}
_OPTIONAL_KEYS = {"c_sh1", "c_sh2"}


def parse_key_value(text: str, allowed: set[str], label: str) -> dict[str, float]:
    """Shared ``key = value`` reader; '#' comments, unknown keys are errors."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DeviceFileError(f"{label} line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip().lower()
        if key not in allowed:
            raise DeviceFileError(f"{label} line {lineno}: unknown key {key!r}")
        if key in values:
            raise DeviceFileError(f"{label} line {lineno}: duplicate key {key!r}")
        try:
            values[key] = float(val.strip())
        except ValueError as exc:
            raise DeviceFileError(f"{label} line {lineno}: bad number {val.strip()!r}") from exc
    return values


def parse_device(text: str) -> DeviceParams:
    values = parse_key_value(text, _DEVICE_KEYS, "device file")
    missing = _DEVICE_KEYS - _OPTIONAL_KEYS - set(values)
    if missing:
        raise DeviceFileError(f"device file: missing keys {sorted(missing)}")
    return DeviceParams(**values)


def load_device(path) -> DeviceParams:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_device(fh.read())
