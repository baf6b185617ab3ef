"""Physical constants and unit conventions.

Internal units everywhere in this package: energy in ueV, time in ps,
capacitance in aF.  SI values appear only where resonator geometry is
converted (lengths in m, inductance/capacitance per length in H/m, F/m).
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA-fixed constants; the single source of truth for hbar."""

    e: float = 1.602176634e-19          # elementary charge, C
    hbar_si: float = 1.054571817e-34    # J s
    phi0: float = 2.067833848e-15       # flux quantum h/2e, Wb
    ev_per_j: float = 1.0 / 1.602176634e-19
    hbar_uev_ps: float = 658.2119569    # hbar in ueV ps

    @property
    def e2_uev_af(self) -> float:
        """e^2/C for C = 1 aF, in ueV (e^2/C / e = e/C in eV, times 1e6)."""
        return self.e / 1e-18 * 1e6


CONST = PhysicalConstants()

# hbar in the internal unit system; all dynamics code takes it from here.
HBAR = CONST.hbar_uev_ps

# Conservative timing envelopes for the architecture (operation budgets and
# the coherence window they must fit inside, in ps).
STORAGE_BUDGET_PS = 30.0
TRANSFER_BUDGET_PS = 1000.0
COHERENCE_WINDOW_PS = 800_000.0
