"""Gate-voltage charge-state control of a diamond spin register.

Simulator for a nitrogen nuclear spin coupled to the defect electron across
the three charge states, plus a small pulse-sequence language, experiment
harness, and command line interface.
"""

__version__ = "0.1.0"

from .physics import ChargeState, Isotope, PhysicalParams

__all__ = ["ChargeState", "Isotope", "PhysicalParams", "__version__"]
