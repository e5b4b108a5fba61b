"""Two-queue impatient-tenant simulation and service-rate optimisation."""

__version__ = "0.1.0"
