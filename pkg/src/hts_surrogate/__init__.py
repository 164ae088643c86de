"""Neural surrogate for current density in HTS pancake solenoids during a current ramp,
with the thin-strip power-law solver that produces its training data."""

__version__ = "0.1.0"
