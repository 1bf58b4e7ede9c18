"""harnacklab: numerical laboratory for Harnack-type integral certificates,
barrier constructions, and boundary estimates for uniformly elliptic
operators whose first-order term is controlled by a gradient profile."""

__version__ = "0.1.0"
