"""Continuous transfer learning lab: label-informed divergence, bounds and TransLATE."""

__version__ = "0.1.0"
