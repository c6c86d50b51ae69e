"""Hyperelastic model discovery from full-field data: data-driven
identification of stress-strain databases and physics-augmented neural
network potentials calibrated on them."""

__version__ = "0.1.0"
