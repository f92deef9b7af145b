"""nelson-lab: numerical workbench for a UV-renormalized particle-field lattice model."""

__version__ = "0.1.0"
