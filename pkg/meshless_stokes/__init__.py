"""meshless-stokes - adaptive GMLS solver for Stokes fluid-solid interaction."""
__version__ = "1.0.0"
