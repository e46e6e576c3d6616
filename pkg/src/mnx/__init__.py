"""mnx: mixed-normal expansions for quadratic forms of Wiener and diffusion paths."""

__version__ = "0.1.0"
