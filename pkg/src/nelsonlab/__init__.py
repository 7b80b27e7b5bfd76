"""Monte-Carlo laboratory for classical particles under random forcing.

Simulates phase-space diffusions (forced oscillators and general
single-well potentials), constructs their stochastically averaged
slow systems, and statistically tests whether the position
fluctuations behave like a quantum diffusion: constant diffusion
coefficient hbar/m (first postulate) and time-symmetric mean
acceleration equal to the classical force (Newton-Nelson law).
"""

__version__ = "0.1.0"

from . import averaging, coords, models, noise, sde, verify  # noqa: F401
