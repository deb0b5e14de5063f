"""Monte Carlo laboratory for critical branching random walks.

Simulates critical branching random walks under Gaussian, lattice, and
heavy-tail regimes, constructs the limit point processes that describe what
a surviving cluster looks like inside a fixed ball, and verifies the
asymptotic identities connecting survival probabilities, intensity
integrals, and Laplace functionals.
"""

__version__ = "0.1.0"
