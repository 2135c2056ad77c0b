"""vmblab: collision-operator machinery, transport coefficients, torus
fluid/corrector solvers, and order-by-order expansion verification for the
two-species kinetic-to-two-fluid limit."""

__version__ = "0.1.0"
