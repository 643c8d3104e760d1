"""Klein-Gordon field dynamics with random initial data.

Exact spectral evolution on periodic lattices, Gaussian and mixing random
fields, covariance dynamics, Monte Carlo checks of the field central limit
theorem, and a magnetic variant with a Cook-method wave operator.
"""
__version__ = "0.1.0"
