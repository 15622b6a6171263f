"""Classical Kolmogorov-model generator of CHSH-violating Bell-test records."""

__version__ = "0.1.0"
