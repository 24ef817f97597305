"""Learning discrete Lagrangian densities of variational PDEs."""

__version__ = "0.1.0"
__author__ = "lagfield developers"
__description__ = (
    "Learn discrete Lagrangian densities from space-time field data, propagate "
    "the learned field theory and locate its travelling waves"
)
