"""MIMO channel simulation through inhomogeneous, lossy scattering media.

Modules
-------
scene
    Scene geometry, material profiles, frequencies and collocation lattices.
greens
    Free-space Helmholtz kernel with a cell rule for near pairs.
operators
    Perturbation operators, block matrices, cutoffs and commutators.
scatter
    Block Lippmann-Schwinger solves, the multiple-scattering series and
    reciprocity checks.
channel
    Fields, transfer matrices, Maxwell residuals and capacity.
decouple
    Transmitter -> environment -> receiver factorization and g-vectors.
spread
    Far-field spread of the environment between antenna clusters.
checks
    The verification suite used by the CLI and the acceptance tests.
"""

from .channel import TransferMatrix, capacity, transfer_matrix
from .scatter import BornDivergenceError, ResonanceError, solve_full
from .scene import Frequency, SceneError, SceneLayout, load_scene

__all__ = [
    "BornDivergenceError",
    "Frequency",
    "ResonanceError",
    "SceneError",
    "SceneLayout",
    "TransferMatrix",
    "capacity",
    "load_scene",
    "solve_full",
    "transfer_matrix",
]
__version__ = "0.1.0"
