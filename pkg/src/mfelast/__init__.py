"""Matrix-free finite-element kernels for finite-strain hyperelasticity.

Library layout:

* :mod:`mfelast.tensors`   fixed-size tensor algebra, Voigt packing
* :mod:`mfelast.autodiff`  forward-mode jets (gradients, seeded HVPs)
* :mod:`mfelast.counting`  operation-counting scalar
* :mod:`mfelast.materials` neo-Hookean energies and tangent data
* :mod:`mfelast.meshes`    nested structured mesh hierarchy and DoF maps
* :mod:`mfelast.fespace`   tensor-product basis, quadrature, sum factorization
* :mod:`mfelast.operators` residual and strategy-parameterized tangent operator
* :mod:`mfelast.solvers`   Newton / CG / Chebyshev / geometric multigrid
* :mod:`mfelast.bench`     benchmark campaigns (throughput, FLOPs, memory)
* :mod:`mfelast.report`    CSV + SVG emission
* :mod:`mfelast.cli`       command-line entry point
"""

from .autodiff import DomainError, Dual
from .counting import CountingScalar, OpCounter
from .materials import (ConstitutiveCache, MaterialParams, Model,
                        NonPositiveJacobian)
from .tensors import SingularTensor

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Dual",
    "CountingScalar",
    "OpCounter",
    "ConstitutiveCache",
    "MaterialParams",
    "Model",
    "NonPositiveJacobian",
    "SingularTensor",
    "__version__",
]
