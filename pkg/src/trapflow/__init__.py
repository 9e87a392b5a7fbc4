"""trapflow: numerical certification of trapping dynamics for Hamiltonian symbols.

The package locates trapped and radial invariant sets of (b-)cotangent
Hamiltonian flows via escape functions, certifies normal hyperbolicity with
quantitative rates, verifies defining-function identities and evaluates the
regularity/decay threshold inequalities attached to such dynamics.  Built-in
reference systems: the Kerr-de Sitter photon region, a compactified
scattering spacetime and a shear vector field on the 3-torus.
"""

from . import expr, geometry, flow, models, trapping, thresholds

__version__ = "0.1.0"
