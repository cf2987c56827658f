"""Central numeric constants and tolerances.

Every tolerance used by the library and its property tests lives here so
there is a single knob to turn when chasing a numerical discrepancy.
"""

# Largest singular value the normalizer is evaluated at. exp(2 * S_CAP)
# stays comfortably inside double range and the default quadrature order
# still resolves the integrand at this sharpness.
S_CAP = 250.0

# Default tensor-product Gauss-Legendre order per angle (order**3 nodes).
# Overridable via the KINEFISHER_QUADRATURE_ORDER environment variable or
# per call.
DEFAULT_QUADRATURE_ORDER = 64

# Rejection sampler iteration cap before SamplerStallError.
SAMPLER_MAX_ITERATIONS = 1000

# Orthonormality / determinant slack for rotation matrices.
ROTATION_TOL = 1e-9

# Unit-quaternion norm slack (inputs are renormalized inside this band).
QUATERNION_NORM_TOL = 1e-9

# Reconstruction slack for the proper SVD: u @ diag(s) @ v.T vs the input.
SVD_RECONSTRUCTION_TOL = 1e-8

# Relative gap under which singular values are treated as coincident and
# re-canonicalized deterministically.
SVD_TIE_REL_TOL = 1e-12

# Damping scale (in squared-singular-value gap units) for SVD-backward
# denominators 1/(s_j^2 - s_i^2). The Lorentzian gap/(gap^2 + eps^2) caps
# the frame sensitivity at 1/(2 eps) near collisions, where the frame is
# genuinely non-identifiable, and biases generic gradients by only
# O(eps^2 / gap^2).
SVD_GRAD_DAMPING = 1e-4

# Residual demanded of the optimal_b root.
OPTIMAL_B_RESIDUAL_TOL = 1e-10

# Per-singular-value bisection tolerance in the moment-matching fit.
MLE_BISECTION_TOL = 1e-8

# Target agreement between fitted moments and the sample mean matrix.
MLE_MOMENT_TOL = 1e-6

# Row sums of the joint regressor and skin weights must hit 1 this tightly.
ROW_STOCHASTIC_TOL = 1e-9

# Minimum visible joints for fit_to_observation.
MIN_VISIBLE_JOINTS = 4
