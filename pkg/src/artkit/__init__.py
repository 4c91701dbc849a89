"""artkit: attenuated ray transforms of arbitrary weight order, integral
angular moments of the results, and a harness that numerically certifies the
differential identities tying them together.
"""

from .art import (
    RayQuadSpec,
    art_k,
    art_k_time,
    art_tensor,
    back_projection_lrt,
    lrt,
    optical_depth,
    photo_preset,
    wave_preset,
)
from .calculus import (
    FDSpec,
    ResidualReport,
    apply_H,
    apply_L,
    apply_Lt,
    sweep_transport,
)
from .fields import (
    AbsorptionSpec,
    PhaseField,
    TimeProfile,
    ball_bump_phantom,
    constant_absorption,
    eval_alpha,
    eval_field,
    gaussian_phantom,
    load_grid,
    sample_grid,
    save_grid,
    spatial_absorption,
    tensor_phantom,
    xi_polynomial_absorption,
)
from .geometry import BallDomain, SphereGrid, UNIT_BALL, direction, make_sphere_grid, point, sphere_integrate
from .moments import (
    angular_moment,
    f_moment,
    g_radial_apply,
    moment_grid,
    reconstruct_prop44,
    volume_potential,
    volume_potential_grid,
)
from .tensor import GridField, SymTensor, contract_direction, convolve_tensor, divergence, sym_inner

__version__ = "0.1.0"
