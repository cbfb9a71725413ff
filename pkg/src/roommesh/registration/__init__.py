from .align import (AffineDepthParams, DegenerateFitError, InsufficientOverlapError, align,
                    apply_affine, fit_scale_shift)
from .chamfer import truncated_chamfer
from .pyramid import (DeformationPyramid, RegistrationError, RegistrationParams, RegistrationResult,
                      register)
from .network import WarpLevel
