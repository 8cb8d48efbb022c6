from .encode import (MAX_L1_COMPLEMENT_DIM, add_max, add_min, add_norm_le, add_not_in_ball,
                     add_not_in_interior, add_relu, encode_max, expr_bounds)
from .lpformat import LpFormatError, lp_names, read_lp, read_solution, write_lp, write_solution
from .model import (Constraint, EncodingError, LinExpr, MilpModel, ModelError, NormBall, Polytope,
                    UnsupportedNormError, VarId)

__all__ = [
    "Constraint", "EncodingError", "LinExpr", "LpFormatError", "MAX_L1_COMPLEMENT_DIM", "MilpModel",
    "ModelError", "NormBall", "Polytope", "UnsupportedNormError", "VarId", "add_max", "add_min",
    "add_norm_le", "add_not_in_ball", "add_not_in_interior", "add_relu", "encode_max", "expr_bounds",
    "lp_names", "read_lp", "read_solution", "write_lp", "write_solution",
]
