from .special import bessel_k, erf, erfc, struve_bessel_integral, struve_l
from .curve import (
    TheoryCurve,
    TheoryParams,
    entropy_curve,
    mc_oracle,
    p_positive,
    preact_density,
    pruning_rate,
    q_factor,
    write_curve_csv,
)

__all__ = [
    "TheoryCurve",
    "TheoryParams",
    "bessel_k",
    "entropy_curve",
    "erf",
    "erfc",
    "mc_oracle",
    "p_positive",
    "preact_density",
    "pruning_rate",
    "q_factor",
    "struve_bessel_integral",
    "struve_l",
    "write_curve_csv",
]
