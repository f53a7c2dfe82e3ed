"""Staircase laminates and exact piecewise-affine convex-integration fields.

The package has three layers:

* measure level: 2x2 rank-one algebra, elementary splittings with
  recorded histories, staircase truncations and tail certification
  (`mat2`, `measure`, `staircase`, `afs`);
* field level: exact sawtooth/tent realizations of laminates on convex
  polygonal domains and the restart iteration (`geometry`, `realize`);
* verification: gradient histograms, superlevel tails, weak-form PDE
  residuals, sup-closeness (`verify`), plus JSON/CSV/SVG I/O (`io`) and
  a CLI (`cli`).
"""

from .afs import (AfsParams, EllipticCoefficient, build_afs_staircase,
                  default_params, equalize_diagonal, gamma_ratio_form,
                  in_K_Lambda, in_K_Lambda_Gamma, in_U, margin_U,
                  staircase_stage)
from .errors import *  # noqa: F401,F403
from .geometry import ConvexPolygon, Placement, area, clip, cover, rectangle
from .mat2 import Mat2, RankOneFactorization, frobenius_norm, is_rank_one, rank_one_factor
from .measure import (DiscreteMeasure, SplitStep, SplitTree, WeightedAtom,
                      barycenter, elementary_split, tail_mass,
                      validate_construction_steps)
from .realize import (Cell, PiecewiseAffineField, RealizeConfig, WiggleSpec,
                      error_integral, realize_finite_laminate,
                      realize_staircase, restart_iteration, wiggle)
from .staircase import (StaircaseTruncation, TailReport, assemble,
                        check_lower_tail, check_upper_tail, fit_tail_exponent)
from .verify import (FieldTailReport, ResidualReport, compare_distribution,
                     continuity_defect, field_tail, gradient_distribution,
                     sup_distance, weak_residual)

__version__ = "0.1.0"
