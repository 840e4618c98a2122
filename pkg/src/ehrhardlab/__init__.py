"""ehrhardlab: generalized Ehrhard symmetrization and weighted perimeter, numerically.

A desk-scale laboratory for measures mu = f * L^n with non-negative
integrable densities: fiber-wise symmetrization, three mutually validating
perimeter estimators, the hole-filling flow to equal-measure half-spaces,
1D perimeter-symmetrization criteria, product-structure detection, and the
quadratic log-density functional equations.
"""

from .weights import (
    AnisotropicGaussian,
    Box,
    Density1D,
    Exponential1D,
    Frame,
    Gaussian1D,
    GridField,
    GridSampled,
    IsotropicGaussian,
    Logistic1D,
    MassEstimate,
    Mixture1D,
    OutOfRangeError,
    Perturbed,
    ProductDensity,
    Uniform1D,
    UnsupportedDensityError,
    WeightedDensity,
    eval_density,
    eval_grad,
    fiber_cdf,
    fiber_quantile,
    logistic_product,
    total_mass,
)
from .sets import (
    Ball,
    BoxRegion,
    Complement,
    Difference,
    EMPTY_OUTSIDE,
    EmptyRegionError,
    FULL_OUTSIDE,
    GridGeometry,
    GridMismatchError,
    HalfSpace,
    HalfSpaceRegion,
    IndicatorSet,
    Intersection,
    Region,
    Strip,
    Union,
    half_space_equal_measure,
    halfspace_outside,
    mu_measure,
    rasterize,
    rasterize_halfspace,
    symm_diff_measure,
)
from .symmetrize import (
    HeightField,
    ResolutionInsufficientError,
    height_function,
    marginal_slice,
    subcell_slab_mass,
    symmetrize,
)
from .perimeter import (
    InfiniteHeightError,
    NoBoundaryError,
    NonConvergentError,
    PerimeterEstimate,
    perimeter_bv,
    perimeter_graph,
    perimeter_halfspace,
    perimeter_minkowski,
)
from .flow import (
    AlreadyConvergedError,
    FlowStep,
    FlowTrace,
    NoDensityPairError,
    flow_to_halfspace,
    pick_direction,
)
from .analysis import (
    NotEvenError,
    ProductReport,
    PSReport,
    QuadraticFit,
    SearchRecord,
    SearchResult,
    i_subadditivity_test,
    log_density_profile,
    log_profile_recursion_check,
    product_structure_test,
    ps_test_1d,
    symmetry_test_1d,
    violation_search,
)

__version__ = "0.1.0"
