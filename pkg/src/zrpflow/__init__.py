"""Potential theory and kinetic Monte Carlo for condensing zero-range processes.

The package computes, exactly at small particle numbers and through
asymptotic sweeps at desk scale, the quantities that govern how the
condensate of a sticky zero-range process on a finite site set hops
between sites: equilibrium potentials and capacities (for the underlying
walk and for the particle system, in primal / adjoint / symmetrised
form), the flow calculus on the configuration graph with the generalized
variational bounds for capacities, collapsed and trace chains with their
mean jump rates, the metastable geometry (valleys, wells, tubes), the
ramp-based approximating test functions with their correction flows, and
event-driven simulation of the particle system itself.
"""

from .configs import ConfigSpace, apply_move
from .errors import *  # noqa: F401,F403 -- flat error namespace is intentional
from .walk import (
    LimitChain,
    UnderlyingWalk,
    WalkProfile,
    adjoint_walk,
    build_limit_chain,
    canonical_paths,
    stationary_measure,
    walk_capacity,
    walk_dirichlet_form,
    walk_equilibrium_potential,
)
from .zrp import (
    ZrpConstants,
    ZrpModel,
    config_space,
    limit_constants,
    partition_function,
    stationary_vector,
    zrp_dirichlet_form,
    zrp_generator_apply,
)

__version__ = "0.1.0"
