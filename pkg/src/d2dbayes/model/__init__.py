from .likelihood import (
    loglik_hier,
    loglik_hier_counts_approx,
    loglik_pooled,
    loglik_pooled_counts,
    multinomial_log_coef,
)
from .pmd import multinomial_moments, pmd_approx_moments, pmd_exact_pmf, pmd_moments
from .posterior import (
    COUNTS_CAVEAT,
    REGIMES,
    DataBlock,
    PosteriorModel,
    grad_log_posterior,
    log_posterior,
)
from .priors import Prior, PriorSpec
from .transforms import UnconstrainedVector, to_constrained, to_unconstrained
