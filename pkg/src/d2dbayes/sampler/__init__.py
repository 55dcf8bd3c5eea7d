from .diagnostics import Diagnostics, diagnose, ess, rank_of_truth, split_rhat
from .nuts import PosteriorDraws, SamplerConfig, SamplerError, nuts_sample, sample_posterior
