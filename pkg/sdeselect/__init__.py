"""
sdeselect - Bayes factor model and covariate selection for SDEs driven by
time-dependent covariates.
"""

__version__ = "0.1.0"
