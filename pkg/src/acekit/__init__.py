"""acekit: average causal effect estimation by sequential residualization.

Subpackages and modules:

- ``graph`` / ``analysis``: semi-Markovian causal graphs, d-separation,
  do-calculus side conditions, hedge-based identifiability.
- ``oracle``: exact interventional distributions of small discrete SCMs.
- ``learners``: the regression learners the estimator is built from.
- ``pipeline``: building, evaluating and persisting the estimator.
- ``simulate`` / ``experiment`` / ``cli``: synthetic data and experiments.
"""

__version__ = "0.1.0"
