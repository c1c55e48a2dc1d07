"""Estimator-style wrappers around detection and calibration.

These classes follow the scikit-learn conventions (``fit`` on a 2-d
array, trailing-underscore fitted attributes, ``get_params`` round-trip)
so the routines compose with scikit-learn tooling. Input arrays are
observations by series: rows are dates, columns are issuers, and the
cluster labels refer to columns, as in feature agglomeration.
"""
from __future__ import annotations

import datetime as dt
import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .community import detect, hierarchy
from .factors import (
    VARIANTS,
    build_factors,
    calibrate,
    model_implied_correlations,
    orthogonalize,
    variant_name,
)
from .panels import ReturnPanel, standardize
from .rmt import correlation, decompose


def _panel_from_array(x) -> ReturnPanel:
    x = check_array(x, dtype=np.float64, ensure_min_samples=2, ensure_min_features=1)
    t = x.shape[0]
    base = dt.date(2000, 1, 3)
    return ReturnPanel(
        dates=[base + dt.timedelta(days=k) for k in range(t)],
        issuers=[f"s{j:04d}" for j in range(x.shape[1])],
        returns=x,
    )


class RMTCommunityDetection(ClusterMixin, BaseEstimator):
    """Cluster correlated series by noise-filtered modularity maximization.

    ``fit`` standardizes the columns of X (observations by series),
    removes the random and market spectral components of their
    correlation matrix, and maximizes the modularity of the remaining
    structure. ``labels_`` assigns a community to every column.

    Parameters
    ----------
    restarts : number of seeded optimizer restarts, best result kept.
    random_state : integer seed for all restarts.
    include_below_bulk : keep eigenvalues below the noise band in the
        structure matrix.
    market_sign_threshold : minimum fraction of same-sign eigenvector
        entries for the leading eigenvalue to count as the market mode.
    max_depth : recursion depth; depths beyond 1 fit ``hierarchy_``.
    """

    def __init__(
        self,
        restarts: int = 10,
        random_state: int = 0,
        include_below_bulk: bool = True,
        market_sign_threshold: float = 0.95,
        max_depth: int = 1,
    ):
        self.restarts = restarts
        self.random_state = random_state
        self.include_below_bulk = include_below_bulk
        self.market_sign_threshold = market_sign_threshold
        self.max_depth = max_depth

    def fit(self, X, y=None):
        panel = standardize(_panel_from_array(X))
        partition = detect(
            panel,
            seed=self.random_state,
            restarts=self.restarts,
            include_below_bulk=self.include_below_bulk,
            market_sign_threshold=self.market_sign_threshold,
        )
        self.labels_ = np.asarray(partition.labels)
        self.partition_ = partition
        self.modularity_ = partition.quality
        self.n_communities_ = partition.n_communities
        self.decomposition_ = decompose(
            correlation(panel),
            market_sign_threshold=self.market_sign_threshold,
        )
        if self.max_depth > 1:
            self.hierarchy_ = hierarchy(
                panel,
                partition,
                max_depth=self.max_depth,
                seed=self.random_state,
                restarts=self.restarts,
                include_below_bulk=self.include_below_bulk,
                market_sign_threshold=self.market_sign_threshold,
            )
        else:
            self.hierarchy_ = None
        return self


class CreditFactorModel(BaseEstimator):
    """Factor-model calibration with a scikit-learn fit interface.

    ``fit`` builds the variant's factors from the columns of X, runs the
    orthogonalized issuer regressions, and exposes the calibrated
    quantities as fitted attributes. Community-driven variants (M5, M6)
    detect communities on the same data first.

    Parameters
    ----------
    variant : model variant name (M1..M6 aliases accepted).
    restarts : optimizer restarts for community detection variants.
    random_state : seed for community detection.
    """

    def __init__(
        self,
        variant: str = "M5_global_community",
        restarts: int = 10,
        random_state: int = 0,
    ):
        self.variant = variant
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y=None, *, meta=None):
        name = variant_name(self.variant)
        panel = standardize(_panel_from_array(X))
        if meta is not None and not isinstance(meta, dict):
            # sequence of per-column metadata records
            meta = dict(zip(panel.issuers, meta))
        if meta is not None:
            panel.meta = dict(meta)
        tree = None
        if name in ("M5_global_community", "M6_global_subcommunity"):
            tree = hierarchy(
                panel,
                None,
                max_depth=2,
                seed=self.random_state,
                restarts=self.restarts,
            )
        with warnings.catch_warnings():
            if not VARIANTS[name]:
                # a global-only variant needs no group sources
                warnings.filterwarnings(
                    "ignore", message="no metadata, partition, or hierarchy"
                )
            factors = orthogonalize(build_factors(panel, meta, hierarchy=tree))
        model = calibrate(panel, factors, name)
        self.model_ = model
        self.factors_ = factors
        self.alpha_ = model.alpha
        self.beta_ = model.beta
        self.psi_ = model.psi
        self.omega_ = model.omega
        self.factor_names_ = list(model.factor_names)
        return self

    def implied_correlations(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        return model_implied_correlations(self.model_)
