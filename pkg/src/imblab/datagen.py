"""Two-class Gaussian data generation.

Events (class 1) and non-events (class 0) are drawn from distinct
multivariate normal distributions that share a correlation matrix.  The
mean shift between the classes is chosen so that the theoretical
concordance of the generating mechanism hits a requested target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.special import ndtr, ndtri


class ConstructionError(ValueError):
    """A requested model or dataset cannot be built."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one data-generating scenario.

    ``n_validation`` is stored explicitly rather than derived so that
    external-data runs may use a different ratio than the bundled
    scenarios (which all use ``n_validation = 10 * n_train``).
    """

    id: int
    p: int
    n_covarying: int
    event_fraction: float
    n_train: int
    n_validation: int
    delta_mu: float
    delta_sigma: float
    rho: float
    target_c: float
    base_seed: int

    def __post_init__(self):
        if not 0.0 < self.event_fraction < 1.0:
            raise ValueError("event_fraction must lie in (0, 1)")
        if not 0.0 <= self.delta_sigma < 1.0:
            raise ValueError("delta_sigma must lie in [0, 1)")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.n_covarying > self.p:
            raise ValueError("n_covarying cannot exceed p")
        if self.n_train < 1 or self.n_validation < 1:
            raise ValueError("sample sizes must be positive")


@dataclass(frozen=True)
class GaussianClassModel:
    """Class-conditional means and covariances of the generator."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray

    @property
    def p(self) -> int:
        return self.mu0.shape[0]


@dataclass
class Dataset:
    """Feature matrix plus binary outcome vector."""

    features: np.ndarray
    outcome: np.ndarray
    provenance: str = "generated"

    def __post_init__(self):
        if self.features.shape[0] != self.outcome.shape[0]:
            raise ValueError("features and outcome must have equal row counts")

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_events(self) -> int:
        return int(self.outcome.sum())

    @property
    def n_nonevents(self) -> int:
        return self.n - self.n_events


def build_covariance(p: int, n_covarying: int, diag: float, rho: float) -> np.ndarray:
    """Covariance matrix with a leading equicorrelated block.

    The first ``n_covarying`` predictors get off-diagonal covariance
    ``diag * rho``; the remaining predictors are independent.  All
    diagonal entries equal ``diag``.
    """
    if n_covarying > p:
        raise ConstructionError("n_covarying cannot exceed p")
    if diag <= 0:
        raise ConstructionError("diagonal entries must be positive")
    sigma = np.eye(p) * diag
    block = slice(0, n_covarying)
    sigma[block, block] = diag * rho
    np.fill_diagonal(sigma, diag)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ConstructionError("covariance matrix is not positive definite") from exc
    return sigma


def build_model(p: int, n_covarying: int, rho: float, delta_mu: float,
                delta_sigma: float) -> GaussianClassModel:
    """Assemble the two-class Gaussian model from structural parameters.

    Class 0 has zero means and unit variances; class 1 means all equal
    ``delta_mu`` and variances all equal ``1 - delta_sigma``.  Off-diagonals
    of the class-1 covariance are scaled so both classes share one
    correlation matrix.
    """
    sigma0 = build_covariance(p, n_covarying, 1.0, rho)
    sigma1 = build_covariance(p, n_covarying, 1.0 - delta_sigma, rho)
    return GaussianClassModel(
        mu0=np.zeros(p),
        mu1=np.full(p, float(delta_mu)),
        sigma0=sigma0,
        sigma1=sigma1,
    )


def model_from_scenario(cfg: ScenarioConfig) -> GaussianClassModel:
    return build_model(cfg.p, cfg.n_covarying, cfg.rho, cfg.delta_mu, cfg.delta_sigma)


def theoretical_c(model: GaussianClassModel) -> float:
    """Concordance implied by the generating mechanism.

    Equals ``Phi(sqrt(d' (S0 + S1)^-1 d))`` with ``d`` the vector of mean
    differences between the classes.
    """
    d = model.mu1 - model.mu0
    s = model.sigma0 + model.sigma1
    try:
        solved = np.linalg.solve(s, d)
    except np.linalg.LinAlgError as exc:
        raise ConstructionError("sum of class covariances is singular") from exc
    return float(ndtr(np.sqrt(d @ solved)))


def solve_delta_mu(p: int, n_covarying: int, rho: float, delta_sigma: float,
                   target_c: float) -> float:
    """Mean shift that yields ``target_c`` under the structured model.

    With all mean differences equal, the concordance relation inverts in
    closed form: ``delta_mu = Phi^-1(C) / sqrt(1' (S0 + S1)^-1 1)``.
    """
    if not 0.5 < target_c < 1.0:
        raise ValueError("target_c must lie in (0.5, 1)")
    sigma0 = build_covariance(p, n_covarying, 1.0, rho)
    sigma1 = build_covariance(p, n_covarying, 1.0 - delta_sigma, rho)
    ones = np.ones(p)
    try:
        quad = ones @ np.linalg.solve(sigma0 + sigma1, ones)
    except np.linalg.LinAlgError as exc:
        raise ConstructionError("sum of class covariances is singular") from exc
    return float(ndtri(target_c) / np.sqrt(quad))


def sample_event_count(n: int, phi: float, rng: np.random.Generator) -> int:
    """Binomial draw of the number of events among ``n`` observations.

    Degenerate draws (0 or n) are returned as-is; downstream stages decide
    how to handle them.
    """
    if not 0.0 < phi < 1.0:
        raise ValueError("event fraction must lie in (0, 1)")
    return int(rng.binomial(n, phi))


def sample_dataset(model: GaussianClassModel, n1: int, n0: int,
                   rng: np.random.Generator) -> Dataset:
    """Draw ``n0`` non-events then ``n1`` events, then shuffle rows.

    Sampling is lower-Cholesky times a standard-normal vector per row; the
    draw order (class 0 block, class 1 block, one shuffle permutation) is
    part of the reproducibility contract.
    """
    if n1 + n0 < 1:
        raise ConstructionError("need at least one observation")
    try:
        chol0 = np.linalg.cholesky(model.sigma0)
        chol1 = np.linalg.cholesky(model.sigma1)
    except np.linalg.LinAlgError as exc:
        raise ConstructionError("class covariance is not positive definite") from exc
    p = model.p
    x0 = rng.standard_normal((n0, p)) @ chol0.T + model.mu0
    x1 = rng.standard_normal((n1, p)) @ chol1.T + model.mu1
    features = np.vstack([x0, x1])
    outcome = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    perm = rng.permutation(n0 + n1)
    return Dataset(features=features[perm], outcome=outcome[perm], provenance="generated")


def load_scenarios() -> list[ScenarioConfig]:
    """The 18 bundled data-generating scenarios."""
    text = resources.files("imblab").joinpath("scenarios.json").read_text()
    return [ScenarioConfig(**row) for row in json.loads(text)]


def get_scenario(scenario_id: int) -> ScenarioConfig:
    for cfg in load_scenarios():
        if cfg.id == scenario_id:
            return cfg
    raise KeyError(f"no bundled scenario with id {scenario_id}")
