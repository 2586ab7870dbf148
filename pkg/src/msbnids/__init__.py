"""Distributed intrusion detection on sectioned Bayesian networks.

Layered library: `bayes` (discrete networks + enumeration oracle),
`junction` (junction-tree compilation and propagation), `msbn` (sectioned
networks and distributed inference), `trust` (signed-message agreement and
trust domains), `kdd`/`sim` (connection-record pipeline and the multi-agent
simulator), `cli` (command-line front end).
"""

from .bayes import (
    BayesNet,
    Cpt,
    Dag,
    Evidence,
    Posterior,
    Variable,
    enumerate_posterior,
    enumerate_posteriors,
    fit_cpts,
    joint_probability,
    sample_records,
    validate_network,
)

__all__ = [
    "BayesNet",
    "Cpt",
    "Dag",
    "Evidence",
    "Posterior",
    "Variable",
    "enumerate_posterior",
    "enumerate_posteriors",
    "fit_cpts",
    "joint_probability",
    "sample_records",
    "validate_network",
]

__version__ = "0.1.0"
