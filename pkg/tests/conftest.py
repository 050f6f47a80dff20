import textwrap

import numpy as np
import pytest

from src.candidate import AnalyticCandidate, CertificateHyper, GnnCandidate
from src.gnn import GnnConfig, init_params, zero_params
from src.system import builtin_scalar, builtin_temperature
from src.topology import ring_bidirectional


@pytest.fixture
def ring5():
    return ring_bidirectional(5)


@pytest.fixture
def desk_oracle():
    return builtin_temperature(n_nodes=5, state_low=-1.0, state_high=1.0)


@pytest.fixture
def scalar_oracle():
    return builtin_scalar(a=0.5)


@pytest.fixture
def hyper():
    return CertificateHyper(lower=0.01, upper=1.0, decay=0.005, margin=-0.001)


@pytest.fixture
def harness_hyper():
    return CertificateHyper(lower=1.0, upper=1.0, decay=0.4, margin=-0.01)


def make_gnn(state_dim=1, graph_widths=(6,), mlp_widths=(6,), hyper=None, seed=0, zero=False):
    hyper = hyper or CertificateHyper(lower=0.01, upper=1.0, decay=0.005, margin=-0.001)
    config = GnnConfig(state_dim=state_dim, graph_widths=graph_widths, mlp_widths=mlp_widths, degree=hyper.degree)
    params = zero_params(config) if zero else init_params(config, np.random.default_rng(seed))
    return GnnCandidate(params, config, hyper)


@pytest.fixture
def gnn_candidate():
    return make_gnn()


@pytest.fixture
def analytic_candidate(harness_hyper):
    return AnalyticCandidate(harness_hyper, state_dim=1)


@pytest.fixture
def write_config(tmp_path):
    """Writes a dedented YAML config into tmp_path and returns its path."""

    def _write(text: str, name: str = "run.yaml"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
        return path

    return _write
