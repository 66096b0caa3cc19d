import numpy as np
import pytest

from aimcot.backend import SimulatedBackend, default_spec, initial_context
from aimcot.backend.sim import SimOracleSpec
from aimcot.geometry import GridSpec


@pytest.fixture
def sim_backend() -> SimulatedBackend:
    return SimulatedBackend(default_spec())


@pytest.fixture
def plain_ctx(sim_backend):
    return initial_context(sim_backend, sim_backend.encode("what is here"), "sim://image")


def additive_spec(
    evidence, *, seed=0, base=6.0, per_cell=1.5, bias=0.0, s_g=4, vocab=512
) -> SimOracleSpec:
    return SimOracleSpec(
        grid=GridSpec(s_g=s_g, image_w=16 * s_g, image_h=16 * s_g, s_r=1),
        evidence_cells=frozenset(evidence),
        vocab_size=vocab,
        base_entropy_bits=base,
        per_cell_reduction_bits=per_cell,
        attention_bias=bias,
        noise_seed=seed,
    )


def random_additive_spec(rng: np.random.Generator, s_g: int = 4) -> SimOracleSpec:
    n_evidence = int(rng.integers(1, 5))
    cells = {(int(rng.integers(s_g)), int(rng.integers(s_g))) for _ in range(n_evidence)}
    return additive_spec(
        cells,
        seed=int(rng.integers(2**31)),
        base=float(rng.uniform(3.0, 8.0)),
        per_cell=float(rng.uniform(0.2, 1.5)),
        s_g=s_g,
    )
