import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dict():
    from unfold_sc.datagen import gen_dictionary

    return gen_dictionary(5, 10, seed=3)


@pytest.fixture
def tiny_cfg():
    """A config that trains in well under a second."""
    from unfold_sc.config import ExperimentConfig, ProblemConfig
    from unfold_sc.datagen import SparsityLaw
    from unfold_sc.training import TrainConfig
    from unfold_sc.unfolded import Kind, Variant

    return ExperimentConfig(
        problem=ProblemConfig(m=5, n=10, seed=1),
        law=SparsityLaw.fixed(0.7),
        variants=[Variant(Kind.LISTA_CP), Variant(Kind.EBT_LISTA)],
        train=TrainConfig(batch_size=8, lr_stages=(0.01,), patience_iters=10, eval_every=10, max_stage_iters=20),
        eval_laws=[SparsityLaw.fixed(0.7), SparsityLaw.fixed(0.9)],
        depth=2,
        eval_size=40,
    )


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.REPORT, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
