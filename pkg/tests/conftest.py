import numpy as np
import pytest

from cogede.data import ErpBlock, FusionDataset, SynthConfig, synth_dataset


def make_block(X, modality="m0", subject="s00", split="train", mask=None, layout=None):
    X = np.asarray(X, dtype=float)
    P = X.shape[1]
    mask = np.ones(P, bool) if mask is None else mask
    layout = [("c", P)] if layout is None else layout
    return ErpBlock(modality, subject, split, X, mask, layout)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    return synth_dataset(SynthConfig(n_subjects=3, channels_per_modality=[5, 7], n_timepoints=12,
                                     n_conditions=2, k_true=2, snr=4.0, heterogeneity=0.5, seed=3))


@pytest.fixture
def two_block_train(rng):
    blocks = [make_block(rng.standard_normal((4, 10)), subject="s00"),
              make_block(rng.standard_normal((4, 10)), subject="s01")]
    return FusionDataset(blocks, "multimodal_multisubject")


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
