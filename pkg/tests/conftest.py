"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from core.config import NetworkConfig
from core.dsp import Waveform
from core.scoring import ScoreSet, Trial


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tone():
    """Two seconds of a 440 Hz tone plus a little seeded noise."""
    t = np.arange(32000) / 16000.0
    noise = np.random.default_rng(7).normal(0.0, 0.01, t.size)
    return Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t) + noise)


@pytest.fixture
def small_net_cfg():
    """Minimal feature dimension that still survives three stride-2 stages."""
    return NetworkConfig(feat_dim=8, embed_dim=16)


def _make_score_set(system_id, scores, n_target):
    scores = np.asarray(scores, dtype=np.float64)
    trials = [Trial(f"e{i}", f"t{i}", i < n_target) for i in range(scores.size)]
    return ScoreSet.from_trials(system_id, trials, scores), trials


@pytest.fixture
def make_score_set():
    """Factory: (system_id, scores, n_target) -> (ScoreSet, trials); the first n_target trials are targets."""
    return _make_score_set


@pytest.fixture
def separable_scores(rng, make_score_set):
    """A strong system (targets around +1, nontargets around -1) on 200 + 800 trials."""
    scores = np.concatenate([rng.normal(1.0, 0.5, 200), rng.normal(-1.0, 0.5, 800)])
    return make_score_set("strong", scores, 200)
