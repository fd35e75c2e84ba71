import numpy as np
import pytest

from geoloop.ingest import keyframe_arrays
from geoloop.network import EmbeddingModel, TrainConfig, train
from geoloop.supervision import (LabelThresholds, PairSet, attach_distance_weights, label_pairs,
                                 self_similarity)
from geoloop.synthworld import WorldConfig, generate_session, session_keyframes

REFERENCE_TRAIN_SESSIONS = range(12)
REFERENCE_TEST_SESSION = 12


def reference_keyframes(session):
    sess = generate_session(WorldConfig(session=session))
    frames, truth = session_keyframes(sess)
    return sess, frames, truth


def train_reference_model(seed=0):
    Xs, sets, offset = [], [], 0
    for s in REFERENCE_TRAIN_SESSIONS:
        _, frames, _ = reference_keyframes(s)
        X, Z = keyframe_arrays(frames)
        pairs = label_pairs(self_similarity(Z), LabelThresholds(), 10)
        sets.append(attach_distance_weights(pairs, X).shifted(offset))
        Xs.append(X)
        offset += len(X)
    X = np.vstack(Xs)
    pairs = PairSet.concatenate(sets)
    model = EmbeddingModel.initialize([X.shape[1], 96, 64, 32], 1.0, random_state=seed)
    model, trace = train(model, pairs, X, TrainConfig(seed=seed))
    return model, trace, X, pairs


@pytest.fixture(scope="session")
def reference_session():
    return reference_keyframes(0)


@pytest.fixture(scope="session")
def held_out_session():
    return reference_keyframes(REFERENCE_TEST_SESSION)


@pytest.fixture(scope="session")
def reference_model():
    return train_reference_model()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
