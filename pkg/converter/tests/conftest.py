import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
MODEL_DIR = os.path.join(FIXTURES, "tiny_llama")
CORPUS_DIR = os.path.join(FIXTURES, "corpus")


@pytest.fixture(scope="session")
def model_dir():
    if not os.path.exists(os.path.join(MODEL_DIR, "model.safetensors")):
        pytest.skip(
            "trained fixture missing; run scripts/gather_corpus.py and "
            "scripts/train_tiny_llama.py first"
        )
    return MODEL_DIR


@pytest.fixture(scope="session")
def corpus_dir():
    if not os.path.exists(os.path.join(CORPUS_DIR, "calib.txt")):
        pytest.skip("corpus fixture missing; run scripts/gather_corpus.py first")
    return CORPUS_DIR


@pytest.fixture(scope="session")
def converted(model_dir):
    """Convert the fixture once per session: (engine model, manifest)."""
    import mosaic.store as store
    from mosaic_converter import convert_model

    blob, manifest = convert_model(model_dir)
    model, masks = store.checkpoint_from_bytes(blob)
    return model, manifest, blob
