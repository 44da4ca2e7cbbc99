import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_factory import CorpusParams, make_corpus  # noqa: E402

from active_look import load_fixture  # noqa: E402


@pytest.fixture(scope="session")
def mech_corpus(tmp_path_factory):
    """The 500-scene mechanism corpus: (jsonl path, loaded fixture)."""
    root = tmp_path_factory.mktemp("mech_corpus")
    jsonl = make_corpus(root, CorpusParams())
    return jsonl, load_fixture(jsonl)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 12-scene corpus for cheap end-to-end tests."""
    root = tmp_path_factory.mktemp("small_corpus")
    jsonl = make_corpus(root, CorpusParams(n_scenes=12, seed=7))
    return jsonl, load_fixture(jsonl)
