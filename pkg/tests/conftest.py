from pathlib import Path

import pytest

from hostility.preprocess import load_dataset, load_emoji_table, load_freq_dict

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def fixture_posts():
    return load_dataset(DATA_DIR / "tiny_posts.csv")


@pytest.fixture(scope="session")
def fixture_freq():
    return load_freq_dict(DATA_DIR / "word_freq.tsv")


@pytest.fixture(scope="session")
def fixture_emoji_table():
    return load_emoji_table(DATA_DIR / "emoji_300d.txt")
