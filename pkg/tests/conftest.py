"""Shared fixtures: the default synthetic corpus and a fast micro corpus.

The default corpus (120 runs) takes a minute or two to train, so it is
cached under ``.corpus_cache/`` keyed by a hash of the generating config;
editing corpus defaults invalidates the cache automatically.
"""

import hashlib
import json
from pathlib import Path

import pytest

from graphsig.corpus import SyntheticTask, TrainerConfig, default_arch, run_grid

REPO_ROOT = Path(__file__).resolve().parent.parent
CACHE_ROOT = REPO_ROOT / ".corpus_cache"


def _config_digest(task: SyntheticTask, config: TrainerConfig) -> str:
    blob = json.dumps({
        "task": [task.classes, list(task.image_shape), task.train_size,
                 task.test_size, task.noise, task.seed],
        "config": [list(config.learning_rates), list(config.dropouts),
                   config.seeds_per_cell, config.max_epochs, config.batch_size,
                   config.patience, config.base_seed],
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _corpus_dir(task: SyntheticTask, config: TrainerConfig, name: str) -> Path:
    out = CACHE_ROOT / f"{name}_{_config_digest(task, config)}"
    if not (out / "corpus.json").is_file():
        run_grid(task, default_arch(task.classes, task.image_shape), config, out)
    return out


@pytest.fixture(scope="session")
def default_corpus() -> Path:
    """The shipped 120-run corpus at package defaults."""
    return _corpus_dir(SyntheticTask(), TrainerConfig(), "default")


@pytest.fixture(scope="session")
def micro_corpus() -> Path:
    """A 12-run corpus small enough for pipeline/CLI tests."""
    task = SyntheticTask(train_size=256, test_size=128)
    config = TrainerConfig(learning_rates=(0.003, 0.02, 0.1, 0.3),
                           dropouts=(0.0, 0.4), seeds_per_cell=1,
                           max_epochs=8, patience=5)
    return _corpus_dir(task, config, "micro")
