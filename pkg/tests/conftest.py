"""Shared fixtures: small cached corpora so module tests stay fast."""

import os

import pytest

from hdlab import dataset


@pytest.fixture(scope="session")
def teacup_episode():
    return dataset.record_episode("teacup", "naive", seed=0)


@pytest.fixture(scope="session")
def teacup_hd_episode():
    return dataset.record_episode("teacup", "hd", seed=100, space_index=1)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory, teacup_episode, teacup_hd_episode):
    """Four naive + four hd teacup episodes on disk."""
    directory = tmp_path_factory.mktemp("corpus")
    for seed in range(4):
        ep = dataset.record_episode("teacup", "naive", seed)
        dataset.write_episode(ep, os.path.join(
            directory, dataset.episode_filename(ep)))
    for i in range(4):
        ep = dataset.record_episode("teacup", "hd", 100 + i, space_index=i)
        dataset.write_episode(ep, os.path.join(
            directory, dataset.episode_filename(ep)))
    return str(directory)
