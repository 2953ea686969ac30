"""Episode format, persistence, and corpus mixing."""

import os

import numpy as np
import pytest

from hdlab import dataset, sim
from hdlab.dataset import (BadMagicError, DimMismatchError, Episode,
                           ExpertFailureError, MixSpec, TruncatedError,
                           VersionMismatchError)


def test_record_naive_episode(teacup_episode):
    ep = teacup_episode
    assert ep.mode == "naive" and ep.space_index == -1
    assert ep.success
    assert ep.frame_count >= 1
    assert ep.grids.shape == (ep.frame_count, sim.GRID_CHANNELS,
                              sim.GRID_SIZE, sim.GRID_SIZE)
    assert ep.actions.dtype == np.float32


def test_record_hd_episode(teacup_hd_episode):
    ep = teacup_hd_episode
    assert ep.mode == "hd" and ep.space_index == 1
    assert ep.space_header is not None
    assert ep.space_header["index"] == 1


def test_record_episode_validation():
    with pytest.raises(ValueError):
        dataset.record_episode("teacup", "expert", 0)
    with pytest.raises(ValueError):
        dataset.record_episode("teacup", "hd", 0, space_index=9)
    with pytest.raises(ValueError):
        dataset.record_episode("teacup", "hd", 0)


def test_record_is_deterministic():
    a = dataset.record_episode("teacup", "hd", 5, space_index=0)
    b = dataset.record_episode("teacup", "hd", 5, space_index=0)
    assert a.equals(b)


def test_episode_invariants():
    grids = np.zeros((2, sim.GRID_CHANNELS, sim.GRID_SIZE, sim.GRID_SIZE),
                     dtype=np.float32)
    props = np.zeros((2, 6), dtype=np.float32)
    actions = np.zeros((2, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        Episode("teacup", "naive", 0, 2, True, grids, props, actions)
    with pytest.raises(ValueError):
        Episode("teacup", "hd", 0, -1, True, grids, props, actions)
    with pytest.raises(DimMismatchError):
        Episode("teacup", "naive", 0, -1, True, grids, props[:, :4], actions)


def test_roundtrip_bit_identical(tmp_path, teacup_episode):
    p1 = tmp_path / "a.hdse"
    p2 = tmp_path / "b.hdse"
    dataset.write_episode(teacup_episode, str(p1))
    loaded = dataset.read_episode(str(p1))
    assert loaded.equals(teacup_episode)
    dataset.write_episode(loaded, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_read_errors(tmp_path, teacup_episode):
    path = tmp_path / "ep.hdse"
    dataset.write_episode(teacup_episode, str(path))
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.hdse"
    bad_magic.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(BadMagicError):
        dataset.read_header(str(bad_magic))

    bad_version = tmp_path / "version.hdse"
    bad_version.write_bytes(raw[:4] + np.uint32(9).tobytes() + raw[8:])
    with pytest.raises(VersionMismatchError):
        dataset.read_header(str(bad_version))

    truncated = tmp_path / "trunc.hdse"
    truncated.write_bytes(raw[:-2048])
    with pytest.raises(TruncatedError) as err:
        dataset.read_episode(str(truncated))
    assert err.value.frame_index < teacup_episode.frame_count


def test_failed_expert_never_persists(tmp_path, monkeypatch):
    # A one-step cap forces an expert failure.
    monkeypatch.setitem(sim.HORIZON_CAPS, "teacup", 1)
    with pytest.raises(ExpertFailureError) as err:
        dataset.record_episode("teacup", "naive", 0)
    assert err.value.record is not None
    assert not err.value.record.success
    assert list(tmp_path.iterdir()) == []


def test_mix_spec():
    assert MixSpec(25, 75).label() == "N25+H75"
    with pytest.raises(ValueError):
        MixSpec(-1, 5)
    with pytest.raises(ValueError):
        MixSpec(0, 0)


def test_build_mix_counts(small_corpus):
    handle = dataset.build_mix(small_corpus, MixSpec(2, 2), seed=3)
    assert len(handle.episode_paths) == 4
    modes = [dataset.read_header(p)["mode"] for p in handle.episode_paths]
    assert modes.count("naive") == 2 and modes.count("hd") == 2


def test_build_mix_balanced_over_spaces(small_corpus):
    handle = dataset.build_mix(small_corpus, MixSpec(0, 4), seed=3)
    indices = sorted(dataset.read_header(p)["space_index"]
                     for p in handle.episode_paths)
    assert indices == [0, 1, 2, 3]


def test_build_mix_deterministic(small_corpus):
    a = dataset.build_mix(small_corpus, MixSpec(2, 2), seed=9)
    b = dataset.build_mix(small_corpus, MixSpec(2, 2), seed=9)
    assert a.manifest == b.manifest


def test_build_mix_insufficient(small_corpus):
    with pytest.raises(ValueError):
        dataset.build_mix(small_corpus, MixSpec(99, 0), seed=0)
    with pytest.raises(ValueError):
        dataset.build_mix(small_corpus, MixSpec(0, 99), seed=0)


def test_manifest_roundtrip(tmp_path, small_corpus):
    handle = dataset.build_mix(small_corpus, MixSpec(2, 1), seed=1)
    path = tmp_path / "manifest.json"
    handle.save_manifest(str(path))
    loaded = dataset.DatasetHandle.from_manifest(str(path))
    assert loaded.manifest == handle.manifest
    assert loaded.episode_paths == handle.episode_paths


def test_frame_stats(small_corpus):
    handle = dataset.build_mix(small_corpus, MixSpec(2, 2), seed=0)
    stats = dataset.frame_stats(handle)
    assert stats["naive"]["episodes"] == 2
    assert stats["hd"]["episodes"] == 2
    assert stats["hd"]["mean_frames"] < stats["naive"]["mean_frames"]
    only_naive = dataset.build_mix(small_corpus, MixSpec(2, 0), seed=0)
    assert dataset.frame_stats(only_naive)["hd"] is None
