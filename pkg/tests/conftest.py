"""Shared fixtures: phantom datasets and the session-trained toy pipeline."""

import time

import numpy as np
import pytest

from gliomaseg.phantom import PhantomSpec, phantom_generate
from gliomaseg.pipeline import preset, split_cases, train_binary, train_multiclass
from gliomaseg.volume import DatasetManifest


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """Six small phantoms for fast unit-level pipeline tests."""
    root = tmp_path_factory.mktemp("mini_data")
    manifest_path = phantom_generate(PhantomSpec(count=6, seed=11), root)
    return DatasetManifest.load(manifest_path)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """The 25-phantom acceptance dataset (20 train / 5 validation)."""
    root = tmp_path_factory.mktemp("toy_data")
    manifest_path = phantom_generate(PhantomSpec(count=25, seed=7), root)
    return DatasetManifest.load(manifest_path)


@pytest.fixture(scope="session")
def trained_pipeline(toy_dataset, tmp_path_factory):
    """Both stages trained once with the toy preset; reused by the
    end-to-end and ablation acceptance tests."""
    out = tmp_path_factory.mktemp("toy_train")
    config = preset("toy")
    t0 = time.monotonic()
    binary_ckpt = out / "binary.ckpt"
    bin_result = train_binary(config, toy_dataset, binary_ckpt,
                              log_path=out / "binary_log.jsonl")
    multi_ckpt = out / "multiclass.ckpt"
    mc_result = train_multiclass(config, toy_dataset, multi_ckpt,
                                 binary_ckpt=binary_ckpt,
                                 log_path=out / "multiclass_log.jsonl")
    elapsed = time.monotonic() - t0
    train_ids, val_ids = split_cases(toy_dataset, config.val_fraction, config.seed)
    return {
        "config": config,
        "manifest": toy_dataset,
        "binary_ckpt": binary_ckpt,
        "multiclass_ckpt": multi_ckpt,
        "binary_result": bin_result,
        "multiclass_result": mc_result,
        "train_ids": train_ids,
        "val_ids": val_ids,
        "train_seconds": elapsed,
        "out_dir": out,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
