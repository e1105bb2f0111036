import json

import pytest

from envs.DoorKey import DoorKey
from envs.TrashGrid import TrashGrid
from utils.Config import EnvConfig, parse_config
from utils.Rng import make_stream


@pytest.fixture
def rng():
    return make_stream(0, "tests")


@pytest.fixture
def doorkey():
    return DoorKey(EnvConfig(name="doorkey", max_steps=64))


@pytest.fixture
def trashgrid():
    return TrashGrid(EnvConfig(name="trashgrid", max_steps=128))


@pytest.fixture(autouse=True)
def no_gmah_out(monkeypatch):
    monkeypatch.delenv("GMAH_OUT", raising=False)


def tiny_document(out_dir, env="doorkey", stage="low", **run):
    """A config small enough for a full stage to finish in seconds."""
    run_section = {
        "stage": stage,
        "total_steps": 300,
        "warmup_steps": 50,
        "batch_size": 16,
        "buffer_size": 1000,
        "eval_every": 10 ** 6,
        "eval_episodes": 2,
        "log_every": 1,
        "ae_dataset_size": 64,
        "ae_pretrain_steps": 10,
        "progress": False,
        "out_dir": str(out_dir),
    }
    run_section.update(run)
    return {
        "run": run_section,
        "env": {"name": env},
        "hrl": {"hidden_sizes": [16, 16], "c": 8},
        "trigger": {"d_f": 4, "ae_hidden": 16},
        "mixer": {"hidden_dim": 8, "hyper_hidden": 16},
    }


def tiny_config(out_dir, env="doorkey", stage="low", **run):
    return parse_config(text=json.dumps(tiny_document(out_dir, env, stage, **run)))


@pytest.fixture
def tiny(tmp_path):
    def build(env="doorkey", stage="low", **run):
        out_dir = run.pop("out_dir", tmp_path / "run")
        return tiny_config(out_dir, env=env, stage=stage, **run)
    return build


@pytest.fixture
def tiny_file(tmp_path):
    """Writes a tiny config to disk and returns its path; the run directory is tmp_path/run."""
    def build(env="doorkey", stage="low", **run):
        path = tmp_path / "{}_{}.json".format(env, stage)
        path.write_text(json.dumps(tiny_document(tmp_path / "run", env=env, stage=stage, **run)))
        return str(path)
    return build
