import time
from pathlib import Path

import pytest

import dppnet.encoder
from dppnet.config import ModelConfig, RunConfig, TrainSchedule
from dppnet.data import GenConfig, generate_synthetic
from dppnet import trainer

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def strict_gates():
    # oracle regime: gates must sit strictly inside their open intervals
    old = dppnet.encoder.STRICT_GATES
    dppnet.encoder.STRICT_GATES = True
    yield
    dppnet.encoder.STRICT_GATES = old


@pytest.fixture(scope="session")
def toy_taxonomy_path():
    return DATA_DIR / "toy_taxonomy.txt"


def toy_model_config(**overrides) -> ModelConfig:
    base = dict(
        feature_dim=24,
        adapter_hidden=16,
        adapter_out=16,
        dyn_out=12,
        num_candidates=32,
        hidden_dim=8,
        embed_dim=8,
        num_answers=6,
        vocab_size=12,
    )
    base.update(overrides)
    return ModelConfig(**base)


def small_run_config(**schedule_overrides) -> RunConfig:
    """A config that trains in seconds, for fixture and trainer tests."""
    model = ModelConfig(
        adapter_hidden=48,
        adapter_out=32,
        dyn_out=16,
        num_candidates=128,
        hidden_dim=32,
        embed_dim=16,
    )
    schedule_overrides.setdefault("seed", 1)
    schedule = TrainSchedule(**schedule_overrides)
    return RunConfig(model=model, train=schedule)


@pytest.fixture(scope="session")
def synthetic_default():
    """The standard benchmark: 2 slots, 4 shapes, 4 colors, 4000/500/500, seed 1."""
    cfg = GenConfig()
    return cfg, generate_synthetic(cfg, seed=1)


@pytest.fixture(scope="session")
def dppnet_seed1(synthetic_default):
    """One converged default-config run, shared by model tests and acceptance."""
    gen_cfg, (train_ex, val_ex, test_ex) = synthetic_default
    rc = RunConfig()
    elapsed = -time.perf_counter()
    result = trainer.train(rc, train_ex, val_ex)
    elapsed += time.perf_counter()
    test_data = trainer.encode_dataset(test_ex, result.vocab, result.answers, rc.precision)
    test_acc = trainer.evaluate(result.run_config.model, result.store, test_data)
    return {
        "result": result,
        "gen_cfg": gen_cfg,
        "test_examples": test_ex,
        "test_acc": test_acc,
        "seconds": elapsed,
    }
