"""Shared fixtures.

The desk-scale benchmark (synthetic 10x10 gallery, default model,
lr 0.05, batch 32, 15 epochs) is trained once per session and reused by
the trainer tests, the end-to-end model checks, and the acceptance
suite. Acceptance criterion 8 re-runs it independently to compare
bytes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from coffar.model import Model, default_config, init_model
from coffar.pairs import (
    Gallery,
    PairSample,
    derive_seed,
    generate_symmetric,
    split_pairs,
    synth_gallery,
)
from coffar.train import TrainConfig, TrainHistory, train

BENCH_SEED = 7
BENCH_IDS = 10
BENCH_IMGS = 10
BENCH_NOISE = 0.05
BENCH_LR = 0.05
BENCH_BATCH = 32
BENCH_EPOCHS = 15


@dataclass
class BenchmarkRun:
    gallery: Gallery
    train_pairs: list[PairSample]
    test_pairs: list[PairSample]
    model: Model
    history: TrainHistory
    duration: float
    out_dir: Path
    history_bytes: bytes
    checkpoint_bytes: bytes


def run_desk_benchmark(out_dir: Path) -> BenchmarkRun:
    """The fixed reproducibility benchmark, everything seeded from 7."""
    gallery = synth_gallery(BENCH_IDS, BENCH_IMGS, BENCH_NOISE,
                            seed=BENCH_SEED)
    pair_list, _stats = generate_symmetric(
        gallery, seed=derive_seed(BENCH_SEED, "generation")
    )
    train_pairs, test_pairs = split_pairs(
        pair_list, 0.8, seed=derive_seed(BENCH_SEED, "split")
    )
    model = init_model(default_config(seed=derive_seed(BENCH_SEED, "model-init")))
    config = TrainConfig(
        learning_rate=BENCH_LR,
        batch_size=BENCH_BATCH,
        epochs=BENCH_EPOCHS,
        seed=derive_seed(BENCH_SEED, "train-order"),
    )
    started = time.monotonic()
    model, history = train(model, train_pairs, config, out_dir=out_dir)
    duration = time.monotonic() - started
    history_path = out_dir / "history.jsonl"
    history.write_jsonl(history_path)
    checkpoint_path = out_dir / "checkpoint_final.coffar.json"
    return BenchmarkRun(
        gallery=gallery,
        train_pairs=train_pairs,
        test_pairs=test_pairs,
        model=model,
        history=history,
        duration=duration,
        out_dir=out_dir,
        history_bytes=history_path.read_bytes(),
        checkpoint_bytes=checkpoint_path.read_bytes(),
    )


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory) -> BenchmarkRun:
    return run_desk_benchmark(tmp_path_factory.mktemp("bench_a"))
