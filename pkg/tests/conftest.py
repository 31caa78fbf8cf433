import sys
from pathlib import Path

import pytest

# make tests/helpers.py importable from any test module
sys.path.insert(0, str(Path(__file__).parent))


TINY_MODEL = dict(
    d_h=24,
    d_m=24,
    d_z=8,
    grid_size=32,
    conv_channels=(4, 8, 8, 8),
    head_hidden=24,
    posterior_hidden=32,
    n_predictions=6,
    dsf_width=24,
)


@pytest.fixture(scope="session")
def tiny_env(tmp_path_factory):
    """A small end-to-end training setup shared across test modules:
    datasets, a trained backbone, and a trained diversity sampler."""
    from divtraj.forecaster import ForecasterConfig
    from divtraj.scenes import generate_dataset
    from divtraj.training import TrainConfig, train_cvae, train_dsf

    root = tmp_path_factory.mktemp("tiny_env")
    train_dir = root / "train"
    val_dir = root / "val"
    generate_dataset(train_dir, n_scenes=48, master_seed=100, grid_size=32)
    generate_dataset(val_dir, n_scenes=16, master_seed=200, grid_size=32)

    model_cfg = ForecasterConfig(**TINY_MODEL)
    cvae_cfg = TrainConfig(
        stage="cvae",
        train_dataset=str(train_dir),
        val_dataset=str(val_dir),
        checkpoint_out=str(root / "backbone.ckpt"),
        epochs=4,
        batch_size=16,
        seed=0,
        log_csv=str(root / "backbone_log.csv"),
        model=model_cfg,
    )
    cvae_result = train_cvae(cvae_cfg)

    dsf_cfg = TrainConfig(
        stage="dsf",
        train_dataset=str(train_dir),
        val_dataset=str(val_dir),
        checkpoint_in=str(root / "backbone.ckpt"),
        checkpoint_out=str(root / "dsf.ckpt"),
        epochs=3,
        batch_size=16,
        seed=0,
        lam=0.5,
        log_csv=str(root / "dsf_log.csv"),
        model=model_cfg,
    )
    dsf_result = train_dsf(dsf_cfg)

    return {
        "root": root,
        "train": train_dir,
        "val": val_dir,
        "model_cfg": model_cfg,
        "cvae_cfg": cvae_cfg,
        "dsf_cfg": dsf_cfg,
        "cvae_result": cvae_result,
        "dsf_result": dsf_result,
        "backbone": root / "backbone.ckpt",
        "dsf": root / "dsf.ckpt",
    }
