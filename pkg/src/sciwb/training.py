"""Model persistence, checkpoints, and the supervised training loop.

Determinism contract: every random draw during training (batch
selection, noise augmentation) comes from a generator seeded by
``[seed, step]``, and the learning-rate schedule depends only on the
step index. Restoring weights + optimizer moments + step therefore
reproduces the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import Tensor, mse_loss
from .dataio import load_array, load_json, save_array, save_json
from .exceptions import ContractError, DataError, NumericalError
from .forward_model import MaskSet, init_input, measure
from .optim import Adam, halved_lr
from .srn import SrnConfig, SrnModel


# -- model weights on disk ------------------------------------------------------


def save_model(model: SrnModel, dirpath: str | Path) -> Path:
    """Write one model as a directory of per-parameter NPY files."""
    dirpath = Path(dirpath)
    names = []
    for name, tensor in model.named_parameters():
        save_array(dirpath / f"{name}.npy", tensor.data)
        names.append({"name": name, "shape": list(tensor.data.shape)})
    save_json(dirpath / "manifest.json",
              {"format": 1, "config": model.config_dict(), "parameters": names})
    return dirpath


def load_model(dirpath: str | Path) -> SrnModel:
    dirpath = Path(dirpath)
    manifest = load_json(dirpath / "manifest.json")
    cfg_dict = dict(manifest.get("config", {}))
    dtype = np.dtype(cfg_dict.pop("dtype", "float32"))
    try:
        config = SrnConfig(**cfg_dict)
    except TypeError as exc:
        raise DataError(f"bad model manifest in {dirpath}: {exc}") from exc
    model = SrnModel(config, rng=np.random.default_rng(0), dtype=dtype)
    for name, tensor in model.named_parameters():
        arr = load_array(dirpath / f"{name}.npy")
        if arr.shape != tensor.data.shape:
            raise DataError(
                f"parameter {name} in {dirpath} has shape {arr.shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data = np.ascontiguousarray(arr.astype(dtype))
    return model


def save_stage_models(models: Sequence[SrnModel], dirpath: str | Path) -> Path:
    """Write the per-stage models of an unfolded pipeline."""
    dirpath = Path(dirpath)
    for i, model in enumerate(models):
        save_model(model, dirpath / f"stage{i:02d}")
    save_json(dirpath / "stages.json", {"format": 1, "stages": len(models)})
    return dirpath


def load_stage_models(dirpath: str | Path) -> list[SrnModel]:
    dirpath = Path(dirpath)
    meta = load_json(dirpath / "stages.json")
    count = int(meta.get("stages", 0))
    if count < 1:
        raise DataError(f"no stages recorded in {dirpath}")
    return [load_model(dirpath / f"stage{i:02d}") for i in range(count)]


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(dirpath: str | Path, models: Sequence[SrnModel],
                    opt: Adam, step: int) -> Path:
    dirpath = Path(dirpath)
    save_stage_models(models, dirpath / "models")
    for key, arr in opt.state_arrays().items():
        save_array(dirpath / "optim" / f"{key}.npy", arr)
    save_json(dirpath / "meta.json",
              {"format": 1, "step": int(step), "adam_step": opt.step_count,
               "stages": len(models)})
    return dirpath


def load_checkpoint(dirpath: str | Path) -> tuple[list[SrnModel], dict, int]:
    """Returns (models, optimizer arrays, step)."""
    dirpath = Path(dirpath)
    meta = load_json(dirpath / "meta.json")
    models = load_stage_models(dirpath / "models")
    arrays: dict[str, np.ndarray] = {}
    for path in sorted((dirpath / "optim").glob("*.npy")):
        arrays[path.stem] = load_array(path)
    return models, arrays, int(meta["step"])


def attach_optimizer(models: Sequence[SrnModel], arrays: dict, step: int,
                     lr: float) -> Adam:
    opt = Adam([p for m in models for p in m.parameters()], lr=lr)
    if arrays:
        opt.load_state(arrays, step_count=step)
    return opt


# -- supervised training -----------------------------------------------------------


def train_srn(model: SrnModel, cubes: Sequence[np.ndarray], masks: MaskSet, *,
              steps: int, lr: float = 4e-4, batch: int = 4,
              halve_every: int | None = 50, seed: int = 0,
              augment_noise: bool = False, noise_low: float = 0.0,
              noise_high: float = 0.05, start_step: int = 0,
              opt: Adam | None = None, checkpoint_dir: str | Path | None = None,
              checkpoint_every: int | None = None) -> dict:
    """Fit a reconstruction network to (back-projection, truth) pairs.

    Each step draws a batch of cubes, simulates their snapshots (with a
    fresh noise std from U[noise_low, noise_high) per sample when
    augmentation is on; noise lands on the measurement only), feeds the
    back-projected initialization through the model, and minimizes the
    mean squared error to the true cube.

    Args:
        steps: total optimizer steps including any completed before
            ``start_step`` (resume runs the remainder).
        halve_every: learning-rate halving period in epochs (one epoch =
            one full pass at the given batch size); None keeps lr fixed.
        opt: optimizer to continue with; a fresh Adam when None.

    Returns:
        history dict: per-step "loss" and "lr" lists (for the steps run
        by this call) plus "step" (the final global step).
    """
    if not cubes:
        raise ContractError("training needs at least one cube")
    if batch < 1:
        raise ContractError(f"batch must be >= 1, got {batch}")
    if steps < start_step:
        raise ContractError(f"steps {steps} < start_step {start_step}")
    dtype = model.dtype
    targets = [np.ascontiguousarray(c.transpose(2, 0, 1), dtype=dtype)[None]
               for c in cubes]
    clean = [measure(c, masks).data for c in cubes]
    if opt is None:
        opt = Adam(model.parameters(), lr=lr)
    eff_batch = min(batch, len(cubes))
    steps_per_epoch = max(1, math.ceil(len(cubes) / eff_batch))
    history: dict = {"loss": [], "lr": []}
    for step in range(start_step, steps):
        epoch = step // steps_per_epoch
        opt.lr = lr if halve_every is None else halved_lr(lr, epoch, halve_every)
        rng = np.random.default_rng([seed, step])
        picks = rng.integers(0, len(cubes), size=eff_batch)
        opt.zero_grad()
        step_loss = 0.0
        for idx in picks:
            y = clean[idx]
            if augment_noise:
                std = rng.uniform(noise_low, noise_high)
                y = y + std * rng.standard_normal(y.shape)
            fy = init_input(y, masks).transpose(2, 0, 1)[None].astype(dtype)
            pred = model(Tensor(fy))
            loss = mse_loss(pred, Tensor(targets[idx])) * (1.0 / eff_batch)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss {value} at step {step} (sample {idx}); aborting")
            step_loss += value
            loss.backward()
        opt.step()
        history["loss"].append(step_loss)
        history["lr"].append(opt.lr)
        done = step + 1
        if (checkpoint_dir is not None and checkpoint_every
                and (done % checkpoint_every == 0 or done == steps)):
            save_checkpoint(Path(checkpoint_dir) / f"step{done:06d}",
                            [model], opt, done)
    history["step"] = steps
    return history
