"""Weight persistence, checkpointing, and the supervised training loop."""

import numpy as np
import pytest

from conftest import random_maskset
from sciwb.exceptions import ContractError, DataError, NumericalError
from sciwb.scenes import moving_disks
from sciwb.srn import SrnConfig, SrnModel
from sciwb.training import (attach_optimizer, load_checkpoint, load_model,
                            load_stage_models, save_checkpoint, save_model,
                            save_stage_models, train_srn)


def make_setup(seed, h=16, w=16, c=4, n_scenes=1):
    rng = np.random.default_rng(seed)
    masks = random_maskset(rng, h, w, c, step=1)
    cubes = [moving_disks(rng, h, w, c) for _ in range(n_scenes)]
    model = SrnModel(SrnConfig.tiny(c), rng=np.random.default_rng(seed))
    return model, cubes, masks


# -- persistence ----------------------------------------------------------------------


def test_model_roundtrip(tmp_path, rng):
    model = SrnModel(SrnConfig.tiny(3, use_cae=True, variant="v2"), rng=rng)
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.config == model.config
    assert back.dtype == model.dtype
    for (na, a), (nb, b) in zip(model.named_parameters(),
                                back.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(a.data, b.data)


def test_load_model_rejects_corrupt_shapes(tmp_path, rng):
    model = SrnModel(SrnConfig.tiny(3), rng=rng)
    save_model(model, tmp_path / "m")
    bad = np.zeros((2, 2))
    np.save(tmp_path / "m" / "head.weight.npy", bad)
    with pytest.raises(DataError):
        load_model(tmp_path / "m")
    with pytest.raises(DataError):
        load_model(tmp_path / "missing")


def test_stage_models_roundtrip(tmp_path, rng):
    models = [SrnModel(SrnConfig.tiny(3), rng=rng) for _ in range(3)]
    save_stage_models(models, tmp_path / "stages")
    back = load_stage_models(tmp_path / "stages")
    assert len(back) == 3
    for m, b in zip(models, back):
        np.testing.assert_array_equal(m.head.weight.data, b.head.weight.data)
    save_stage_models([], tmp_path / "empty")
    with pytest.raises(DataError):
        load_stage_models(tmp_path / "empty")


def test_checkpoint_roundtrip_preserves_optimizer(tmp_path):
    model, cubes, masks = make_setup(0)
    hist = train_srn(model, cubes, masks, steps=4, lr=1e-3, batch=1,
                     checkpoint_dir=tmp_path / "ck", checkpoint_every=2)
    assert (tmp_path / "ck" / "step000002").is_dir()
    models, arrays, step = load_checkpoint(tmp_path / "ck" / "step000002")
    assert step == 2 and len(models) == 1
    opt = attach_optimizer(models, arrays, step, lr=1e-3)
    assert opt.lr == 1e-3


# -- training loop --------------------------------------------------------------------


def test_overfit_single_scene_reaches_small_mse():
    model, cubes, masks = make_setup(11)
    hist = train_srn(model, cubes, masks, steps=2000, lr=4e-4, batch=1,
                     halve_every=None, seed=1)
    assert min(hist["loss"]) < 1e-4, min(hist["loss"])


def test_zero_lr_keeps_weights_and_flat_loss():
    model, cubes, masks = make_setup(1)
    before = [p.data.copy() for p in model.parameters()]
    hist = train_srn(model, cubes, masks, steps=6, lr=0.0, batch=1, seed=0)
    for b, p in zip(before, model.parameters()):
        np.testing.assert_array_equal(b, p.data)
    assert len(set(hist["loss"])) == 1


def test_training_is_deterministic_under_seed():
    results = []
    for _ in range(2):
        model, cubes, masks = make_setup(2, n_scenes=3)
        hist = train_srn(model, cubes, masks, steps=6, lr=1e-3, batch=2,
                         seed=7, augment_noise=True)
        results.append((hist["loss"],
                        [p.data.copy() for p in model.parameters()]))
    assert results[0][0] == results[1][0]
    for a, b in zip(results[0][1], results[1][1]):
        np.testing.assert_array_equal(a, b)


def test_augment_noise_changes_trajectory():
    model, cubes, masks = make_setup(3)
    clean = train_srn(model, cubes, masks, steps=3, lr=1e-3, batch=1, seed=0)
    model2, cubes2, masks2 = make_setup(3)
    noisy = train_srn(model2, cubes2, masks2, steps=3, lr=1e-3, batch=1,
                      seed=0, augment_noise=True, noise_low=0.02,
                      noise_high=0.05)
    assert clean["loss"] != noisy["loss"]


def test_resume_matches_uninterrupted_run(tmp_path):
    model, cubes, masks = make_setup(4, n_scenes=2)
    full = train_srn(model, cubes, masks, steps=8, lr=1e-3, batch=2, seed=5)
    straight = [p.data.copy() for p in model.parameters()]

    model_b, cubes_b, masks_b = make_setup(4, n_scenes=2)
    train_srn(model_b, cubes_b, masks_b, steps=4, lr=1e-3, batch=2, seed=5,
              checkpoint_dir=tmp_path / "ck", checkpoint_every=4)
    models, arrays, step = load_checkpoint(tmp_path / "ck" / "step000004")
    resumed = models[0]
    opt = attach_optimizer(models, arrays, step, lr=1e-3)
    tail = train_srn(resumed, cubes_b, masks_b, steps=8, lr=1e-3, batch=2,
                     seed=5, start_step=step, opt=opt)
    for a, b in zip(straight, resumed.parameters()):
        np.testing.assert_array_equal(a, b.data)
    assert full["loss"][4:] == tail["loss"]
    assert tail["step"] == 8


def test_lr_schedule_halves_by_epoch():
    model, cubes, masks = make_setup(5)  # 1 scene, batch 1 -> 1 step/epoch
    hist = train_srn(model, cubes, masks, steps=6, lr=8e-4, batch=1,
                     halve_every=2, seed=0)
    np.testing.assert_allclose(
        hist["lr"], [8e-4, 8e-4, 4e-4, 4e-4, 2e-4, 2e-4], rtol=1e-12)
    model2, cubes2, masks2 = make_setup(5)
    flat = train_srn(model2, cubes2, masks2, steps=3, lr=8e-4, batch=1,
                     halve_every=None, seed=0)
    assert flat["lr"] == [8e-4] * 3


def test_training_validation_and_abort():
    model, cubes, masks = make_setup(6)
    with pytest.raises(ContractError):
        train_srn(model, [], masks, steps=1)
    with pytest.raises(ContractError):
        train_srn(model, cubes, masks, steps=1, batch=0)
    with pytest.raises(ContractError):
        train_srn(model, cubes, masks, steps=1, start_step=5)
    model.tail.bias.data[0] = np.nan
    with pytest.raises(NumericalError, match="step 0"):
        train_srn(model, cubes, masks, steps=2, lr=1e-3)
