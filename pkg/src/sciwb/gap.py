"""Generalized alternating projection solvers.

The sensing operator's Gram matrix Phi Phi^T is diagonal (entries R),
so the Euclidean projection of an estimate v onto {f : Phi f = y} has
the closed form

    f = v + Phi^T ((y - Phi v) / R),

elementwise over detector pixels; pixels with no mask coverage
(R below the floor) get a zero correction. Alternating this projection
with a denoiser yields the classic solver (here: anisotropic total
variation) or, with per-stage learned networks, the unfolded
reconstruction pipeline trained end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, l2_norm_loss
from .exceptions import ContractError, DimensionError, NumericalError
from .forward_model import SensingOp
from .optim import Adam

Denoiser = Callable[[Tensor], Tensor]


def identity_denoiser(x: Tensor) -> Tensor:
    """Pass-through stage; useful to test the projection plumbing alone."""
    return x


@dataclass
class GapConfig:
    """Unfolding depth and the weights of the deep-supervision loss.

    loss_weights[i] scales the distance of stage S-i's output to the
    truth; the default (1.0, 0.5, 0.5) supervises the last three stages.
    """

    stages: int = 9
    loss_weights: tuple[float, ...] = (1.0, 0.5, 0.5)

    def validate(self) -> None:
        if self.stages < 1:
            raise ContractError(f"stages must be >= 1, got {self.stages}")
        if not self.loss_weights or any(w < 0 for w in self.loss_weights):
            raise ContractError(f"loss_weights must be non-negative, got {self.loss_weights}")


@dataclass
class GapState:
    """Trace of one solver run: per-stage outputs and residuals."""

    stage: int = 0
    stage_outputs: list = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)


def gap_project(v, sensing: SensingOp, y):
    """Project an estimate onto the measurement-consistency set.

    Array inputs are accumulated in float64 internally and returned as
    float64 so the consistency identity Phi f = y holds to tight
    tolerance regardless of the callers' storage precision; Tensor
    inputs stay in their own dtype and participate in autograd.

    Args:
        v: current estimate, channel-major detector vector (ndarray or
            Tensor of length C*n).
        sensing: the structured operator.
        y: measurement vector of length n (same flavor as v).

    Returns:
        The projected estimate f, same flavor as v.
    """
    if isinstance(v, Tensor):
        if not isinstance(y, Tensor):
            y = Tensor(np.asarray(y, dtype=v.dtype))
        _, inv_r = sensing._consts(v.dtype)
        residual = y - sensing.apply_t(v)
        return v + sensing.adjoint_t(residual * inv_r)
    v64 = np.asarray(v, dtype=np.float64)
    y64 = np.asarray(y, dtype=np.float64)
    residual = y64 - sensing.apply(v64)
    return v64 + sensing.adjoint(residual * sensing.inv_r)


def gap_srn_forward(y: np.ndarray, sensing: SensingOp,
                    denoisers: Sequence[Denoiser],
                    dtype=np.float32) -> GapState:
    """Run the unfolded solver: project, denoise, repeat.

    The initial estimate is the back-projection Phi^T y. Each stage
    projects the running estimate onto measurement consistency, hands
    the native-frame cube to that stage's denoiser, and continues from
    the denoised result. Stage outputs are recorded as (H, W, C) cube
    tensors; the residual ||y - Phi f|| after each projection is traced.

    Args:
        y: measurement, either the (H, W_ext) detector image or the
            flattened (n,) vector.
        sensing: structured operator carrying the geometry.
        denoisers: one callable per stage, (1, C, H, W) -> (1, C, H, W).
        dtype: compute dtype of the tensor graph.

    Returns:
        GapState with one entry per stage.
    """
    if not denoisers:
        raise ContractError("need at least one denoiser stage")
    y = np.asarray(y)
    if y.ndim == 2:
        y = y.reshape(-1)
    if y.shape != (sensing.n,):
        raise DimensionError(
            f"measurement has {y.shape} entries, operator expects ({sensing.n},)")
    y = y.astype(dtype)
    y_t = Tensor(y)
    state = GapState()
    masks = sensing.masks
    v = Tensor(sensing.adjoint(y.astype(np.float64)).astype(dtype))
    for s, denoise in enumerate(denoisers):
        f = gap_project(v, sensing, y_t)
        state.residuals.append(
            float(np.linalg.norm(y.astype(np.float64) - sensing.apply(f.data.astype(np.float64)))))
        net_in = sensing.to_net_input(f)
        try:
            net_out = denoise(net_in)
        except (DimensionError, ContractError) as exc:
            raise type(exc)(f"stage {s + 1}: {exc}") from exc
        if net_out.shape != net_in.shape:
            raise DimensionError(
                f"stage {s + 1}: denoiser changed shape {net_in.shape} -> {net_out.shape}")
        v = sensing.from_net_output(net_out)
        cube = net_out.reshape(sensing.channels, masks.height, masks.width) \
            .transpose((1, 2, 0))
        state.stage_outputs.append(cube)
        state.stage = s + 1
    return state


def gap_loss(stage_outputs: Sequence[Tensor], truth: np.ndarray | Tensor,
             weights: Sequence[float] = (1.0, 0.5, 0.5)) -> Tensor:
    """Deep-supervision loss: weighted L2 distances of the last stages.

    weights[i] multiplies the (non-squared, eps-smoothed) L2 norm of
    (truth - stage_outputs[-1-i]); stages beyond the available depth
    are skipped, so a 1-stage run is supervised by weights[0] alone.
    """
    if not stage_outputs:
        raise ContractError("gap_loss needs at least one stage output")
    if not isinstance(truth, Tensor):
        truth = Tensor(np.asarray(truth, dtype=stage_outputs[-1].dtype))
    total = None
    for i, w in enumerate(weights):
        if i >= len(stage_outputs):
            break
        if w == 0:
            continue
        term = l2_norm_loss(stage_outputs[-1 - i], truth) * float(w)
        total = term if total is None else total + term
    if total is None:
        raise ContractError("all applicable loss weights were zero")
    return total


def train_gap_srn(samples: Sequence[tuple[np.ndarray, np.ndarray]],
                  sensing: SensingOp, models: Sequence, *, steps: int,
                  lr: float = 4e-4, seed: int = 0, batch: int = 1,
                  weights: Sequence[float] = (1.0, 0.5, 0.5),
                  dtype=np.float32, start_step: int = 0, opt: Adam | None = None,
                  checkpoint_dir=None, checkpoint_every: int | None = None) -> dict:
    """Train the unfolded pipeline end to end with Adam.

    Args:
        samples: (measurement, truth cube) pairs sharing one operator.
        sensing: the shared structured operator.
        models: per-stage denoiser models exposing .parameters().
        steps: total optimizer steps (resume runs steps - start_step).
        lr: Adam learning rate, constant.
        seed: together with the step index, fully determines the batch
            draw, so training is reproducible and resumable.
        batch: samples averaged per step (per-sample mean reduction).
        weights: deep-supervision weights, see :func:`gap_loss`.
        opt: optimizer to continue with; a fresh Adam when None.

    Returns:
        history dict with per-step "loss" list and the final "step".

    Raises:
        NumericalError: if the loss goes non-finite; the message carries
            the step index and the offending value.
    """
    if not samples:
        raise ContractError("training needs at least one sample")
    if batch < 1:
        raise ContractError(f"batch must be >= 1, got {batch}")
    if steps < start_step:
        raise ContractError(f"steps {steps} < start_step {start_step}")
    if opt is None:
        opt = Adam([p for m in models for p in m.parameters()], lr=lr)
    losses: list[float] = []
    for step in range(start_step, steps):
        rng = np.random.default_rng([seed, step])
        picks = rng.integers(0, len(samples), size=min(batch, len(samples)))
        opt.zero_grad()
        step_loss = 0.0
        for idx in picks:
            y, truth = samples[idx]
            state = gap_srn_forward(y, sensing, models, dtype=dtype)
            loss = gap_loss(state.stage_outputs, truth.astype(dtype), weights) \
                * (1.0 / len(picks))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss {value} at step {step} (sample {idx}); aborting")
            step_loss += value
            loss.backward()
        opt.step()
        losses.append(step_loss)
        done = step + 1
        if (checkpoint_dir is not None and checkpoint_every
                and (done % checkpoint_every == 0 or done == steps)):
            from .training import save_checkpoint
            save_checkpoint(Path(checkpoint_dir) / f"step{done:06d}",
                            models, opt, done)
    return {"loss": losses, "step": steps}


# -- total-variation baseline -------------------------------------------------


def _tv_plane(x: np.ndarray, weight: float, iters: int) -> np.ndarray:
    """Anisotropic TV denoising of one plane by dual projection.

    Solves min_u 0.5*||u - x||^2 + weight * TV_1(u) via the dual
    formulation u = x - weight * div(p), iterating a projected gradient
    step on p with the componentwise clip to [-1, 1]; step size 0.25.
    """
    ph = np.zeros_like(x)
    pv = np.zeros_like(x)
    tau = 0.25
    for _ in range(iters):
        div = np.zeros_like(x)
        div += ph
        div[:, 1:] -= ph[:, :-1]
        div += pv
        div[1:, :] -= pv[:-1, :]
        target = div - x / weight
        gh = np.zeros_like(x)
        gh[:, :-1] = target[:, 1:] - target[:, :-1]
        gv = np.zeros_like(x)
        gv[:-1, :] = target[1:, :] - target[:-1, :]
        ph = np.clip(ph + tau * gh, -1.0, 1.0)
        pv = np.clip(pv + tau * gv, -1.0, 1.0)
    div = np.zeros_like(x)
    div += ph
    div[:, 1:] -= ph[:, :-1]
    div += pv
    div[1:, :] -= pv[:-1, :]
    return x - weight * div


def total_variation(x: np.ndarray) -> float:
    """Anisotropic TV: sum of absolute forward differences, all channels."""
    if x.ndim == 2:
        x = x[:, :, None]
    tv = 0.0
    for c in range(x.shape[2]):
        plane = x[:, :, c]
        tv += float(np.abs(np.diff(plane, axis=0)).sum())
        tv += float(np.abs(np.diff(plane, axis=1)).sum())
    return tv


def tv_denoise(x: np.ndarray, weight: float, iters: int = 30) -> np.ndarray:
    """Denoise a plane or cube channel by channel.

    Args:
        x: (H, W) plane or (H, W, C) cube.
        weight: regularization strength; 0 returns the input unchanged.
        iters: dual-ascent iterations.

    Returns:
        Denoised array of the same shape and dtype float64.
    """
    if weight < 0:
        raise ContractError(f"tv weight must be >= 0, got {weight}")
    if iters < 0:
        raise ContractError(f"iters must be >= 0, got {iters}")
    x64 = np.asarray(x, dtype=np.float64)
    if weight == 0 or iters == 0:
        return x64.copy()
    if x64.ndim == 2:
        return _tv_plane(x64, weight, iters)
    if x64.ndim != 3:
        raise DimensionError(f"tv_denoise expects 2-D or 3-D input, got {x64.ndim}-D")
    out = np.empty_like(x64)
    for c in range(x64.shape[2]):
        out[:, :, c] = _tv_plane(x64[:, :, c], weight, iters)
    return out


def gap_tv_reconstruct(y: np.ndarray, sensing: SensingOp, *,
                       tv_weight: float = 0.08, iters: int = 60,
                       tv_iters: int = 8) -> tuple[np.ndarray, GapState]:
    """Classic solver: alternate the GAP projection with TV denoising.

    Args:
        y: measurement, (H, W_ext) image or flattened vector.
        sensing: structured operator.
        tv_weight: TV strength per denoising pass.
        iters: outer project/denoise alternations; 0 returns the plain
            back-projection.
        tv_iters: dual iterations inside each denoising pass.

    Returns:
        (cube, state): the (H, W, C) reconstruction and the residual
        trace (||y - Phi f|| after each projection).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y.reshape(-1)
    if y.shape != (sensing.n,):
        raise DimensionError(
            f"measurement has {y.shape} entries, operator expects ({sensing.n},)")
    state = GapState()
    v = sensing.adjoint(y)
    cube = sensing.unvectorize(v)
    for _ in range(iters):
        f = gap_project(v, sensing, y)
        state.residuals.append(float(np.linalg.norm(y - sensing.apply(f))))
        cube = tv_denoise(sensing.unvectorize(f), tv_weight, tv_iters)
        v = sensing.vectorize(cube)
        state.stage += 1
        state.stage_outputs.append(cube)
    return cube, state
