"""End-to-end gradient verification of the span pipeline.

Runs the whole chain (BiLSTM, biaffine scores with dropout, residual
projection, span max-pool, contrastive loss on one positive/negative pair)
in float64 and compares backpropagated gradients against central finite
differences, parameter tensor by parameter tensor.
"""
from __future__ import annotations

import numpy as np

from ._util import derive_seed
from .autograd import backward, finite_diff_grad
from .corpus import Sentence, SpanAnnotation
from .model import ModelConfig, ModelParams, model_forward
from .objective import LossConfig, PairSet, circle_loss

__all__ = ["full_pipeline_grad_check"]


def _pipeline_loss(
    sentence: Sentence,
    embeds: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    loss_config: LossConfig,
    dropout_seed: int,
):
    reps = model_forward(
        sentence, embeds, params, config, train=True, dropout_seed=dropout_seed
    )
    by_span = {(r.start, r.end): r for r in reps}
    pair = PairSet(
        anchor=by_span[(1, 1)],
        positives=[by_span[(2, 2)]],
        negatives=[by_span[(3, 3)]],
    )
    return circle_loss(pair, loss_config)


def full_pipeline_grad_check(
    seed: int = 0,
    d: int = 8,
    h: int = 4,
    r: int = 4,
    tau: float = 10.0,
    bias: float = 30.0,
    step: float = 1e-5,
) -> dict[str, float]:
    """Compare analytic and finite-difference gradients per parameter.

    Uses a 3-token sentence whose first two single-token spans share a
    label (anchor and positive) while the third supplies the negative.
    Returns relative errors per parameter plus a "max" entry; each error is
    max|a - f| / max(max|a|, max|f|, 1e-12) over the tensor.
    """
    rng = np.random.default_rng(derive_seed(seed, "grad-check"))
    sentence = Sentence(
        id="gc0",
        tokens=("t1", "t2", "t3"),
        annotations=(
            SpanAnnotation(1, 1, "alpha"),
            SpanAnnotation(2, 2, "alpha"),
            SpanAnnotation(3, 3, "beta"),
        ),
    )
    embeds = rng.uniform(-1.0, 1.0, size=(3, d))
    config = ModelConfig(d=d, h=h, r=r, dropout=0.2, max_len=3)
    loss_config = LossConfig(tau=tau, bias=bias)
    params = ModelParams.initialize(
        config, derive_seed(seed, "params"), dtype=np.float64
    )
    dropout_seed = derive_seed(seed, "mask")

    loss = _pipeline_loss(sentence, embeds, params, config, loss_config, dropout_seed)
    backward(loss)

    errors: dict[str, float] = {}
    worst = 0.0
    for name, tensor in params.items():
        analytic = np.zeros_like(tensor.value) if tensor.grad is None else tensor.grad

        def f(candidate: np.ndarray, _name=name) -> float:
            trial = params.clone()
            trial.tensors[_name].value = candidate
            return _pipeline_loss(
                sentence, embeds, trial, config, loss_config, dropout_seed
            ).item()

        numeric = finite_diff_grad(f, tensor.value, h=step)
        scale = max(
            float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12
        )
        err = float(np.max(np.abs(analytic - numeric))) / scale
        errors[name] = err
        worst = max(worst, err)
    errors["max"] = worst
    return errors
