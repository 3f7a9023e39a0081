"""Training objectives: cross-entropy, the pairwise margin ranking loss for
the loss predictor, information maximization, and the domain game."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import LOG_CLAMP, Tensor
from .errors import ConfigError, ContractError, DimensionError, NumericDomainError


class RankingPair(NamedTuple):
    idx_n: int
    idx_m: int


def _labels(labels, num_classes: int, m: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise DimensionError(f"expected {m} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise NumericDomainError(f"labels must lie in [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, labels) -> tuple[Tensor, Tensor]:
    """Return ``(mean CE, per-sample CE)`` of logits against class indices."""
    m, k = logits.shape
    labels = _labels(labels, k, m)
    per_sample = dc.neg(dc.pick(dc.log_softmax_rows(logits), np.arange(m), labels))
    return dc.mean(per_sample), per_sample


def make_pairs(m: int, rng: np.random.Generator) -> list[RankingPair]:
    """Shuffle ``range(m)`` and pair position i with position i + m/2."""
    if m < 2 or m % 2:
        raise ContractError(f"pair construction needs an even batch of at least 2, got {m}")
    perm = rng.permutation(m)
    half = m // 2
    return [RankingPair(int(perm[i]), int(perm[i + half])) for i in range(half)]


def margin_ranking_loss(pred_loss: Tensor, true_loss, pairs: Sequence[RankingPair], margin: float = 1.0) -> Tensor:
    """Mean over pairs of ``max(0, -s * (pred_n - pred_m) + margin)`` where
    ``s = +1`` if ``true_n > true_m`` else ``-1``.

    ``true_loss`` is read as plain numbers, so no gradient reaches it.
    """
    if not pairs:
        raise ContractError("margin ranking loss needs at least one pair")
    if margin <= 0:
        raise ConfigError(f"margin must be positive, got {margin}", field="margin")
    true = true_loss.values if isinstance(true_loss, Tensor) else np.asarray(true_loss, dtype=np.float64)
    true = true.reshape(-1)
    idx_n = np.fromiter((p.idx_n for p in pairs), dtype=np.int64, count=len(pairs))
    idx_m = np.fromiter((p.idx_m for p in pairs), dtype=np.int64, count=len(pairs))
    if np.any(idx_n == idx_m):
        raise ContractError("a ranking pair must use two distinct samples")
    pred = pred_loss if pred_loss.values.ndim == 2 else dc.reshape(pred_loss, (-1, 1))
    zeros = np.zeros(len(pairs), dtype=np.int64)
    diff = dc.sub(dc.pick(pred, idx_n, zeros), dc.pick(pred, idx_m, zeros))
    sign = np.where(true[idx_n] > true[idx_m], 1.0, -1.0)
    return dc.mean(dc.relu(dc.add(dc.mul(diff, -sign), margin)))


def diversity_term(mean_probs: Tensor, xi: float) -> Tensor:
    """``xi * (KL(mean_probs || uniform) - log C)``, i.e. ``-xi * H(mean_probs)``."""
    k = mean_probs.size
    p = dc.reshape(mean_probs, (k,))
    kl = dc.sum(dc.mul(p, dc.add(dc.log(p, clamp=LOG_CLAMP), math.log(k))))
    return dc.mul(dc.sub(kl, math.log(k)), xi)


def info_max_loss(probs: Tensor, pseudo_labels, mean_probs, xi: float = 1.0) -> Tensor:
    """Pseudo-label cross-entropy on ``probs`` plus the class-diversity term
    evaluated at ``mean_probs``.

    ``mean_probs`` may be a constant array or a tensor carrying gradient;
    the caller decides how the diversity term is differentiated.
    """
    if xi < 0:
        raise ConfigError(f"xi must be >= 0, got {xi}", field="xi")
    m, k = probs.shape
    labels = _labels(pseudo_labels, k, m)
    logp = dc.log(dc.pick(probs, np.arange(m), labels), clamp=LOG_CLAMP)
    term1 = dc.neg(dc.mean(logp))
    mean_probs = dc.as_tensor(mean_probs)
    if mean_probs.size != k:
        raise DimensionError(f"mean_probs has {mean_probs.size} entries for {k} classes")
    return dc.add(term1, diversity_term(mean_probs, xi))


def discriminator_loss(d_src: Tensor, d_tgt: Tensor) -> Tensor:
    """``-mean(log d_src) - mean(log(1 - d_tgt))``; source is domain 1."""
    if d_src.size == 0 or d_tgt.size == 0:
        raise ContractError("discriminator loss needs non-empty source and target batches")
    src = dc.mean(dc.log(d_src, clamp=LOG_CLAMP))
    tgt = dc.mean(dc.log(dc.sub(1.0, d_tgt), clamp=LOG_CLAMP))
    return dc.neg(dc.add(src, tgt))


def adversarial_loss(d_src: Tensor, d_tgt: Tensor) -> Tensor:
    return dc.neg(discriminator_loss(d_src, d_tgt))


def total_loss_report(l_loss: float, l_im: float, l_dis: float, l_adv: float) -> dict[str, float]:
    """Loss components of one adaptation iteration and their plain sum.

    The sum is for logging only; training applies the per-module updates.
    """
    parts = {"L_loss": float(l_loss), "L_im": float(l_im), "L_dis": float(l_dis), "L_adv": float(l_adv)}
    parts["L_total"] = parts["L_loss"] + parts["L_adv"] + parts["L_im"] + parts["L_dis"]
    return parts
