"""The active domain adaptation loop.

Source pretraining of F and C, then ``rounds + 1`` adaptation rounds. Each
round trains on the current pools (labeled-target stage S1, unlabeled
adaptation stage S2), records metrics, and, except after the last round,
queries the oracle for that round's quota.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from . import losses, metrics
from .data import Dataset, PoolState, annotate, budget_count
from .errors import BudgetError, ConfigError
from .nets import ModelBundle, NetDims, SGD, init_bundle, load_params, save_params

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    LOSS = "loss"
    RANDOM = "random"
    ENTROPY = "entropy"


@dataclass
class RunConfig:
    budget_percent: float = 5.0
    rounds: int = 5
    per_round_quota: tuple[int, ...] | None = None
    margin: float = 1.0
    xi: float = 1.0
    gamma: int = 20
    learning_rate: float = 0.01
    momentum: float = 0.9
    grad_clip: float | None = 5.0
    loss_feedback: float = 1.0
    batch_size: int = 32
    pretrain_iters: int = 500
    s1_iters: int = 50
    s2_iters: int = 100
    seed: int = 0
    strategy: Strategy = Strategy.LOSS
    cold_start: bool = False
    enable_s1: bool = True
    enable_s2: bool = True
    use_pseudo_labels: bool = True
    enable_im: bool = True
    swap_stage_order: bool = False
    merge_source_labels: bool = False
    hidden: int = 64
    feature_dim: int = 32
    predictor_dim: int = 32
    misprediction_quantile: float = 0.5

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.per_round_quota is not None:
            self.per_round_quota = tuple(int(q) for q in self.per_round_quota)

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"{name} {why}, got {getattr(self, name)!r}", field=name)

        if self.budget_percent < 0 or self.budget_percent > 100:
            bad("budget_percent", "must lie in [0, 100]")
        if self.rounds < 1:
            bad("rounds", "must be >= 1")
        if self.margin <= 0:
            bad("margin", "must be positive")
        if self.xi < 0:
            bad("xi", "must be >= 0")
        if self.gamma < 1:
            bad("gamma", "must be >= 1")
        if self.learning_rate < 0:
            bad("learning_rate", "must be >= 0")
        if not 0 <= self.momentum < 1:
            bad("momentum", "must lie in [0, 1)")
        if self.loss_feedback < 0:
            bad("loss_feedback", "must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            bad("grad_clip", "must be positive (or unset)")
        if self.batch_size < 2 or self.batch_size % 2:
            bad("batch_size", "must be even and >= 2")
        for name in ("pretrain_iters", "s1_iters", "s2_iters", "seed"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        for name in ("hidden", "feature_dim", "predictor_dim"):
            if getattr(self, name) < 1:
                bad(name, "must be a positive integer")
        if not 0 < self.misprediction_quantile < 1:
            bad("misprediction_quantile", "must lie in (0, 1)")
        if self.per_round_quota is not None:
            if len(self.per_round_quota) != self.rounds:
                bad("per_round_quota", f"needs one entry per round ({self.rounds})")
            if any(q < 0 for q in self.per_round_quota):
                bad("per_round_quota", "entries must be >= 0")

    def quotas(self, n_unlabeled: int) -> list[int]:
        """Per-round annotation counts summing to ``floor(B% * N_tu)``."""
        total = budget_count(self.budget_percent, n_unlabeled)
        if self.per_round_quota is not None:
            if sum(self.per_round_quota) != total:
                raise ConfigError(f"per_round_quota sums to {sum(self.per_round_quota)}, budget is {total}",
                                  field="per_round_quota")
            return list(self.per_round_quota)
        base, extra = divmod(total, self.rounds)
        return [base + (1 if r < extra else 0) for r in range(self.rounds)]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["strategy"] = self.strategy.value
        d["per_round_quota"] = None if self.per_round_quota is None else list(self.per_round_quota)
        return d


def baseline_config(config: RunConfig, strategy: Strategy | str) -> RunConfig:
    """Conventional active learning protocol: the given selection rule,
    queried targets merged into the labeled source pool for supervised
    training, no unlabeled-target adaptation."""
    return config.replace(strategy=Strategy(strategy), enable_s1=True, enable_s2=False, cold_start=False,
                          merge_source_labels=True)


# Ablation grid: (selection, S1, S2 supervision, IM, stage order) per setting.
ABLATIONS: dict[str, dict] = {
    "Ablation1": dict(strategy=Strategy.LOSS, cold_start=True, enable_s1=False, use_pseudo_labels=False,
                      enable_im=False, swap_stage_order=False),
    "Ablation2": dict(strategy=Strategy.LOSS, cold_start=True, enable_s1=True, use_pseudo_labels=False,
                      enable_im=False, swap_stage_order=False),
    "Ablation3": dict(strategy=Strategy.LOSS, cold_start=False, enable_s1=True, use_pseudo_labels=False,
                      enable_im=False, swap_stage_order=False),
    "Ablation4": dict(strategy=Strategy.LOSS, cold_start=False, enable_s1=False, use_pseudo_labels=True,
                      enable_im=True, swap_stage_order=False),
    "Ablation5": dict(strategy=Strategy.LOSS, cold_start=False, enable_s1=True, use_pseudo_labels=True,
                      enable_im=False, swap_stage_order=True),
    "Ours": dict(strategy=Strategy.LOSS, cold_start=False, enable_s1=True, use_pseudo_labels=True,
                 enable_im=True, swap_stage_order=False),
}


def ablation_config(config: RunConfig, name: str) -> RunConfig:
    try:
        flags = ABLATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation {name!r}", field="ablation") from None
    return config.replace(enable_s2=True, merge_source_labels=False, **flags)


@dataclass
class RoundLog:
    round: int
    selected_ids: list[int]
    iterations: list[dict[str, float]]
    metrics: metrics.MetricsRecord

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round,
            "selected_ids": self.selected_ids,
            "iterations": self.iterations,
            "metrics": self.metrics.as_dict(),
        }, sort_keys=True)


# ------------------------------------------------------------------ helpers


def _even_batch(requested: int, available: int) -> int:
    b = min(requested, available)
    return b - (b % 2)


def _predictor_input(f: dc.Tensor, feedback: float) -> dc.Tensor:
    """Features as seen by P: same values, but the gradient that the ranking
    loss sends back into F is scaled by ``feedback``."""
    if feedback == 1.0:
        return f
    return dc.add(dc.mul(f, feedback), f.values * (1.0 - feedback))


def _params(bundle: ModelBundle, *names: str) -> list[dc.Tensor]:
    return [p for n in names for p in bundle.modules()[n].parameters()]


def pretrain(bundle: ModelBundle, source: Dataset, config: RunConfig, rng: np.random.Generator) -> ModelBundle:
    """Cross-entropy training of F and C on the labeled source, then freeze C."""
    if len(source) == 0:
        raise ConfigError("pretraining needs a non-empty source set", field="source")
    if np.any(source.y < 0):
        raise ConfigError("every source sample needs a label", field="source")
    opt = SGD(_params(bundle, "F", "C"), config.learning_rate, config.momentum, config.grad_clip)
    b = min(config.batch_size, len(source))
    for _ in range(config.pretrain_iters):
        idx = rng.choice(len(source), b, replace=False)
        ce, _ = losses.cross_entropy(bundle.C(bundle.F(source.x[idx])), source.y[idx])
        ce.backward()
        opt.step()
    bundle.freeze_classifier()
    return bundle


def select_queries(bundle: ModelBundle, unlabeled: Dataset, quota: int) -> list[int]:
    """Ids of the ``quota`` largest predicted losses, largest first; ties go
    to the lower id. Reads features only."""
    if quota > len(unlabeled):
        raise BudgetError(f"quota {quota} exceeds the unlabeled pool ({len(unlabeled)})")
    if quota <= 0:
        return []
    predicted = metrics.predicted_losses(bundle, unlabeled.x)
    order = np.lexsort((unlabeled.ids, -predicted))
    return [int(i) for i in unlabeled.ids[order[:quota]]]


def select_baseline(strategy: Strategy | str, bundle: ModelBundle, unlabeled: Dataset, quota: int,
                    rng: np.random.Generator) -> list[int]:
    strategy = Strategy(strategy)
    if quota > len(unlabeled):
        raise BudgetError(f"quota {quota} exceeds the unlabeled pool ({len(unlabeled)})")
    if quota <= 0:
        return []
    if strategy is Strategy.RANDOM:
        return [int(i) for i in rng.choice(unlabeled.ids, quota, replace=False)]
    if strategy is Strategy.ENTROPY:
        p = metrics.predict_probs(bundle, unlabeled.x)
        ent = -(p * np.log(np.clip(p, dc.LOG_CLAMP, 1.0))).sum(axis=1)
        order = np.lexsort((unlabeled.ids, -ent))
        return [int(i) for i in unlabeled.ids[order[:quota]]]
    raise ConfigError(f"{strategy.value} is not a baseline strategy", field="strategy")


def stage_s1(bundle: ModelBundle, labeled: Dataset, config: RunConfig, rng: np.random.Generator) -> list[dict]:
    """Labeled-target stage: F learns from CE + ranking loss, P from the
    ranking loss. The ranking gradient also reaches F through P's input."""
    b = _even_batch(config.batch_size, len(labeled))
    if b < 2:
        return []
    opt_f = SGD(_params(bundle, "F"), config.learning_rate, config.momentum, config.grad_clip)
    opt_p = SGD(_params(bundle, "P"), config.learning_rate, config.momentum, config.grad_clip)
    history = []
    for _ in range(config.s1_iters):
        idx = rng.choice(len(labeled), b, replace=False)
        f = bundle.F(labeled.x[idx])
        ce, ce_each = losses.cross_entropy(bundle.C(f), labeled.y[idx])
        l_loss = losses.margin_ranking_loss(bundle.P(_predictor_input(f, config.loss_feedback)), ce_each.values, losses.make_pairs(b, rng), config.margin)
        # CE does not depend on P, so P's gradient here is that of l_loss alone.
        dc.add(ce, l_loss).backward()
        opt_f.step()
        opt_p.step()
        history.append({"L_ce": ce.item(), "L_loss": l_loss.item()})
    return history


@dataclass
class PseudoLabelState:
    """Pseudo labels and the mean prediction over the unlabeled pool, frozen
    between refreshes."""

    labels: np.ndarray
    mean_probs: np.ndarray
    refreshed_at: list[int] = field(default_factory=list)

    @classmethod
    def compute(cls, bundle: ModelBundle, x: np.ndarray) -> "PseudoLabelState":
        p = metrics.predict_probs(bundle, x)
        return cls(dc.argmax_rows(p), p.mean(axis=0))


def s2_iteration(bundle: ModelBundle, config: RunConfig, x_tgt: np.ndarray, x_src: np.ndarray,
                 x_lab: np.ndarray | None, y_lab: np.ndarray | None, mean_probs: np.ndarray,
                 rng: np.random.Generator) -> dict[str, float]:
    """Forward pass and gradients for one adaptation iteration.

    ``x_lab``/``y_lab`` are the batch supervising L_loss and the first IM term:
    unlabeled targets with pseudo labels, or labeled targets with their
    true labels. Leaves gradients in F, P, D: F holds grad(L_im + L_loss +
    L_adv), P holds grad(L_loss), D holds grad(L_dis).
    """
    m = len(x_tgt)
    f = bundle.F(np.vstack([x_tgt, x_src]))
    d = bundle.D(f)
    l_dis = losses.discriminator_loss(dc.take_rows(d, np.arange(m, 2 * m)), dc.take_rows(d, np.arange(m)))
    l_adv = dc.neg(l_dis)
    objective_f = l_adv
    l_loss = l_im = None
    if x_lab is not None and len(x_lab) >= 2:
        f_lab = dc.take_rows(f, np.arange(m)) if x_lab is x_tgt else bundle.F(x_lab)
        logits = bundle.C(f_lab)
        probs = dc.softmax_rows(logits)
        _, ce_each = losses.cross_entropy(logits, y_lab)
        l_loss = losses.margin_ranking_loss(bundle.P(_predictor_input(f_lab, config.loss_feedback)), ce_each.values, losses.make_pairs(len(x_lab), rng),
                                            config.margin)
        objective_f = dc.add(objective_f, l_loss)
        if config.enable_im:
            # Value of the mean prediction is the frozen whole-pool estimate;
            # its gradient is routed through the current target batch.
            probs_t = probs if x_lab is x_tgt else dc.softmax_rows(bundle.C(dc.take_rows(f, np.arange(m))))
            batch_mean = dc.mean(probs_t, axis=0)
            routed = dc.add(dc.sub(batch_mean, batch_mean.values), mean_probs)
            l_im = losses.info_max_loss(probs, y_lab, routed, config.xi)
            objective_f = dc.add(objective_f, l_im)
    objective_f.backward()
    # D only enters through l_adv = -l_dis; flipping its gradient yields grad(l_dis).
    for p in bundle.D.parameters():
        p.grad *= -1.0
    return losses.total_loss_report(
        0.0 if l_loss is None else l_loss.item(),
        0.0 if l_im is None else l_im.item(),
        l_dis.item(),
        l_adv.item(),
    )


def stage_s2(bundle: ModelBundle, pool: PoolState, config: RunConfig, rng: np.random.Generator,
             trace: list | None = None) -> list[dict]:
    """Unlabeled-target adaptation for ``s2_iters`` iterations.

    Pseudo labels and the mean prediction are refreshed before the first
    iteration and whenever the iteration number is a multiple of gamma.
    """
    if config.gamma < 1:
        raise ConfigError(f"gamma must be >= 1, got {config.gamma}", field="gamma")
    unlabeled = pool.unlabeled_target
    if len(unlabeled) == 0:
        return []
    labeled = pool.labeled_target
    b = _even_batch(config.batch_size, min(len(unlabeled), len(pool.source)))
    if b < 2:
        return []
    opt_f = SGD(_params(bundle, "F"), config.learning_rate, config.momentum, config.grad_clip)
    opt_p = SGD(_params(bundle, "P"), config.learning_rate, config.momentum, config.grad_clip)
    opt_d = SGD(_params(bundle, "D"), config.learning_rate, config.momentum, config.grad_clip)
    history = []
    state = None
    for n in range(config.s2_iters + 1):
        if n % config.gamma == 0:
            state = PseudoLabelState.compute(bundle, unlabeled.x)
            if trace is not None:
                trace.append((n, state.labels.copy(), state.mean_probs.copy()))
        if n == 0:
            continue
        t_idx = rng.choice(len(unlabeled), b, replace=False)
        s_idx = rng.choice(len(pool.source), b, replace=False)
        x_tgt = unlabeled.x[t_idx]
        if config.use_pseudo_labels:
            x_lab, y_lab = x_tgt, state.labels[t_idx]
        else:
            bl = _even_batch(b, len(labeled))
            if bl >= 2:
                l_idx = rng.choice(len(labeled), bl, replace=False)
                x_lab, y_lab = labeled.x[l_idx], labeled.y[l_idx]
            else:
                x_lab = y_lab = None
        report = s2_iteration(bundle, config, x_tgt, pool.source.x[s_idx], x_lab, y_lab, state.mean_probs, rng)
        opt_f.step()
        opt_p.step()
        opt_d.step()
        history.append(report)
    return history


# --------------------------------------------------------------- full loop


def _round_metrics(bundle: ModelBundle, pool: PoolState, config: RunConfig, round_idx: int,
                   s2_history: list[dict]) -> metrics.MetricsRecord:
    target = pool.target
    unlabeled = pool.unlabeled_target
    truth = pool.unlabeled_ground_truth()
    if len(unlabeled):
        probs = metrics.predict_probs(bundle, unlabeled.x)
        pseudo_acc = metrics.pseudo_label_accuracy(dc.argmax_rows(probs), truth)
        pred_entropy = metrics.entropy(probs.mean(axis=0))
    else:
        pseudo_acc, pred_entropy = float("nan"), float("nan")
    if len(unlabeled) >= 2:
        high, low = metrics.misprediction_split(bundle, unlabeled.x, truth, unlabeled.ids,
                                                config.misprediction_quantile)
    else:
        high = low = float("nan")
    if pool.labeled_ids:
        coverage, dist = metrics.diversity_proxies(pool.labeled_ids, bundle, pool)
    else:
        coverage, dist = 0, 0.0
    keys = ("L_loss", "L_im", "L_dis", "L_adv")
    comps = {k: (float(np.mean([h[k] for h in s2_history])) if s2_history else 0.0) for k in keys}
    return metrics.MetricsRecord(
        round=round_idx,
        budget_spent_percent=100.0 * pool.spent / len(target),
        target_accuracy=metrics.target_accuracy(bundle, target.x, target.y),
        pseudo_label_accuracy=pseudo_acc,
        high_loss_misprediction_rate=high,
        low_loss_misprediction_rate=low,
        selected_class_coverage=coverage,
        selected_mean_pairwise_feature_distance=dist,
        mean_prediction_entropy=pred_entropy,
        losses=comps,
    )


def _adapt(bundle: ModelBundle, pool: PoolState, config: RunConfig, rng: np.random.Generator) -> list[dict]:
    def s1():
        if config.enable_s1:
            labeled = pool.labeled_target
            if config.merge_source_labels:
                labeled = Dataset(np.vstack([pool.source.x, labeled.x]), np.concatenate([pool.source.y, labeled.y]),
                                  np.concatenate([pool.source.ids, labeled.ids]))
            stage_s1(bundle, labeled, config, rng)
        return []

    def s2():
        return stage_s2(bundle, pool, config, rng) if config.enable_s2 else []

    if config.swap_stage_order:
        history = s2()
        s1()
    else:
        s1()
        history = s2()
    return history


def _rngs(seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    init_ss, train_ss, select_ss = np.random.SeedSequence(seed).spawn(3)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(train_ss), np.random.default_rng(select_ss)


def num_classes_of(source: Dataset, target: Dataset) -> int:
    labels = np.concatenate([source.y, target.y])
    return int(labels.max()) + 1


def run_active_loop(config: RunConfig, source: Dataset, target: Dataset, *,
                    checkpoint_dir: str | Path | None = None, resume: bool = False,
                    on_round: Callable[[RoundLog], None] | None = None) -> list[RoundLog]:
    """Run one experiment and return one :class:`RoundLog` per round.

    With ``checkpoint_dir``, the model, pool, and generator states are saved
    after every round; ``resume=True`` continues from the newest one and
    returns only the rounds run after it.
    """
    config.validate()
    if np.any(target.y < 0):
        raise ConfigError("every target sample needs a ground-truth label for the oracle", field="target")
    dims = NetDims(source.num_features, config.hidden, config.feature_dim, config.predictor_dim,
                   num_classes_of(source, target))
    init_seed, rng, select_rng = _rngs(config.seed)
    quotas = config.quotas(len(target))
    pool = PoolState.create(source, target, sum(quotas))
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    start = 0
    bundle = None
    if resume and ckpt_dir is not None:
        found = sorted(ckpt_dir.glob("round_*.json"))
        if found:
            bundle, pool, rng, select_rng, start = load_round_checkpoint(found[-1], source, target)
    if bundle is None:
        bundle = init_bundle(dims, init_seed)
        pretrain(bundle, source, config, rng)
    logs = []
    selected: list[int] = []
    if start > 0:
        selected = list(pool.labeled_ids[len(pool.labeled_ids) - quotas[start - 1]:]) if quotas[start - 1] else []
    for r in range(start, config.rounds + 1):
        history = _adapt(bundle, pool, config, rng)
        record = _round_metrics(bundle, pool, config, r, history)
        entry = RoundLog(r, selected, history, record)
        logs.append(entry)
        log.info("round %d: target_acc=%.4f spent=%d", r, record.target_accuracy, pool.spent)
        if on_round is not None:
            on_round(entry)
        if r < config.rounds:
            quota = quotas[r]
            unlabeled = pool.unlabeled_target
            if config.strategy is Strategy.LOSS and not (config.cold_start and r == 0):
                selected = select_queries(bundle, unlabeled, quota)
            else:
                strategy = Strategy.RANDOM if config.strategy is Strategy.LOSS else config.strategy
                selected = select_baseline(strategy, bundle, unlabeled, quota, select_rng)
            pool = annotate(pool, selected)
            if ckpt_dir is not None:
                save_round_checkpoint(ckpt_dir / f"round_{r + 1:03d}.json", bundle, pool, rng, select_rng, r + 1)
    return logs


def save_round_checkpoint(path: Path, bundle: ModelBundle, pool: PoolState, rng: np.random.Generator,
                          select_rng: np.random.Generator, next_round: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    save_params(path, bundle, extra={
        "next_round": next_round,
        "labeled_ids": list(pool.labeled_ids),
        "spent": pool.spent,
        "total_budget": pool.total_budget,
        "rng": rng.bit_generator.state,
        "select_rng": select_rng.bit_generator.state,
    })


def load_round_checkpoint(path, source: Dataset, target: Dataset):
    bundle, extra = load_params(path)
    pool = PoolState(source, target, tuple(extra["labeled_ids"]), extra["total_budget"], extra["spent"])
    rng = np.random.default_rng()
    rng.bit_generator.state = extra["rng"]
    select_rng = np.random.default_rng()
    select_rng.bit_generator.state = extra["select_rng"]
    return bundle, pool, rng, select_rng, int(extra["next_round"])
