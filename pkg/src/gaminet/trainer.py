"""Three-stage training: main effects, screened interactions, joint fine-tuning.

Each stage runs mini-batch Adam with early stopping on the unpenalized
validation loss and restores the best parameters seen (the pre-stage state
counts as a candidate).  Stages 1 and 2 end with centering and pruning.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ConfigurationError, Dataset
from .model import (CategoricalEffect, GamiNetModel, center_effects, clarity_pairs, effect_variance,
                    encode_inputs, evaluate_effect, loss, loss_grad)
from .nn_core import ACTIVATIONS, AdamState, NumericError, SubnetStack, adam_step, make_subnetwork
from .screen import DEFAULT_BINS, InteractionCandidate, compute_residuals, rank_interactions
from .seeding import substream

log = logging.getLogger(__name__)

HEREDITY = ("weak", "none")


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    subnet_layers: Tuple[int, ...] = (40, 40, 40, 40, 40)
    activation: str = "relu"
    learning_rate: float = 1e-4
    epochs_stage1: int = 5000
    epochs_stage2: int = 5000
    epochs_stage3: int = 500
    batch_size: Optional[int] = None
    early_stop_patience: int = 50
    tolerance_eta: float = 0.01
    max_interactions: int = 20
    clarity_lambda: float = 0.1
    heredity: str = "weak"
    screen_bins: int = DEFAULT_BINS
    seed: int = 0

    def __post_init__(self):
        self.subnet_layers = tuple(int(w) for w in self.subnet_layers)

    def validate(self, n_train: Optional[int] = None) -> "TrainConfig":
        if not self.subnet_layers or min(self.subnet_layers) < 1:
            raise ConfigurationError("subnet_layers must be a non-empty list of positive widths")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {ACTIVATIONS}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        for name in ("epochs_stage1", "epochs_stage2", "epochs_stage3", "early_stop_patience"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.max_interactions < 0:
            raise ConfigurationError("max_interactions must be >= 0")
        if not self.tolerance_eta >= 0:
            raise ConfigurationError("tolerance_eta must be >= 0")
        if not self.clarity_lambda >= 0:
            raise ConfigurationError("clarity_lambda must be >= 0")
        if self.heredity not in HEREDITY:
            raise ConfigurationError(f"heredity must be one of {HEREDITY}")
        if self.screen_bins < 2:
            raise ConfigurationError("screen_bins must be >= 2")
        if self.batch_size is not None:
            if self.batch_size < 1:
                raise ConfigurationError("batch_size must be >= 1")
            if n_train is not None and self.batch_size > n_train:
                raise ConfigurationError(f"batch_size {self.batch_size} exceeds training size {n_train}")
        return self

    def resolved_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return min(n, 1000, max(32, n // 20))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subnet_layers"] = list(self.subnet_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class PruneResult:
    ordered_effect_ids: List[str]
    cumulative_val_losses: List[float]
    selected_count: int
    threshold: float
    eta: float

    def to_dict(self) -> dict:
        return asdict(self)


def select_count(losses: Sequence[float], eta: float) -> Tuple[int, float]:
    """Smallest index whose loss is within ``(1 + eta)`` of the minimum."""
    threshold = (1.0 + eta) * min(losses)
    return next(i for i, l in enumerate(losses) if l <= threshold), threshold


def prune(ordered_ids: Sequence[str], evaluate, eta: float) -> PruneResult:
    """``evaluate(i)`` returns the validation loss of the base model plus the top-``i`` candidates."""
    losses = [float(evaluate(i)) for i in range(len(ordered_ids) + 1)]
    s, threshold = select_count(losses, eta)
    return PruneResult(list(ordered_ids), losses, s, threshold, eta)


@dataclass
class StageTrace:
    stage: str
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    initial_val_loss: Optional[float] = None
    best_val_loss: Optional[float] = None
    best_epoch: int = 0  # 0 means the pre-stage parameters were kept
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.val_loss)

    def summary(self) -> dict:
        return {"stage": self.stage, "epochs": self.epochs, "best_epoch": self.best_epoch,
                "initial_val_loss": self.initial_val_loss, "best_val_loss": self.best_val_loss,
                "stopped_early": self.stopped_early}


@dataclass
class TrainingTrace:
    stages: List[StageTrace] = field(default_factory=list)

    def stage(self, name: str) -> StageTrace:
        return next(s for s in self.stages if s.stage == name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "stage", "train_loss", "val_loss"])
            for st in self.stages:
                for e, (tl, vl) in enumerate(zip(st.train_loss, st.val_loss), start=1):
                    w.writerow([e, st.stage, repr(tl), repr(vl)])


@dataclass
class FitResult:
    model: GamiNetModel
    trace: TrainingTrace
    main_prune: Optional[PruneResult]
    interaction_prune: Optional[PruneResult]
    candidates: List[InteractionCandidate]
    config: TrainConfig

    def report(self) -> dict:
        m = self.model
        return {
            "config": self.config.to_dict(),
            "stages": [s.summary() for s in self.trace.stages],
            "main_effect_pruning": self.main_prune.to_dict() if self.main_prune else None,
            "interaction_screen": [{"pair": [m.meta[c.pair[0]].name, m.meta[c.pair[1]].name], "score": c.score}
                                   for c in self.candidates],
            "interaction_pruning": self.interaction_prune.to_dict() if self.interaction_prune else None,
            "active_main_effects": [m.effect_id(j) for j in sorted(m.main_effects)],
            "active_interactions": [m.effect_id(jk) for jk in sorted(m.interactions)],
        }


# -- trainable blocks ----------------------------------------------------------

class _NetBlock:
    """Subnetworks sharing one layer layout, trained as stacks of ``CHUNK`` nets.

    Small stacks keep per-layer intermediates cache-resident; one 100-net stack
    is memory-bandwidth bound.
    """

    CHUNK = 10

    def __init__(self, keys, nets, meta, train_x, val_x, lr):
        self.keys = list(keys)
        self.arity = [len(k) if isinstance(k, tuple) else 1 for k in self.keys]
        feats = [list(k) if isinstance(k, tuple) else [k] for k in self.keys]
        self.slices = [slice(i, min(i + self.CHUNK, len(nets))) for i in range(0, len(nets), self.CHUNK)]
        self.stacks = [SubnetStack.from_subnets(nets[sl]) for sl in self.slices]
        self.train_in = [np.stack([encode_inputs(meta, train_x, f) for f in feats[sl]]) for sl in self.slices]
        self.val_in = [np.stack([encode_inputs(meta, val_x, f) for f in feats[sl]]) for sl in self.slices]
        self.params = [p for st in self.stacks for p in st.parameters()]
        self.opt = [AdamState.like(p, learning_rate=lr) for p in self.params]

    def forward(self, rows):
        outs, caches = zip(*[st.forward(x[:, rows, :]) for st, x in zip(self.stacks, self.train_in)])
        return np.concatenate(outs), caches

    def evaluate_val(self):
        return np.concatenate([st.forward(x, keep_cache=False)[0] for st, x in zip(self.stacks, self.val_in)])

    def evaluate_train(self):
        return np.concatenate([st.forward(x, keep_cache=False)[0] for st, x in zip(self.stacks, self.train_in)])

    def step(self, caches, upstream):
        grads = []
        for st, sl, cache in zip(self.stacks, self.slices, caches):
            grads.extend(st.backward(cache, upstream[sl]))
        for i, (p, g, opt) in enumerate(zip(self.params, grads, self.opt)):
            adam_step(opt, p, g, name=self._name(i))

    def _name(self, i):
        depth = len(self.stacks[0].weights)
        chunk, j = divmod(i, 2 * depth)
        keys = self.keys[self.slices[chunk]]
        return f"subnets[{keys[0]}..{keys[-1]}].{'weights' if j % 2 == 0 else 'biases'}[{j // 2}]"

    def snapshot(self):
        return [p.copy() for p in self.params]

    def restore(self, snap):
        for p, s in zip(self.params, snap):
            p[...] = s

    def write_back(self, model: GamiNetModel):
        nets = [net for st, sl in zip(self.stacks, self.slices) for net in st.to_subnets(self.arity[sl])]
        for key, net in zip(self.keys, nets):
            if isinstance(key, tuple):
                model.interactions[key] = net
            else:
                model.main_effects[key] = net


class _CategoricalBlock:
    """Per-level bias tables of categorical main effects."""

    def __init__(self, keys, effects, train_x, val_x, lr):
        self.keys = list(keys)
        self.tables = [e.level_biases.copy() for e in effects]
        self.offsets = np.array([e.offset for e in effects])
        self.train_codes = np.stack([train_x[:, j].astype(int) for j in self.keys])
        self.val_codes = np.stack([val_x[:, j].astype(int) for j in self.keys])
        self.opt = [AdamState.like(t, learning_rate=lr) for t in self.tables]

    def _eval(self, codes):
        return np.stack([t[c] for t, c in zip(self.tables, codes)]) - self.offsets[:, None]

    def forward(self, rows):
        codes = self.train_codes[:, rows]
        return self._eval(codes), codes

    def evaluate_val(self):
        return self._eval(self.val_codes)

    def evaluate_train(self):
        return self._eval(self.train_codes)

    def step(self, codes, upstream):
        for s, (t, st) in enumerate(zip(self.tables, self.opt)):
            g = np.bincount(codes[s], weights=upstream[s], minlength=len(t))
            adam_step(st, t, g, name=f"categorical[{self.keys[s]}]")

    def snapshot(self):
        return [t.copy() for t in self.tables]

    def restore(self, snap):
        for t, s in zip(self.tables, snap):
            t[...] = s

    def write_back(self, model: GamiNetModel):
        for key, t, off in zip(self.keys, self.tables, self.offsets):
            model.main_effects[key] = CategoricalEffect(t.copy(), float(off))


def _build_blocks(model: GamiNetModel, keys, train: Dataset, val: Dataset, lr: float):
    cat_keys = [k for k in keys if not isinstance(k, tuple) and isinstance(model.main_effects[k], CategoricalEffect)]
    by_width: Dict[Tuple[int, ...], list] = {}
    for k in keys:
        if k in cat_keys:
            continue
        net = model.effect(k)
        sig = (net.in_dim, tuple((l.out_dim, l.activation) for l in net.layers))
        by_width.setdefault(sig, []).append(k)
    blocks = []
    if cat_keys:
        blocks.append(_CategoricalBlock(cat_keys, [model.main_effects[k] for k in cat_keys],
                                        train.features, val.features, lr))
    for ks in sorted(by_width.values(), key=lambda ks: (1, *ks[0]) if isinstance(ks[0], tuple) else (0, ks[0])):
        blocks.append(_NetBlock(ks, [model.effect(k) for k in ks], model.meta, train.features, val.features, lr))
    return blocks


def _run_stage(name: str, model: GamiNetModel, keys, train: Dataset, val: Dataset, config: TrainConfig,
               epochs: int, train_intercept: bool, stage_index: int) -> StageTrace:
    """Optimize the effects in ``keys`` (others frozen); writes the best parameters back to ``model``."""
    trace = StageTrace(name)
    link = model.link
    lam = config.clarity_lambda
    keys = list(keys)
    frozen = [k for k in model.effect_keys() if k not in set(keys)]
    # frozen contributions are constants for the whole stage
    frozen_train = {k: evaluate_effect(model, k, train.features) for k in frozen}
    frozen_val = {k: evaluate_effect(model, k, val.features) for k in frozen}
    base_train = sum(frozen_train.values(), np.zeros(train.n))
    base_val = sum(frozen_val.values(), np.zeros(val.n))
    blocks = _build_blocks(model, keys, train, val, config.learning_rate)
    locate = {k: (bi, i) for bi, b in enumerate(blocks) for i, k in enumerate(b.keys)}
    pairs = [(j, jk) for j, jk in clarity_pairs(model.main_effects, model.interactions)
             if j in locate or jk in locate] if lam > 0 else []

    intercept = np.array([model.intercept])
    icpt_opt = AdamState.like(intercept, learning_rate=config.learning_rate)

    def val_loss():
        eta = intercept[0] + base_val
        for b in blocks:
            eta = eta + b.evaluate_val().sum(axis=0)
        return loss(link, val.response, eta)

    def snapshot():
        return intercept.copy(), [b.snapshot() for b in blocks]

    best = val_loss()
    trace.initial_val_loss = trace.best_val_loss = best
    best_state = snapshot()
    bs = config.resolved_batch_size(train.n)
    rng = substream(config.seed, "batching", stage_index)
    y = train.response

    for epoch in range(1, epochs + 1):
        perm = rng.permutation(train.n)
        total = 0.0
        for start in range(0, train.n, bs):
            rows = perm[start:start + bs]
            b_n = len(rows)
            outs = [b.forward(rows) for b in blocks]
            eta = intercept[0] + base_train[rows]
            for out, _ in outs:
                eta = eta + out.sum(axis=0)
            batch_loss = loss(link, y[rows], eta)
            if not np.isfinite(batch_loss):
                raise TrainingDivergence(f"{name}: non-finite training loss at epoch {epoch}")
            total += batch_loss * b_n
            g_eta = loss_grad(link, y[rows], eta)
            ups = [np.broadcast_to(g_eta, out.shape).copy() for out, _ in outs]
            for j, jk in pairs:
                h = outs[locate[j][0]][0][locate[j][1]] if j in locate else frozen_train[j][rows]
                f = outs[locate[jk][0]][0][locate[jk][1]] if jk in locate else frozen_train[jk][rows]
                c = float(np.dot(h, f)) / b_n
                # d|mean(h f)|/df_i = sign * h_i / B, and symmetrically for h
                sgn = lam * np.sign(c) / b_n
                if jk in locate:
                    ups[locate[jk][0]][locate[jk][1]] += sgn * h
                if j in locate:
                    ups[locate[j][0]][locate[j][1]] += sgn * f
            try:
                for b, (_, cache), up in zip(blocks, outs, ups):
                    b.step(cache, up)
                if train_intercept:
                    adam_step(icpt_opt, intercept, np.array([g_eta.sum()]), name="intercept")
            except NumericError as exc:
                raise TrainingDivergence(f"{name}: {exc} at epoch {epoch}") from exc
        vl = val_loss()
        if not np.isfinite(vl):
            raise TrainingDivergence(f"{name}: non-finite validation loss at epoch {epoch}")
        trace.train_loss.append(total / train.n)
        trace.val_loss.append(vl)
        if vl < best:
            best, trace.best_epoch = vl, epoch
            trace.best_val_loss = vl
            best_state = snapshot()
        elif epoch - trace.best_epoch >= config.early_stop_patience:
            trace.stopped_early = True
            break

    intercept[...] = best_state[0]
    for b, snap in zip(blocks, best_state[1]):
        b.restore(snap)
        b.write_back(model)
    model.intercept = float(intercept[0])
    log.info("%s: %d epochs, best val loss %.6g at epoch %d", name, trace.epochs, best, trace.best_epoch)
    return trace


def _initial_intercept(link: str, y) -> float:
    m = float(np.mean(y))
    if link == "identity":
        return m
    m = min(max(m, 1e-6), 1 - 1e-6)
    return float(np.log(m / (1 - m)))


def _ordered_by_variance(model: GamiNetModel, keys, x) -> List:
    n = x.shape[0]
    d = {}
    for k in keys:
        v = evaluate_effect(model, k, x)
        d[k] = float(np.dot(v, v) / (n - 1))
    # descending D; ties broken by feature index / lexicographic pair
    return sorted(keys, key=lambda k: (-d[k], k if isinstance(k, tuple) else (k,)))


def _prune_stage(model: GamiNetModel, keys, val: Dataset, eta: float, base_intercept: Optional[float] = None,
                 shifts: Optional[Dict] = None) -> Tuple[PruneResult, list]:
    """Tolerance-rule pruning of ``keys`` (given in descending-D order) against the rest of the model.

    ``shifts`` maps a key to the mean that centering moved out of it; with
    ``base_intercept`` this evaluates the candidates as they were before
    centering, on top of an earlier intercept.
    """
    shifts = shifts or {}
    icpt = model.intercept if base_intercept is None else base_intercept
    base = icpt + sum((evaluate_effect(model, k, val.features)
                       for k in model.effect_keys() if k not in set(keys)), np.zeros(val.n))
    contrib = [evaluate_effect(model, k, val.features) + shifts.get(k, 0.0) for k in keys]
    cumulative = [base]
    for c in contrib:
        cumulative.append(cumulative[-1] + c)
    result = prune([model.effect_id(k) for k in keys],
                   lambda i: loss(model.link, val.response, cumulative[i]), eta)
    return result, list(keys[:result.selected_count])


def train_main_effects(model: GamiNetModel, train: Dataset, val: Dataset, config: TrainConfig) -> StageTrace:
    trace = _run_stage("main_effects", model, sorted(model.main_effects), train, val, config,
                       config.epochs_stage1, train_intercept=True, stage_index=1)
    center_effects(model, train.features, sorted(model.main_effects))
    return trace


def train_interactions(model: GamiNetModel, candidates: Sequence[InteractionCandidate], train: Dataset,
                       val: Dataset, config: TrainConfig) -> StageTrace:
    if not candidates:
        return StageTrace("interactions")
    rng = substream(config.seed, "init", 2)
    for c in candidates:
        j, k = c.pair
        width = model.meta[j].width + model.meta[k].width
        model.interactions[c.pair] = make_subnetwork(width, config.subnet_layers, rng, config.activation,
                                                     input_arity=2)
    keys = sorted(c.pair for c in candidates)
    trace = _run_stage("interactions", model, keys, train, val, config, config.epochs_stage2,
                       train_intercept=False, stage_index=2)
    center_effects(model, train.features, keys)
    return trace


def fine_tune(model: GamiNetModel, train: Dataset, val: Dataset, config: TrainConfig) -> StageTrace:
    trace = _run_stage("fine_tuning", model, model.effect_keys(), train, val, config, config.epochs_stage3,
                       train_intercept=True, stage_index=3)
    center_effects(model, train.features)
    return trace


def _init_main_effects(model: GamiNetModel, config: TrainConfig):
    rng = substream(config.seed, "init", 1)
    for j, m in enumerate(model.meta):
        if m.kind == "categorical":
            model.main_effects[j] = CategoricalEffect(np.zeros(len(m.levels)))
        else:
            model.main_effects[j] = make_subnetwork(1, config.subnet_layers, rng, config.activation)


@dataclass
class MainStage:
    """State after stage 1 (main effects trained, centered and pruned)."""

    model: GamiNetModel
    trace: TrainingTrace
    prune: PruneResult


def fit_main_effects(train: Dataset, val: Dataset, config: Optional[TrainConfig] = None) -> MainStage:
    config = (config or TrainConfig()).validate(train.n)
    if [m.to_dict() for m in train.meta] != [m.to_dict() for m in val.meta]:
        raise ConfigurationError("training and validation data must share feature metadata")
    if train.n < 2 or val.n < 1:
        raise ConfigurationError("need at least 2 training rows and 1 validation row")
    link = "logit" if train.task == "binary_classification" else "identity"
    model = GamiNetModel(list(train.meta), link, _initial_intercept(link, train.response),
                         dropped=list(train.dropped))
    trace = TrainingTrace()
    _init_main_effects(model, config)
    trace.stages.append(train_main_effects(model, train, val, config))
    ordered = _ordered_by_variance(model, sorted(model.main_effects), train.features)
    main_prune, keep = _prune_stage(model, ordered, val, config.tolerance_eta)
    for j in set(model.main_effects) - set(keep):
        del model.main_effects[j]
    log.info("stage 1 kept %d of %d main effects", len(keep), len(ordered))
    return MainStage(model, trace, main_prune)


def fit_interactions(stage: MainStage, train: Dataset, val: Dataset,
                     config: Optional[TrainConfig] = None) -> FitResult:
    """Stages 2 and 3 on a copy of ``stage``, which is left untouched.

    Stage 1 does not depend on the clarity weight, so one stage-1 result can
    be continued under several weights.
    """
    config = (config or TrainConfig()).validate(train.n)
    model = stage.model.copy()
    trace = TrainingTrace(list(stage.trace.stages))

    # screen on residuals, train top-K pairs with mains frozen, prune
    residuals = compute_residuals(model, train)
    candidates = rank_interactions(sorted(model.main_effects), residuals, train, config.max_interactions,
                                   config.heredity, config.screen_bins)
    stage1_intercept = model.intercept
    trace.stages.append(train_interactions(model, candidates, train, val, config))
    inter_prune = None
    if model.interactions:
        # new interaction nets start with zero offset, so the offset is exactly the centering shift;
        # l_0 is then the stage-1 model and l_i adds the uncentered top-i interactions
        shifts = {jk: net.output_offset for jk, net in model.interactions.items()}
        ordered = _ordered_by_variance(model, sorted(model.interactions), train.features)
        inter_prune, keep = _prune_stage(model, ordered, val, config.tolerance_eta, stage1_intercept, shifts)
        for jk in set(model.interactions) - set(keep):
            del model.interactions[jk]
        model.intercept = stage1_intercept + sum(shifts[jk] for jk in keep)
        log.info("stage 2 kept %d of %d interactions", len(keep), len(ordered))

    # joint fine-tuning of everything that survived
    trace.stages.append(fine_tune(model, train, val, config))
    model.variance = effect_variance(model, train.features)
    return FitResult(model, trace, stage.prune, inter_prune, candidates, config)


def fit(train: Dataset, val: Dataset, config: Optional[TrainConfig] = None) -> FitResult:
    config = config or TrainConfig()
    return fit_interactions(fit_main_effects(train, val, config), train, val, config)
