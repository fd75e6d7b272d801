"""The additive model: intercept + main effects + pairwise interactions, through a link."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import FeatureMeta, IngestionError
from .nn_core import DenseLayer, ShapeError, Subnetwork, subnet_forward

LINKS = ("identity", "logit")
FORMAT_NAME = "gaminet-model"
FORMAT_VERSION = 1
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass
class CategoricalEffect:
    """Main effect of a categorical feature: one bias per level."""

    level_biases: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.level_biases = np.asarray(self.level_biases, dtype=np.float64)

    def evaluate(self, codes) -> np.ndarray:
        idx = np.asarray(codes).astype(int)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.level_biases)):
            raise IngestionError("categorical code outside the known levels")
        return self.level_biases[idx] - self.offset

    def copy(self) -> "CategoricalEffect":
        return CategoricalEffect(self.level_biases.copy(), float(self.offset))


Effect = Union[Subnetwork, CategoricalEffect]
Pair = Tuple[int, int]


@dataclass
class EffectVarianceTable:
    values: Dict[str, float]
    total: float

    @classmethod
    def from_values(cls, values: Dict[str, float]) -> "EffectVarianceTable":
        return cls(dict(values), float(sum(values.values())))


@dataclass
class GamiNetModel:
    meta: List[FeatureMeta]
    link: str = "identity"
    intercept: float = 0.0
    main_effects: Dict[int, Effect] = field(default_factory=dict)
    interactions: Dict[Pair, Subnetwork] = field(default_factory=dict)
    variance: Optional[EffectVarianceTable] = None
    dropped: List[FeatureMeta] = field(default_factory=list)

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}; valid links are {LINKS}")
        for j, k in self.interactions:
            if not j < k:
                raise ValueError(f"interaction key {(j, k)} must satisfy j < k")

    @property
    def p(self) -> int:
        return len(self.meta)

    def effect_keys(self) -> List[Union[int, Pair]]:
        """Main effects by feature index, then interactions lexicographically."""
        return sorted(self.main_effects) + sorted(self.interactions)

    def effect_id(self, key) -> str:
        if isinstance(key, tuple):
            return f"{self.meta[key[0]].name}:{self.meta[key[1]].name}"
        return self.meta[key].name

    def effect(self, key) -> Effect:
        return self.interactions[key] if isinstance(key, tuple) else self.main_effects[key]

    def copy(self) -> "GamiNetModel":
        return GamiNetModel(
            list(self.meta), self.link, float(self.intercept),
            {j: e.copy() for j, e in self.main_effects.items()},
            {jk: e.copy() for jk, e in self.interactions.items()},
            None if self.variance is None else EffectVarianceTable(dict(self.variance.values), self.variance.total),
            list(self.dropped))


def one_hot(codes, width: int) -> np.ndarray:
    idx = np.asarray(codes).astype(int)
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise IngestionError("categorical code outside the known levels")
    out = np.zeros((idx.shape[0], width))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def encode_inputs(meta: Sequence[FeatureMeta], x: np.ndarray, features: Sequence[int]) -> np.ndarray:
    """Network input for the given feature indices: scaled numericals, one-hot categoricals."""
    parts = []
    for j in features:
        col = x[:, j]
        parts.append(one_hot(col, len(meta[j].levels)) if meta[j].kind == "categorical" else col[:, None])
    return np.hstack(parts)


def evaluate_effect(model: GamiNetModel, key, x: np.ndarray) -> np.ndarray:
    eff = model.effect(key)
    if isinstance(eff, CategoricalEffect):
        return eff.evaluate(x[:, key])
    feats = list(key) if isinstance(key, tuple) else [key]
    out, _ = subnet_forward(eff, encode_inputs(model.meta, x, feats))
    return out


def _check_inputs(model: GamiNetModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.p:
        raise ShapeError(f"model expects {model.p} features, got input of shape {x.shape}")
    return x


def predict(model: GamiNetModel, x):
    """Linear predictor and per-effect contributions (columns in ``effect_keys`` order)."""
    x = _check_inputs(model, x)
    keys = model.effect_keys()
    contrib = np.zeros((x.shape[0], len(keys)))
    for c, key in enumerate(keys):
        contrib[:, c] = evaluate_effect(model, key, x)
    eta = model.intercept + contrib.sum(axis=1)
    return eta, contrib


def invert_link(link: str, eta):
    eta = np.asarray(eta, dtype=np.float64)
    if link == "identity":
        return eta
    # split by sign so exp never overflows
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    # for eta above ~37 the sigmoid rounds to 1.0; keep the mean strictly inside (0, 1)
    np.minimum(out, _BELOW_ONE, out=out)
    return out


def apply_link(link: str, mu):
    mu = np.asarray(mu, dtype=np.float64)
    if link == "identity":
        return mu
    return np.log(mu) - np.log1p(-mu)


def predict_mean(model: GamiNetModel, x) -> np.ndarray:
    eta, _ = predict(model, x)
    return invert_link(model.link, eta)


def loss(link: str, y, eta) -> float:
    """Mean squared error (identity link) or mean log-loss (logit link)."""
    y = np.asarray(y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if link == "identity":
        r = y - eta
        return float(np.mean(r * r))
    # log(1 + e^eta) - y*eta, evaluated without overflow
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def loss_grad(link: str, y, eta) -> np.ndarray:
    """d(mean loss)/d(eta) per row."""
    n = len(y)
    if link == "identity":
        return -2.0 * (y - eta) / n
    return (invert_link(link, eta) - y) / n


def center_effects(model: GamiNetModel, x, keys=None) -> GamiNetModel:
    """Shift each effect to zero training mean, moving the shift into the intercept.

    Operates in place and returns ``model``.
    """
    x = _check_inputs(model, x)
    for key in (model.effect_keys() if keys is None else keys):
        m = float(np.mean(evaluate_effect(model, key, x)))
        eff = model.effect(key)
        if isinstance(eff, CategoricalEffect):
            eff.offset += m
        else:
            eff.output_offset += m
        model.intercept += m
    return model


def effect_variance(model: GamiNetModel, x) -> EffectVarianceTable:
    x = _check_inputs(model, x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("effect variance needs at least 2 rows")
    values = {}
    for key in model.effect_keys():
        v = evaluate_effect(model, key, x)
        values[model.effect_id(key)] = float(np.dot(v, v) / (n - 1))
    return EffectVarianceTable.from_values(values)


def clarity_pairs(main_keys, pair_keys) -> List[Tuple[int, Pair]]:
    """(parent, interaction) combinations penalized for marginal clarity."""
    mains = set(main_keys)
    return [(j, jk) for jk in sorted(pair_keys) for j in jk if j in mains]


def clarity_loss(model: GamiNetModel, x):
    """Per (parent, interaction) |mean(h * f)| and their total."""
    x = _check_inputs(model, x)
    cache = {}

    def values(key):
        if key not in cache:
            cache[key] = evaluate_effect(model, key, x)
        return cache[key]

    per = {}
    for j, jk in clarity_pairs(model.main_effects, model.interactions):
        per[(j, jk)] = abs(float(np.mean(values(j) * values(jk))))
    return per, float(sum(per.values()))


# -- serialization -----------------------------------------------------------

def _net_to_dict(net: Subnetwork) -> dict:
    return {
        "type": "network",
        "input_arity": net.input_arity,
        "output_offset": net.output_offset,
        "layers": [{"activation": l.activation, "weights": l.weights.tolist(), "biases": l.biases.tolist()}
                   for l in net.layers],
    }


def _effect_to_dict(eff: Effect) -> dict:
    if isinstance(eff, CategoricalEffect):
        return {"type": "categorical", "level_biases": eff.level_biases.tolist(), "offset": eff.offset}
    return _net_to_dict(eff)


def _effect_from_dict(d: dict) -> Effect:
    if d["type"] == "categorical":
        return CategoricalEffect(np.asarray(d["level_biases"], dtype=np.float64), float(d["offset"]))
    layers = [DenseLayer(np.asarray(l["weights"], dtype=np.float64).reshape(len(l["biases"]), -1),
                         np.asarray(l["biases"], dtype=np.float64), l["activation"]) for l in d["layers"]]
    net = Subnetwork(layers, int(d["input_arity"]), float(d["output_offset"]))
    net.check()
    return net


def to_dict(model: GamiNetModel) -> dict:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "link": model.link,
        "intercept": model.intercept,
        "features": [m.to_dict() for m in model.meta],
        "dropped_features": [m.to_dict() for m in model.dropped],
        "main_effects": [dict(feature=j, **_effect_to_dict(model.main_effects[j]))
                         for j in sorted(model.main_effects)],
        "interactions": [dict(pair=[j, k], **_effect_to_dict(model.interactions[(j, k)]))
                         for j, k in sorted(model.interactions)],
    }
    if model.variance is not None:
        doc["effect_variance"] = {"effects": dict(model.variance.values), "total": model.variance.total}
    return doc


def from_dict(doc: dict) -> GamiNetModel:
    if doc.get("format") != FORMAT_NAME:
        raise ValueError("not a gaminet model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')}")
    variance = None
    if "effect_variance" in doc:
        ev = doc["effect_variance"]
        variance = EffectVarianceTable({k: float(v) for k, v in ev["effects"].items()}, float(ev["total"]))
    return GamiNetModel(
        meta=[FeatureMeta.from_dict(m) for m in doc["features"]],
        link=doc["link"],
        intercept=float(doc["intercept"]),
        main_effects={int(e["feature"]): _effect_from_dict(e) for e in doc["main_effects"]},
        interactions={(int(e["pair"][0]), int(e["pair"][1])): _effect_from_dict(e) for e in doc["interactions"]},
        variance=variance,
        dropped=[FeatureMeta.from_dict(m) for m in doc.get("dropped_features", [])],
    )


def dumps(model: GamiNetModel) -> str:
    return json.dumps(to_dict(model), indent=1, sort_keys=False) + "\n"


def save(model: GamiNetModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model))


def load(path) -> GamiNetModel:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
