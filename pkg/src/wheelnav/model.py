"""Compact displacement-error predictors built on plain numpy.

Four cell kinds share one contract: a 40-feature second of wheel speeds in,
one scalar error estimate out.  The recurrent kinds (srnn, gru, lstm) run a
single recurrent step per window and carry their small hidden state across
consecutive windows of a drive segment; gradients are truncated at window
boundaries, so each window backpropagates through exactly one step.  The
idnn kind is the stateless feed-forward baseline on the same flattened
window.  All arithmetic is float64 and fully seeded, so training is bitwise
reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from ._version import __version__
from .dataset import (
    FEATURE_DIM,
    NormalizerParams,
    TrainingWindow,
    apply_normalizer,
    fit_normalizer,
)
from .errors import DivergenceError, InvalidInputError, MissingNormalizerError


class CellKind(str, Enum):
    SRNN = "srnn"
    GRU = "gru"
    LSTM = "lstm"
    IDNN = "idnn"


_GATES = {CellKind.SRNN: 1, CellKind.GRU: 3, CellKind.LSTM: 4, CellKind.IDNN: 1}


@dataclass(frozen=True)
class ModelConfig:
    cell: CellKind
    input_dim: int = FEATURE_DIM
    hidden: int = 72
    output_dim: int = 1
    dropout_rate: float = 0.05
    seed: int = 0
    stateful: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cell", CellKind(self.cell))
        if self.hidden < 1 or self.input_dim < 1:
            raise InvalidInputError("hidden and input_dim must be >= 1")
        if self.output_dim != 1:
            raise InvalidInputError("only scalar output is supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0007
    batch_size: int = 128
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")


def param_count(cell: CellKind | str, input_dim: int = FEATURE_DIM, hidden: int = 72) -> int:
    """Trainable-parameter total: one hidden block plus a linear output head.

    idnn: H(I+1) + (H+1); srnn: H(I+H+1) + (H+1); gru and lstm multiply the
    recurrent block by their 3 and 4 gates (single bias per gate).
    """
    if input_dim < 1 or hidden < 1:
        raise InvalidInputError("dimensions must be >= 1")
    cell = CellKind(cell)
    if cell is CellKind.IDNN:
        block = hidden * (input_dim + 1)
    else:
        block = _GATES[cell] * hidden * (input_dim + hidden + 1)
    return block + hidden + 1


# ---------------------------------------------------------------------------
# weights and model container

_WEIGHT_ORDER = ("w_in", "w_rec", "b_h", "w_out", "b_out")


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_weights(config: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded Glorot-uniform weights, zero biases, in a fixed draw order."""
    rng = np.random.default_rng(config.seed)
    i_dim, h = config.input_dim, config.hidden
    gates = _GATES[config.cell]
    weights = {
        "w_in": np.vstack([_glorot(rng, (h, i_dim), i_dim, h) for _ in range(gates)])
    }
    if config.cell is not CellKind.IDNN:
        weights["w_rec"] = np.vstack(
            [_glorot(rng, (h, h), h, h) for _ in range(gates)]
        )
    weights["b_h"] = np.zeros(gates * h)
    weights["w_out"] = _glorot(rng, (h,), h, 1)
    weights["b_out"] = np.zeros(1)
    return weights


@dataclass
class NetworkModel:
    """Weights plus everything needed to run them on raw windows."""

    config: ModelConfig
    weights: dict[str, np.ndarray]
    normalizer: NormalizerParams | None = None
    calibration_r: float = float("nan")
    manifest: dict = field(default_factory=dict)

    def param_total(self) -> int:
        return int(sum(w.size for w in self.weights.values()))


def build_model(
    config: ModelConfig,
    normalizer: NormalizerParams | None = None,
    calibration_r: float = float("nan"),
) -> NetworkModel:
    model = NetworkModel(config, init_weights(config), normalizer, calibration_r)
    expected = param_count(config.cell, config.input_dim, config.hidden)
    if model.param_total() != expected:
        raise RuntimeError(
            f"allocated {model.param_total()} parameters, expected {expected}"
        )
    return model


def zero_state(config: ModelConfig):
    h = config.hidden
    if config.cell is CellKind.IDNN:
        return None
    if config.cell is CellKind.LSTM:
        return (np.zeros(h), np.zeros(h))
    return np.zeros(h)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# forward / backward


def forward(
    model: NetworkModel,
    x: np.ndarray,
    state=None,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run one normalized window through the network.

    Returns ``(prediction, new_state, cache)``.  Eval mode (the default) is a
    pure function of (weights, x, state).  Train mode applies inverted
    dropout to the hidden activations feeding the output head, drawn from the
    supplied generator; the state handed onward is the un-dropped activation.
    """
    cfg = model.config
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.input_dim,):
        raise InvalidInputError(f"expected {cfg.input_dim} features, got {x.shape}")
    if state is None:
        state = zero_state(cfg)
    w = model.weights
    h_n = cfg.hidden
    cell = cfg.cell

    if cell is CellKind.IDNN:
        h = np.tanh(w["w_in"] @ x + w["b_h"])
        new_state = None
        cache = {"x": x, "h": h}
    elif cell is CellKind.SRNN:
        h_prev = state
        h = np.tanh(w["w_in"] @ x + w["w_rec"] @ h_prev + w["b_h"])
        new_state = h
        cache = {"x": x, "h_prev": h_prev, "h": h}
    elif cell is CellKind.GRU:
        h_prev = state
        w_in, w_rec, b = w["w_in"], w["w_rec"], w["b_h"]
        zg = _sigmoid(w_in[:h_n] @ x + w_rec[:h_n] @ h_prev + b[:h_n])
        rg = _sigmoid(
            w_in[h_n : 2 * h_n] @ x + w_rec[h_n : 2 * h_n] @ h_prev + b[h_n : 2 * h_n]
        )
        rh = rg * h_prev
        cand = np.tanh(w_in[2 * h_n :] @ x + w_rec[2 * h_n :] @ rh + b[2 * h_n :])
        h = zg * h_prev + (1.0 - zg) * cand
        new_state = h
        cache = {"x": x, "h_prev": h_prev, "z": zg, "r": rg, "rh": rh, "c": cand, "h": h}
    elif cell is CellKind.LSTM:
        h_prev, c_prev = state
        w_in, w_rec, b = w["w_in"], w["w_rec"], w["b_h"]
        ig = _sigmoid(w_in[:h_n] @ x + w_rec[:h_n] @ h_prev + b[:h_n])
        fg = _sigmoid(
            w_in[h_n : 2 * h_n] @ x + w_rec[h_n : 2 * h_n] @ h_prev + b[h_n : 2 * h_n]
        )
        gg = np.tanh(
            w_in[2 * h_n : 3 * h_n] @ x
            + w_rec[2 * h_n : 3 * h_n] @ h_prev
            + b[2 * h_n : 3 * h_n]
        )
        og = _sigmoid(w_in[3 * h_n :] @ x + w_rec[3 * h_n :] @ h_prev + b[3 * h_n :])
        c = fg * c_prev + ig * gg
        tc = np.tanh(c)
        h = og * tc
        new_state = (h, c)
        cache = {
            "x": x,
            "h_prev": h_prev,
            "c_prev": c_prev,
            "i": ig,
            "f": fg,
            "g": gg,
            "o": og,
            "tc": tc,
            "h": h,
        }
    else:  # pragma: no cover
        raise InvalidInputError(f"unknown cell kind {cell}")

    if train and cfg.dropout_rate > 0.0:
        if rng is None:
            raise InvalidInputError("train-mode forward needs a random generator")
        keep = 1.0 - cfg.dropout_rate
        mask = (rng.random(h_n) < keep).astype(float) / keep
        hd = h * mask
    else:
        mask = None
        hd = h
    cache["mask"] = mask
    cache["hd"] = hd
    pred = float(w["w_out"] @ hd + w["b_out"][0])
    return pred, new_state, cache


def mae_loss(pred: Sequence[float], target: Sequence[float]) -> float:
    """Mean absolute error."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise InvalidInputError("loss of an empty batch is undefined")
    return float(np.mean(np.abs(p - t)))


def backward(
    model: NetworkModel, caches: Sequence[dict], dpreds: Sequence[float]
) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients over a batch of cached forward passes.

    The state entering each window is a constant (single-step truncation), so
    nothing flows between windows.  ``dpreds`` holds dLoss/dprediction per
    window; the MAE subgradient at zero residual is zero by convention.
    """
    cfg = model.config
    w = model.weights
    h_n = cfg.hidden
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    for cache, dp in zip(caches, dpreds):
        if dp == 0.0:
            continue
        grads["b_out"][0] += dp
        grads["w_out"] += dp * cache["hd"]
        dhd = dp * w["w_out"]
        dh = dhd if cache["mask"] is None else dhd * cache["mask"]
        if cfg.cell in (CellKind.IDNN, CellKind.SRNN):
            dz = dh * (1.0 - cache["h"] ** 2)
            grads["w_in"] += np.outer(dz, cache["x"])
            if cfg.cell is CellKind.SRNN:
                grads["w_rec"] += np.outer(dz, cache["h_prev"])
            grads["b_h"] += dz
        elif cfg.cell is CellKind.GRU:
            h_prev, zg, rg, cand = cache["h_prev"], cache["z"], cache["r"], cache["c"]
            dz = dh * (h_prev - cand)
            dcand = dh * (1.0 - zg)
            dc_raw = dcand * (1.0 - cand**2)
            dz_raw = dz * zg * (1.0 - zg)
            drh = w["w_rec"][2 * h_n :].T @ dc_raw
            dr_raw = drh * h_prev * rg * (1.0 - rg)
            x = cache["x"]
            grads["w_in"][:h_n] += np.outer(dz_raw, x)
            grads["w_in"][h_n : 2 * h_n] += np.outer(dr_raw, x)
            grads["w_in"][2 * h_n :] += np.outer(dc_raw, x)
            grads["w_rec"][:h_n] += np.outer(dz_raw, h_prev)
            grads["w_rec"][h_n : 2 * h_n] += np.outer(dr_raw, h_prev)
            grads["w_rec"][2 * h_n :] += np.outer(dc_raw, cache["rh"])
            grads["b_h"][:h_n] += dz_raw
            grads["b_h"][h_n : 2 * h_n] += dr_raw
            grads["b_h"][2 * h_n :] += dc_raw
        else:  # LSTM
            h_prev, c_prev = cache["h_prev"], cache["c_prev"]
            ig, fg, gg, og, tc = (
                cache["i"],
                cache["f"],
                cache["g"],
                cache["o"],
                cache["tc"],
            )
            do_raw = dh * tc * og * (1.0 - og)
            dc = dh * og * (1.0 - tc**2)
            di_raw = dc * gg * ig * (1.0 - ig)
            df_raw = dc * c_prev * fg * (1.0 - fg)
            dg_raw = dc * ig * (1.0 - gg**2)
            x = cache["x"]
            for sl, dr in (
                (slice(0, h_n), di_raw),
                (slice(h_n, 2 * h_n), df_raw),
                (slice(2 * h_n, 3 * h_n), dg_raw),
                (slice(3 * h_n, 4 * h_n), do_raw),
            ):
                grads["w_in"][sl] += np.outer(dr, x)
                grads["w_rec"][sl] += np.outer(dr, h_prev)
                grads["b_h"][sl] += dr
    return grads


# ---------------------------------------------------------------------------
# adamax optimisation


@dataclass
class AdamaxState:
    m: dict[str, np.ndarray]
    u: dict[str, np.ndarray]
    t: int = 0


def init_adamax(weights: dict[str, np.ndarray]) -> AdamaxState:
    return AdamaxState(
        m={k: np.zeros_like(v) for k, v in weights.items()},
        u={k: np.zeros_like(v) for k, v in weights.items()},
    )


def adamax_step(
    weights: dict[str, np.ndarray],
    state: AdamaxState,
    grads: dict[str, np.ndarray],
    tc: TrainConfig,
) -> dict[str, np.ndarray]:
    """One infinity-norm adam update, in place.

    m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
    w <- w - lr/(1 - b1^t) * m / (u + eps).
    """
    state.t += 1
    correction = 1.0 - tc.beta1**state.t
    for name in _WEIGHT_ORDER:
        if name not in weights:
            continue
        g = grads[name]
        m = state.m[name]
        u = state.u[name]
        m *= tc.beta1
        m += (1.0 - tc.beta1) * g
        np.maximum(tc.beta2 * u, np.abs(g), out=u)
        weights[name] -= (tc.learning_rate / correction) * m / (u + tc.eps)
    return weights


# ---------------------------------------------------------------------------
# training and prediction


def _as_segments(
    windows: Sequence[TrainingWindow] | Sequence[Sequence[TrainingWindow]],
) -> list[list[TrainingWindow]]:
    if not windows:
        return []
    if isinstance(windows[0], TrainingWindow):
        return [list(windows)]
    return [list(seg) for seg in windows]


def data_fingerprint(windows: Sequence[TrainingWindow]) -> str:
    digest = hashlib.sha256()
    for w in windows:
        digest.update(np.ascontiguousarray(w.x, dtype=float).tobytes())
        digest.update(np.float64(w.y).tobytes())
    return digest.hexdigest()


def train(
    windows: Sequence[TrainingWindow] | Sequence[Sequence[TrainingWindow]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    calibration_r: float = float("nan"),
) -> tuple[NetworkModel, list[float]]:
    """Fit an error predictor on labelled windows.

    ``windows`` is either a flat window list (one segment) or a list of
    per-segment lists; the recurrent state resets at segment boundaries and
    at every epoch start.  Batches are built from consecutive windows within
    a segment, so the whole procedure is deterministic for a given pair of
    seeds.  Feature normalisation is fitted here, on these windows only.

    Returns the trained model and the per-epoch mean-absolute-error trace.
    """
    segments = _as_segments(windows)
    flat = [w for seg in segments for w in seg]
    if not flat:
        raise InvalidInputError("training needs at least one window")
    normalizer = fit_normalizer(flat)
    model = build_model(model_config, normalizer, calibration_r)
    xs_by_seg = [
        np.stack([apply_normalizer(normalizer, w.x) for w in seg]) for seg in segments
    ]
    ys_by_seg = [np.array([w.y for w in seg]) for seg in segments]

    opt = init_adamax(model.weights)
    drop_rng = np.random.default_rng(train_config.seed)
    trace: list[float] = []
    for epoch in range(train_config.epochs):
        abs_err = 0.0
        count = 0
        for xs, ys in zip(xs_by_seg, ys_by_seg):
            state = zero_state(model_config)
            for lo in range(0, len(xs), train_config.batch_size):
                hi = min(lo + train_config.batch_size, len(xs))
                preds = np.empty(hi - lo)
                caches = []
                for i in range(lo, hi):
                    if not model_config.stateful:
                        state = zero_state(model_config)
                    pred, state, cache = forward(
                        model, xs[i], state, train=True, rng=drop_rng
                    )
                    preds[i - lo] = pred
                    caches.append(cache)
                residual = preds - ys[lo:hi]
                if not np.all(np.isfinite(residual)):
                    raise DivergenceError(epoch)
                abs_err += float(np.sum(np.abs(residual)))
                count += residual.size
                dpreds = np.sign(residual) / residual.size
                grads = backward(model, caches, dpreds)
                adamax_step(model.weights, opt, grads, train_config)
        trace.append(abs_err / count)
    model.manifest = {
        "model_seed": model_config.seed,
        "train_seed": train_config.seed,
        "epochs": train_config.epochs,
        "batch_size": train_config.batch_size,
        "learning_rate": train_config.learning_rate,
        "n_windows": len(flat),
        "n_segments": len(segments),
        "weight_init": "glorot-uniform, zero biases",
        "data_fingerprint": data_fingerprint(flat),
        "library_version": __version__,
    }
    return model, trace


def _window_features(window: TrainingWindow | np.ndarray) -> np.ndarray:
    if isinstance(window, TrainingWindow):
        return window.x
    return np.asarray(window, dtype=float)


def predict_error(model: NetworkModel, window: TrainingWindow | np.ndarray) -> float:
    """Error estimate (m) for one raw window, from a fresh zero state.

    Pure and repeatable; use :func:`predict_sequence` to thread the recurrent
    state through consecutive windows of a segment.
    """
    if model.normalizer is None:
        raise MissingNormalizerError("model carries no fitted normalizer")
    x = apply_normalizer(model.normalizer, _window_features(window))
    pred, _, _ = forward(model, x)
    return pred


def predict_sequence(
    model: NetworkModel, windows: Sequence[TrainingWindow]
) -> np.ndarray:
    """Error estimates for consecutive windows of one segment.

    The recurrent state is carried across windows when the model is stateful
    (reset only at the start, i.e. the segment boundary) and re-zeroed every
    window otherwise.
    """
    if model.normalizer is None:
        raise MissingNormalizerError("model carries no fitted normalizer")
    state = zero_state(model.config)
    out = np.empty(len(windows))
    for i, window in enumerate(windows):
        if not model.config.stateful:
            state = zero_state(model.config)
        x = apply_normalizer(model.normalizer, _window_features(window))
        pred, state, _ = forward(model, x, state)
        out[i] = pred
    return out


# ---------------------------------------------------------------------------
# model file round trip

MODEL_FORMAT = "wheelnav-model"
MODEL_FORMAT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "dtype": "float64",
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(spec: dict) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(spec["shape"]).copy()


def save_model(model: NetworkModel, path: str | Path) -> None:
    """Write a model to its versioned JSON container (lossless round trip)."""
    cfg = model.config
    doc = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "config": {
            "cell": cfg.cell.value,
            "input_dim": cfg.input_dim,
            "hidden": cfg.hidden,
            "output_dim": cfg.output_dim,
            "dropout_rate": cfg.dropout_rate,
            "seed": cfg.seed,
            "stateful": cfg.stateful,
        },
        "weights": {k: _encode_array(v) for k, v in model.weights.items()},
        "normalizer": None
        if model.normalizer is None
        else {
            "lo": _encode_array(model.normalizer.lo),
            "hi": _encode_array(model.normalizer.hi),
        },
        "calibration_r": model.calibration_r,
        "manifest": model.manifest,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> NetworkModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise InvalidInputError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise InvalidInputError(
            f"unsupported model format version {doc.get('format_version')}"
        )
    cfg = ModelConfig(**doc["config"])
    weights = {k: _decode_array(v) for k, v in doc["weights"].items()}
    norm = doc["normalizer"]
    normalizer = (
        None
        if norm is None
        else NormalizerParams(lo=_decode_array(norm["lo"]), hi=_decode_array(norm["hi"]))
    )
    return NetworkModel(
        config=cfg,
        weights=weights,
        normalizer=normalizer,
        calibration_r=doc["calibration_r"],
        manifest=doc["manifest"],
    )
