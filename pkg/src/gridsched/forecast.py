"""Deep ensemble random-vector functional-link (edRVFL) forecaster.

Each layer stacks random sigmoid enhancement features on top of the
previous layer's features and the raw input window (direct link), then fits
its own closed-form ridge readout. The per-layer outputs are combined with
a ranking-based dynamic fusion that rewards layers that were accurate on the
latest observation and layers that add diversity to the ensemble.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sigmoid": lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)),  # overflow-free logistic
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
}

_ERR_FLOOR = 1e-300


@dataclass(frozen=True)
class ForecastMetrics:
    rmse: float
    mae: float
    mase: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "mase": self.mase, "r_squared": self.r_squared}


def normalize(x, x_min: float, x_max: float):
    if not x_max > x_min:
        raise ValueError(f"degenerate normalization bounds ({x_min}, {x_max})")
    return (np.asarray(x, dtype=float) - x_min) / (x_max - x_min)


def denormalize(z, x_min: float, x_max: float):
    if not x_max > x_min:
        raise ValueError(f"degenerate normalization bounds ({x_min}, {x_max})")
    return np.asarray(z, dtype=float) * (x_max - x_min) + x_min


def sliding_windows(series: Sequence[float], window: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``window`` consecutive values and the value that follows each."""
    s = np.asarray(series, dtype=float)
    if s.size <= window:
        raise ValueError(f"series of length {s.size} too short for window {window}")
    X = np.lib.stride_tricks.sliding_window_view(s[:-1], window)
    return np.ascontiguousarray(X), s[window:].copy()


def ridge_solve(D: np.ndarray, Y: np.ndarray, reg: float, form: str = "auto") -> np.ndarray:
    """Ridge readout in primal or dual form; ``reg == 0`` falls back to pinv."""
    n, p = D.shape
    if reg == 0:
        return np.linalg.pinv(D) @ Y
    if form == "auto":
        form = "primal" if p <= n else "dual"
    if form == "primal":
        return np.linalg.solve(D.T @ D + reg * np.eye(p), D.T @ Y)
    if form == "dual":
        return D.T @ np.linalg.solve(D @ D.T + reg * np.eye(n), Y)
    raise ValueError(f"unknown ridge form {form!r}")


@dataclass
class EdRvflModel:
    hidden_weights: list[np.ndarray]
    output_weights: list[np.ndarray]
    n_hidden: int
    n_layers: int
    reg: float
    activation: str
    input_scaling: float
    window: int
    x_min: float
    x_max: float
    seed: int

    @property
    def g(self):
        return ACTIVATIONS[self.activation]

    def layer_features(self, Z: np.ndarray):
        """Yield the design matrix ``[H_l, Z]`` of every layer for normalized inputs."""
        H = None
        for B in self.hidden_weights:
            inp = Z if H is None else np.hstack([H, Z])
            H = self.g(inp @ B)
            yield np.hstack([H, Z])

    def to_dict(self) -> dict:
        return {
            "format": "edrvfl/1",
            "n_hidden": self.n_hidden, "n_layers": self.n_layers, "reg": self.reg,
            "activation": self.activation, "input_scaling": self.input_scaling,
            "window": self.window, "x_min": self.x_min, "x_max": self.x_max, "seed": self.seed,
            "hidden_weights": [B.tolist() for B in self.hidden_weights],
            "output_weights": [b.tolist() for b in self.output_weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EdRvflModel":
        if d.get("format") != "edrvfl/1":
            raise ValueError("not an edRVFL model document")
        return cls(
            hidden_weights=[np.asarray(B, float) for B in d["hidden_weights"]],
            output_weights=[np.asarray(b, float) for b in d["output_weights"]],
            **{k: d[k] for k in ("n_hidden", "n_layers", "reg", "activation", "input_scaling",
                                 "window", "x_min", "x_max", "seed")})


def train_edrvfl(X, Y, n_hidden: int = 150, n_layers: int = 10, reg: float = 0.5,
                 activation: str = "sigmoid", input_scaling: float = 0.5, seed: int = 0,
                 bounds: tuple[float, float] | None = None) -> EdRvflModel:
    """Fit an edRVFL on raw-valued windows ``X`` (N x m) and targets ``Y`` (N,).

    Inputs and targets share one min-max scale taken from the training data
    unless ``bounds`` is given. A constant training set maps to zero.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X must be (N, m) with N matching len(Y)")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if bounds is None:
        lo = float(min(X.min(), Y.min()))
        hi = float(max(X.max(), Y.max()))
    else:
        lo, hi = map(float, bounds)
    if not hi > lo:
        hi = lo + 1.0
    Z, Yn = normalize(X, lo, hi), normalize(Y, lo, hi)
    m = X.shape[1]
    rng = np.random.default_rng(seed)
    hidden = [input_scaling * rng.uniform(-1.0, 1.0, size=(m if l == 0 else m + n_hidden, n_hidden))
              for l in range(n_layers)]
    model = EdRvflModel(hidden, [], n_hidden, n_layers, reg, activation, input_scaling,
                        m, lo, hi, seed)
    model.output_weights = [ridge_solve(D, Yn, reg) for D in model.layer_features(Z)]
    return model


def predict_layers(model: EdRvflModel, x_window) -> np.ndarray:
    """Per-layer predictions; ``(L,)`` for one window or ``(N, L)`` for a batch."""
    x = np.asarray(x_window, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.window:
        raise ValueError(f"window length {X.shape[1]} != trained length {model.window}")
    Z = normalize(X, model.x_min, model.x_max)
    out = np.column_stack([D @ b for D, b in zip(model.layer_features(Z), model.output_weights)])
    out = denormalize(out, model.x_min, model.x_max)
    return out[0] if single else out


# ------------------------------------------------------------------ fusion

def _rank_desc(values: np.ndarray) -> np.ndarray:
    """Row-wise rank: L for the largest value down to 1, ties to the lower index."""
    L = values.shape[1]
    order = np.argsort(-values, axis=1, kind="stable")
    ranks = np.empty(values.shape, dtype=float)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(L, 0, -1, dtype=float), order.shape), axis=1)
    return ranks


def fusion_weights(layer_preds, latest_errors=None, alpha_trade: float = 0.6) -> np.ndarray:
    """Ranking-based combination weights.

    ``layer_preds`` holds the current per-layer predictions and
    ``latest_errors`` each layer's error on the most recent observation.
    Both may be ``(L,)`` or a batch ``(N, L)``. Without errors the weights are
    uniform.
    """
    P = np.atleast_2d(np.asarray(layer_preds, dtype=float))
    N, L = P.shape
    if latest_errors is None:
        w = np.full((N, L), 1.0 / L)
        return w[0] if np.ndim(layer_preds) == 1 else w
    err = np.atleast_2d(np.asarray(latest_errors, dtype=float))
    acc = 1.0 / np.maximum(err ** 2, _ERR_FLOOR)
    F = _rank_desc(acc)
    spread = np.abs(P[:, :, None] - P[:, None, :]).sum(axis=2)
    # the two median layers have equal spread in exact arithmetic; snap away
    # summation round-off so such ties go to the lower layer index
    scale = np.maximum(spread.max(axis=1, keepdims=True), _ERR_FLOOR)
    Dd = _rank_desc(np.round(spread / scale, 12))
    mid_rank = math.ceil(L / 2)
    mid = np.argmax(F == mid_rank, axis=1)
    f_mid = acc[np.arange(N), mid][:, None]
    Dp = _rank_desc(np.abs(acc - f_mid))
    d = (Dd + Dp) / (Dd + Dp).sum(axis=1, keepdims=True)
    D = _rank_desc(d)
    r = alpha_trade * F + (1.0 - alpha_trade) * D
    R = _rank_desc(r)
    w = R / (L * (L + 1) / 2)
    return w[0] if np.ndim(layer_preds) == 1 else w


def fuse_predictions(layer_preds, fusion_state: "FusionState | None" = None) -> float:
    """Weighted combination of one step's layer predictions."""
    state = fusion_state or FusionState()
    w = state.weights(layer_preds)
    return float(np.dot(w, layer_preds))


@dataclass
class FusionState:
    """Latest per-layer predictions and observation feeding the accuracy rank."""

    alpha_trade: float = 0.6
    prev_layer_preds: np.ndarray | None = None
    prev_actual: float | None = None

    def latest_errors(self):
        if self.prev_layer_preds is None or self.prev_actual is None:
            return None
        return self.prev_layer_preds - self.prev_actual

    def weights(self, layer_preds) -> np.ndarray:
        return fusion_weights(layer_preds, self.latest_errors(), self.alpha_trade)

    def observe(self, layer_preds, actual: float):
        self.prev_layer_preds = np.asarray(layer_preds, dtype=float).copy()
        self.prev_actual = float(actual)


# ----------------------------------------------------------------- metrics

def compute_metrics(actual, predicted, previous: float | None = None) -> ForecastMetrics:
    """RMSE, MAE, MASE and R^2.

    The MASE denominator is the MAE of naive persistence on the same targets.
    ``previous`` is the observation just before ``actual[0]``; without it the
    first target has no persistence forecast and the scale uses the rest.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.size == 0:
        raise ValueError("actual and predicted need equal nonzero length")
    if a.size < 2 and previous is None:
        raise ValueError("MASE needs at least two observations")
    e = a - p
    rmse = float(np.sqrt(np.mean(e ** 2)))
    mae = float(np.mean(np.abs(e)))
    naive_src = a if previous is None else np.concatenate([[previous], a])
    scale = float(np.mean(np.abs(np.diff(naive_src))))
    mase = mae / scale if scale > 0 else (0.0 if mae == 0 else math.inf)
    ss_res = float(np.sum(e ** 2))
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return ForecastMetrics(rmse, mae, mase, r2)


# -------------------------------------------------------------- forecaster

@dataclass
class EdRvflForecaster:
    """Train-once forecaster producing fused one-step and recursive forecasts."""

    window: int = 48
    n_hidden: int = 150
    n_layers: int = 10
    reg: float = 0.5
    activation: str = "sigmoid"
    input_scaling: float = 0.5
    alpha_trade: float = 0.6
    seed: int = 0
    nonnegative: bool = False
    model: EdRvflModel | None = field(default=None, repr=False)

    def fit(self, series: Sequence[float]) -> "EdRvflForecaster":
        X, Y = sliding_windows(series, self.window)
        self.model = train_edrvfl(X, Y, self.n_hidden, self.n_layers, self.reg,
                                  self.activation, self.input_scaling, self.seed)
        return self

    def _check(self):
        if self.model is None:
            raise RuntimeError("forecaster is not fitted")

    def _padded(self, series) -> np.ndarray:
        s = np.asarray(series, dtype=float)
        if s.size < self.window:
            raise ValueError("series shorter than the input window")
        return np.concatenate([s[:self.window], s])

    def one_step(self, series: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        """Fused prediction of every value of ``series`` from the values before it.

        The series is front-padded with its first ``window`` values so the
        first hours also get a history. Returns ``(fused, layer_preds)``.
        """
        self._check()
        padded = self._padded(series)
        X, _ = sliding_windows(padded, self.window)
        layers = predict_layers(self.model, X)
        errors = np.vstack([np.full(layers.shape[1], np.nan), layers[:-1] - np.asarray(series)[:-1, None]])
        w = fusion_weights(layers, np.nan_to_num(errors), self.alpha_trade)
        w[0] = 1.0 / layers.shape[1]
        fused = np.sum(w * layers, axis=1)
        if self.nonnegative:
            fused = np.maximum(fused, 0.0)
        return fused, layers

    def forecast_all(self, series: Sequence[float], horizon: int = 23) -> np.ndarray:
        """Recursive ``horizon``-step forecasts from every origin.

        Row ``t`` holds forecasts of ``series[t+1 .. t+horizon]`` using the
        values up to and including ``t``. Fusion at origin ``t`` ranks layer
        accuracy by the one-step errors made for time ``t``.
        """
        self._check()
        s = np.asarray(series, dtype=float)
        T = s.size
        padded = self._padded(s)
        # history window ending at t (inclusive) for each origin t
        hist = np.lib.stride_tricks.sliding_window_view(padded[1:], self.window).copy()
        _, one_step_layers = self.one_step(s)
        latest_err = one_step_layers - s[:, None]
        out = np.empty((T, horizon))
        win = hist
        for h in range(horizon):
            layers = predict_layers(self.model, win)
            w = fusion_weights(layers, latest_err, self.alpha_trade)
            pred = np.sum(w * layers, axis=1)
            if self.nonnegative:
                pred = np.maximum(pred, 0.0)
            out[:, h] = pred
            win = np.hstack([win[:, 1:], pred[:, None]])
        return out

    def evaluate(self, series: Sequence[float], start: int = 0) -> ForecastMetrics:
        s = np.asarray(series, dtype=float)
        fused, _ = self.one_step(s)
        return compute_metrics(s[start:], fused[start:], s[start - 1] if start > 0 else None)

    def to_dict(self) -> dict:
        self._check()
        return {"alpha_trade": self.alpha_trade, "nonnegative": self.nonnegative,
                "model": self.model.to_dict()}

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "EdRvflForecaster":
        d = json.loads(Path(path).read_text())
        m = EdRvflModel.from_dict(d["model"])
        return cls(window=m.window, n_hidden=m.n_hidden, n_layers=m.n_layers, reg=m.reg,
                   activation=m.activation, input_scaling=m.input_scaling,
                   alpha_trade=d["alpha_trade"], seed=m.seed, nonnegative=d["nonnegative"],
                   model=m)


def grid_sweep(series: Sequence[float], split: int, grid: dict[str, Sequence], **base) -> list[dict]:
    """Fit on ``series[:split]`` for every grid combination and score the rest.

    Returns records sorted by validation MASE (best first).
    """
    s = np.asarray(series, dtype=float)
    keys = sorted(grid)
    results = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(base, **dict(zip(keys, combo)))
        fc = EdRvflForecaster(**params).fit(s[:split])
        metrics = fc.evaluate(s, start=split)
        results.append({**dict(zip(keys, combo)), **metrics.to_dict()})
    return sorted(results, key=lambda r: r["mase"])
