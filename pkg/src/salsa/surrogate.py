"""Per-item score-distribution models.

Three predictors share one output shape (a mean and a std per item):

* :class:`MveRegressor` - feed-forward network trained with a Gaussian
  negative log-likelihood (mean-variance estimation), or with MSE plus
  Monte-Carlo dropout when ``uncertainty="dropout"``.
* :class:`TabularGaussianModel` - independent conjugate-normal posterior per
  item with known observation variance.
* :class:`SynthonSurrogate` - wraps regressors either as one model per
  vector or one shared model with a vector one-hot appended to features.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from salsa._rng import substream

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class SurrogateError(RuntimeError):
    pass


class GaussianPrediction(NamedTuple):
    mean: float
    std: float


class Predictions(NamedTuple):
    """Per-item Gaussian predictions for one pool, as parallel arrays."""

    mean: np.ndarray
    std: np.ndarray

    def __len__(self):
        return len(self.mean)

    def at(self, i: int) -> GaussianPrediction:
        return GaussianPrediction(float(self.mean[i]), float(self.std[i]))


def mve_loss(y, mean, std, reduce: bool = True):
    """Gaussian negative log-likelihood: log(2 pi)/2 + log std + ((y - mean)/std)^2 / 2."""
    y, mean, std = (np.asarray(a, dtype=np.float64) for a in (y, mean, std))
    if np.any(std <= 0):
        raise ValueError("std must be strictly positive")
    z = (y - mean) / std
    loss = HALF_LOG_2PI + np.log(std) + 0.5 * z * z
    return float(loss.mean()) if reduce else loss


def attach_vector_onehot(features: np.ndarray, vector_index: int, n_vectors: int) -> np.ndarray:
    if not 0 <= vector_index < n_vectors:
        raise ValueError(f"vector_index {vector_index} out of range for {n_vectors} vectors")
    features = np.asarray(features, dtype=np.float64)
    squeeze = features.ndim == 1
    features = np.atleast_2d(features)
    onehot = np.zeros((len(features), n_vectors))
    onehot[:, vector_index] = 1.0
    out = np.hstack([features, onehot])
    return out[0] if squeeze else out


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MveRegressorConfig:
    hidden_width: int = 300
    hidden_layers: int = 2
    max_epochs: int = 50
    batch_size: int = 64
    holdout: float = 0.2
    patience: int = 10
    lr_init: float = 1e-4
    lr_max: float = 1e-3
    lr_final: float = 1e-4
    warmup_epochs: float = 1.0
    weight_decay: float = 0.0
    var_floor: float = 1e-6
    uncertainty: str = "mve"  # mve | dropout
    dropout: float = 0.2
    dropout_samples: int = 10
    standardize_targets: bool = True
    predict_chunk: int = 8192

    def __post_init__(self):
        if not 0.0 < self.holdout < 1.0:
            raise ValueError("holdout must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.uncertainty not in ("mve", "dropout"):
            raise ValueError(f"unknown uncertainty mode {self.uncertainty!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.var_floor <= 0:
            raise ValueError("var_floor must be > 0")


@dataclass
class TrainingReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    n_train: int = 0
    n_val: int = 0


class MveRegressor:
    """Fully connected ReLU network with a (mean, variance) output head."""

    def __init__(self, config: MveRegressorConfig | None = None, seed: int = 0):
        self.config = config or MveRegressorConfig()
        self.seed = seed
        self.params: list[np.ndarray] | None = None
        self.y_shift = 0.0
        self.y_scale = 1.0
        self.forward_passes = 0

    @property
    def n_outputs(self) -> int:
        return 2 if self.config.uncertainty == "mve" else 1

    @property
    def trained(self) -> bool:
        return self.params is not None

    def init_params(self, n_features: int, rng: np.random.Generator) -> list[np.ndarray]:
        cfg = self.config
        widths = [n_features] + [cfg.hidden_width] * cfg.hidden_layers + [self.n_outputs]
        params = []
        for fan_in, fan_out in zip(widths[:-2], widths[1:-1]):
            params.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
            params.append(np.zeros(fan_out))
        # zero output layer: training starts from the target mean
        params.append(np.zeros((widths[-2], widths[-1])))
        params.append(np.zeros(widths[-1]))
        return params

    def _forward(self, params, X, drop_rng=None):
        """Returns output and the per-layer cache needed for backprop."""
        p = self.config.dropout
        acts, masks = [X], []
        h = X
        n_layers = len(params) // 2
        for layer in range(n_layers - 1):
            h = np.maximum(h @ params[2 * layer] + params[2 * layer + 1], 0.0)
            if drop_rng is not None and p > 0:
                mask = (drop_rng.random(h.shape) >= p) / (1.0 - p)
                h = h * mask
            else:
                mask = None
            masks.append(mask)
            acts.append(h)
        out = h @ params[-2] + params[-1]
        return out, (acts, masks)

    def _backward(self, params, cache, grad_out):
        acts, masks = cache
        grads = [None] * len(params)
        g = grad_out
        n_layers = len(params) // 2
        for layer in range(n_layers - 1, -1, -1):
            a_in = acts[layer]
            grads[2 * layer] = a_in.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer > 0:
                g = g @ params[2 * layer].T
                if masks[layer - 1] is not None:
                    g = g * masks[layer - 1]
                g = g * (acts[layer] > 0)
        return grads

    def _head(self, out):
        mean = out[:, 0]
        if self.n_outputs == 1:
            return mean, None
        var = _softplus(out[:, 1]) + self.config.var_floor
        return mean, var

    def loss_and_grad(self, X, y, params=None, drop_rng=None):
        """Batch-mean loss and gradient for every parameter array (targets in model units)."""
        params = self.params if params is None else params
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out, cache = self._forward(params, X, drop_rng)
        n = len(y)
        mean, var = self._head(out)
        resid = mean - y
        grad_out = np.zeros_like(out)
        if var is None:
            loss = float(np.mean(resid**2))
            grad_out[:, 0] = 2.0 * resid / n
        else:
            loss = float(np.mean(HALF_LOG_2PI + 0.5 * np.log(var) + 0.5 * resid**2 / var))
            grad_out[:, 0] = resid / var / n
            dvar = 0.5 / var - 0.5 * resid**2 / var**2
            grad_out[:, 1] = dvar * _sigmoid(out[:, 1]) / n
        grads = self._backward(params, cache, grad_out)
        return loss, grads

    def _eval_loss(self, X, y, params):
        if len(y) == 0:
            return float("nan")
        out, _ = self._forward(params, X)
        mean, var = self._head(out)
        if var is None:
            return float(np.mean((mean - y) ** 2))
        return float(np.mean(HALF_LOG_2PI + 0.5 * np.log(var) + 0.5 * (y - mean) ** 2 / var))

    def learning_rate(self, step: int, steps_per_epoch: int) -> float:
        cfg = self.config
        warm = max(1, int(round(cfg.warmup_epochs * steps_per_epoch)))
        total = max(warm + 1, cfg.max_epochs * steps_per_epoch)
        if step < warm:
            return cfg.lr_init + (cfg.lr_max - cfg.lr_init) * step / warm
        frac = (step - warm) / (total - warm)
        return cfg.lr_max * (cfg.lr_final / cfg.lr_max) ** min(frac, 1.0)

    def fit(self, X, y, seed: int | None = None) -> TrainingReport:
        """Train from scratch with holdout early stopping; keeps the best-validation weights."""
        cfg = self.config
        seed = self.seed if seed is None else seed
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        n_val = int(round(cfg.holdout * n))
        n_val = min(max(n_val, 1), n - 2) if n >= 3 else 0
        if n < 3 or n - n_val < 2:
            raise SurrogateError(f"need at least 2 training points after holdout split, have {n} total")

        perm = substream(seed, "holdout").permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        if cfg.standardize_targets:
            self.y_shift = float(y[train_idx].mean())
            spread = float(y[train_idx].std())
            self.y_scale = spread if spread > 1e-12 else 1.0
        else:
            self.y_shift, self.y_scale = 0.0, 1.0
        ys = (y - self.y_shift) / self.y_scale
        Xtr, ytr, Xva, yva = X[train_idx], ys[train_idx], X[val_idx], ys[val_idx]

        init_rng = substream(seed, "init")
        shuffle_rng = substream(seed, "shuffle")
        drop_rng = substream(seed, "dropout-train") if cfg.uncertainty == "dropout" else None
        params = self.init_params(X.shape[1], init_rng)
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8

        steps_per_epoch = math.ceil(len(ytr) / cfg.batch_size)
        report = TrainingReport(n_train=len(ytr), n_val=len(yva))
        best_val, best_params, since_best = math.inf, [p.copy() for p in params], 0
        step = 0
        for epoch in range(1, cfg.max_epochs + 1):
            order = shuffle_rng.permutation(len(ytr))
            for start in range(0, len(ytr), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                _, grads = self.loss_and_grad(Xtr[batch], ytr[batch], params, drop_rng)
                lr = self.learning_rate(step, steps_per_epoch)
                step += 1
                for i, g in enumerate(grads):
                    if cfg.weight_decay and i % 2 == 0:
                        g = g + cfg.weight_decay * params[i]
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    mhat = m[i] / (1 - beta1**step)
                    vhat = v[i] / (1 - beta2**step)
                    params[i] -= lr * mhat / (np.sqrt(vhat) + eps)
            report.train_loss.append(self._eval_loss(Xtr, ytr, params))
            val = self._eval_loss(Xva, yva, params)
            report.val_loss.append(val)
            report.stopped_epoch = epoch
            if val < best_val:
                best_val, best_params, since_best = val, [p.copy() for p in params], 0
                report.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
        self.params = best_params
        return report

    def predict(self, X, rng: np.random.Generator | None = None) -> Predictions:
        """Mean and std in target units.

        In dropout mode ``dropout_samples`` stochastic passes are drawn and the
        sample mean and std (ddof=1) of those passes are returned.
        """
        if self.params is None:
            raise SurrogateError("model has not been trained")
        cfg = self.config
        X = np.asarray(X, dtype=np.float64)
        means, stds = [], []
        floor = math.sqrt(cfg.var_floor)
        for start in range(0, len(X), cfg.predict_chunk):
            chunk = X[start : start + cfg.predict_chunk]
            if cfg.uncertainty == "mve":
                out, _ = self._forward(self.params, chunk)
                mean, var = self._head(out)
                means.append(mean * self.y_scale + self.y_shift)
                stds.append(np.sqrt(var) * self.y_scale)
                self.forward_passes += len(chunk)
            else:
                if rng is None:
                    rng = substream(self.seed, "dropout-predict")
                passes = self.dropout_passes(chunk, rng)
                means.append(passes.mean(axis=0))
                stds.append(np.maximum(passes.std(axis=0, ddof=1) if len(passes) > 1 else 0.0, floor))
        if not means:
            return Predictions(np.zeros(0), np.zeros(0))
        return Predictions(np.concatenate(means), np.concatenate(stds))

    def dropout_passes(self, X, rng: np.random.Generator) -> np.ndarray:
        """``(dropout_samples, n)`` stochastic forward passes, in target units."""
        rows = []
        for _ in range(self.config.dropout_samples):
            out, _ = self._forward(self.params, X, drop_rng=rng)
            rows.append(out[:, 0] * self.y_scale + self.y_shift)
            self.forward_passes += len(X)
        return np.array(rows)

    def state(self) -> dict[str, np.ndarray]:
        if self.params is None:
            raise SurrogateError("model has not been trained")
        out = {f"p{i}": p for i, p in enumerate(self.params)}
        out["y_shift"] = np.array(self.y_shift)
        out["y_scale"] = np.array(self.y_scale)
        return out

    def load_state(self, state) -> None:
        n = len([k for k in state if k.startswith("p")])
        self.params = [np.array(state[f"p{i}"]) for i in range(n)]
        self.y_shift = float(state["y_shift"])
        self.y_scale = float(state["y_scale"])


class TabularGaussianModel:
    """Independent normal posterior per item, known observation variance.

    Observations are folded in one at a time; the posterior after any
    sequence equals the batch closed form
    ``var = 1/(1/v0 + n/v_obs)``, ``mean = var * (m0/v0 + sum(y)/v_obs)``.
    """

    def __init__(self, n_items: int, prior_mean: float = 0.0, prior_var: float = 1.0, obs_var: float = 1.0):
        if prior_var <= 0 or obs_var <= 0:
            raise ValueError("variances must be > 0")
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.obs_var = float(obs_var)
        self.mean = np.full(n_items, self.prior_mean)
        self.var = np.full(n_items, self.prior_var)
        self.count = np.zeros(n_items, dtype=np.int64)

    def update(self, item: int, y: float) -> None:
        new_var = 1.0 / (1.0 / self.var[item] + 1.0 / self.obs_var)
        self.mean[item] = new_var * (self.mean[item] / self.var[item] + y / self.obs_var)
        self.var[item] = new_var
        self.count[item] += 1

    def update_many(self, items: Sequence[int], ys: Sequence[float]) -> None:
        for i, y in zip(items, ys):
            self.update(int(i), float(y))

    def predict(self) -> Predictions:
        return Predictions(self.mean.copy(), np.sqrt(self.var))


def conjugate_posterior(prior_mean, prior_var, obs_var, ys):
    """Closed-form normal posterior for a batch of observations."""
    ys = np.asarray(ys, dtype=np.float64)
    var = 1.0 / (1.0 / prior_var + len(ys) / obs_var)
    return var * (prior_mean / prior_var + ys.sum() / obs_var), var


@dataclass
class SynthonDataset:
    """One row per (scored candidate, vector): which item, which vector, what score."""

    vector_index: np.ndarray
    item_index: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @classmethod
    def from_ledger(cls, ledger, n_vectors: int) -> "SynthonDataset":
        cands = list(ledger.scores.keys())
        ys = np.fromiter(ledger.scores.values(), dtype=np.float64, count=len(cands))
        idx = np.asarray([c.indices for c in cands], dtype=np.int64).reshape(-1, n_vectors)
        return cls(
            vector_index=np.repeat(np.arange(n_vectors)[None, :], len(cands), axis=0).T.ravel(),
            item_index=idx.T.ravel(),
            y=np.tile(ys, n_vectors),
        )

    def for_vector(self, v: int) -> "SynthonDataset":
        mask = self.vector_index == v
        return SynthonDataset(self.vector_index[mask], self.item_index[mask], self.y[mask])


@dataclass
class SurrogateConfig:
    mode: str = "per-vector"  # per-vector | one-model
    regressor: MveRegressorConfig = field(default_factory=MveRegressorConfig)

    def __post_init__(self):
        if isinstance(self.regressor, dict):
            self.regressor = MveRegressorConfig(**self.regressor)
        if self.mode not in ("per-vector", "one-model"):
            raise ValueError(f"unknown surrogate mode {self.mode!r}")


class SynthonSurrogate:
    """Item-level predictors for every vector behind one interface.

    ``predict_all`` evaluates each pool once, so inference cost is the sum
    of pool sizes, never their product.
    """

    def __init__(self, config: SurrogateConfig | None = None):
        self.config = config or SurrogateConfig()
        self.models: list[MveRegressor] = []
        self.reports: list[TrainingReport] = []

    @property
    def forward_passes(self) -> int:
        return sum(m.forward_passes for m in self.models)

    def _inputs(self, space, v: int, items) -> np.ndarray:
        feats = space.sets[v].features[items]
        if self.config.mode == "one-model":
            feats = attach_vector_onehot(feats, v, space.n_vectors)
        return feats

    def fit(self, space, dataset: SynthonDataset, seed: int) -> list[TrainingReport]:
        if len(dataset) == 0:
            raise SurrogateError("empty training set")
        cfg = self.config
        if cfg.mode == "per-vector":
            self.models, self.reports = [], []
            for v in range(space.n_vectors):
                sub = dataset.for_vector(v)
                model = MveRegressor(cfg.regressor, seed=0)
                self.reports.append(model.fit(self._inputs(space, v, sub.item_index), sub.y,
                                              seed=_model_seed(seed, v)))
                self.models.append(model)
        else:
            X = np.vstack([self._inputs(space, v, dataset.for_vector(v).item_index) for v in range(space.n_vectors)])
            y = np.concatenate([dataset.for_vector(v).y for v in range(space.n_vectors)])
            model = MveRegressor(cfg.regressor, seed=0)
            self.reports = [model.fit(X, y, seed=_model_seed(seed, 0))]
            self.models = [model]
        return self.reports

    def predict_all(self, space, seed: int = 0) -> list[Predictions]:
        if not self.models:
            raise SurrogateError("surrogate has not been trained")
        out = []
        for v, s in enumerate(space.sets):
            model = self.models[v] if self.config.mode == "per-vector" else self.models[0]
            rng = substream(seed, "dropout-predict", v)
            out.append(model.predict(self._inputs(space, v, np.arange(len(s))), rng=rng))
        return out

    def save(self, path: str | Path) -> None:
        arrays = {}
        for i, m in enumerate(self.models):
            for k, a in m.state().items():
                arrays[f"m{i}_{k}"] = a
        np.savez(path, **arrays)

    def load(self, path: str | Path) -> None:
        data = np.load(path)
        n_models = 1 + max(int(k.split("_")[0][1:]) for k in data.files)
        self.models = []
        for i in range(n_models):
            m = MveRegressor(self.config.regressor)
            m.load_state({k.split("_", 1)[1]: data[k] for k in data.files if k.startswith(f"m{i}_")})
            self.models.append(m)


def _model_seed(seed: int, v: int) -> int:
    return int(substream(seed, "model", v).integers(2**31))


def regressor_config_dict(cfg: MveRegressorConfig) -> dict:
    return asdict(cfg)
