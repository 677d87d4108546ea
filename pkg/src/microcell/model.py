"""Conditional generative model mapping (E, nu) to unit-cell parameters.

Three small dense networks play generator, discriminator, and auxiliary
property regressor. The generator never sees raw property units: all
conditions are min-max scaled to [-1, 1] with constants learned from the
training split. Its output heads enforce the simplex and box constraints
structurally, so any draw is a valid shape-parameter vector.
"""
from __future__ import annotations

import json
import os
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import TrainingDivergedError, ValidationError
from .homogenization import homogenize
from .hull import PropertyHull
from .networks import (Adam, Mlp, discriminator_loss, generator_adversarial_loss,
                       head_backward, head_forward, l1_loss)
from .params import ShapeParams

PARAM_DIM = 6
COND_DIM = 2


class PropertyScaler(BaseEstimator, TransformerMixin):
    """Min-max map of (E, nu) columns onto [-1, 1]."""

    def fit(self, y, _=None):
        y = self._check(y)
        self.minimum_ = y.min(axis=0)
        self.maximum_ = y.max(axis=0)
        if np.any(self.maximum_ <= self.minimum_):
            raise ValidationError("degenerate property range; cannot scale")
        return self

    def transform(self, y):
        self._require_fit()
        y = self._check(y)
        return 2.0 * (y - self.minimum_) / (self.maximum_ - self.minimum_) - 1.0

    def inverse_transform(self, yn):
        self._require_fit()
        yn = self._check(yn)
        return self.minimum_ + (np.asarray(yn) + 1.0) * (self.maximum_ - self.minimum_) / 2.0

    def to_dict(self):
        self._require_fit()
        return {"minimum": self.minimum_.tolist(), "maximum": self.maximum_.tolist()}

    @classmethod
    def from_dict(cls, payload):
        scaler = cls()
        scaler.minimum_ = np.asarray(payload["minimum"], dtype=float)
        scaler.maximum_ = np.asarray(payload["maximum"], dtype=float)
        return scaler

    def _require_fit(self):
        if not hasattr(self, "minimum_"):
            raise NotFittedError("PropertyScaler is not fitted")

    @staticmethod
    def _check(y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[None, :]
        if y.ndim != 2 or y.shape[1] != COND_DIM:
            raise ValidationError(f"expected (n, {COND_DIM}) properties, got {y.shape}")
        return y


class CellGan(BaseEstimator):
    """Adversarially trained inverse map from properties to cell shapes.

    fit(X, y) takes shape parameters X (n, 6) and their homogenized
    properties y (n, 2); sample(conditions) draws new parameter vectors
    conditioned on target properties. The auxiliary regressor learns the
    forward shape->property map from the labeled data only and its L1
    mismatch feeds the generator objective with weight gamma.
    """

    def __init__(self, iterations=5000, batch_size=32, learning_rate=2e-4,
                 gamma=20.0, noise_dim=3, hidden=128, seed=0,
                 regressor_weight_decay=3e-3):
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.noise_dim = noise_dim
        self.hidden = hidden
        self.seed = seed
        # L2 decay on the regressor only: with a few hundred labeled cells
        # in a 6-D space it otherwise memorizes the training set and its
        # held-out bias leaks into the generator through the L1 penalty
        self.regressor_weight_decay = regressor_weight_decay

    # -- training ----------------------------------------------------------

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] != PARAM_DIM:
            raise ValidationError(f"expected (n, {PARAM_DIM}) shape parameters, got {X.shape}")
        if y.shape != (X.shape[0], COND_DIM):
            raise ValidationError(f"expected properties of shape ({X.shape[0]}, {COND_DIM})")
        if X.shape[0] == 0:
            raise ValidationError("training set is empty")

        self.scaler_ = PropertyScaler().fit(y)
        yn = self.scaler_.transform(y)
        try:
            self.hull_ = PropertyHull.from_points(y)
        except ValidationError:
            self.hull_ = None

        rng = np.random.default_rng(self.seed)
        h = self.hidden
        self.generator_ = Mlp([self.noise_dim + COND_DIM, h, h, h, PARAM_DIM],
                              seed=rng.integers(2 ** 31))
        self.discriminator_ = Mlp([PARAM_DIM + COND_DIM, h, h, 1],
                                  seed=rng.integers(2 ** 31))
        self.regressor_ = Mlp([PARAM_DIM, h, h, COND_DIM], seed=rng.integers(2 ** 31))
        opt_g = Adam(self.generator_, self.learning_rate)
        opt_d = Adam(self.discriminator_, self.learning_rate)
        opt_r = Adam(self.regressor_, self.learning_rate)

        use_regressor = self.gamma > 0
        n = X.shape[0]
        history = np.zeros((self.iterations, 4))
        for it in range(self.iterations):
            idx = rng.integers(0, n, size=self.batch_size)
            xb, yb = X[idx], yn[idx]

            # discriminator on real vs generated pairs, generator frozen
            z = rng.standard_normal((self.batch_size, self.noise_dim))
            fake, _, _ = self._generate_raw(z, yb)
            logit_real, cache_real = self.discriminator_.forward(
                np.concatenate([xb, yb], axis=1))
            logit_fake, cache_fake = self.discriminator_.forward(
                np.concatenate([fake, yb], axis=1))
            d_loss, g_real, g_fake = discriminator_loss(logit_real[:, 0], logit_fake[:, 0])
            grads_real, _ = self.discriminator_.backward(cache_real, g_real[:, None])
            grads_fake, _ = self.discriminator_.backward(cache_fake, g_fake[:, None])
            opt_d.step(self.discriminator_, _sum_grads(grads_real, grads_fake))

            # regressor on labeled real data only
            r_loss = 0.0
            if use_regressor:
                pred, cache_r = self.regressor_.forward(xb)
                r_loss, g_pred = l1_loss(pred, yb)
                grads_r, _ = self.regressor_.backward(cache_r, g_pred)
                if self.regressor_weight_decay:
                    for W, gW in zip(self.regressor_.weights, grads_r["weights"]):
                        gW += self.regressor_weight_decay * W
                opt_r.step(self.regressor_, grads_r)

            # generator: non-saturating adversarial + property penalty,
            # discriminator and regressor both frozen
            z = rng.standard_normal((self.batch_size, self.noise_dim))
            fake, cache_g, cache_head = self._generate_raw(z, yb)
            logit_fake, cache_dg = self.discriminator_.forward(
                np.concatenate([fake, yb], axis=1))
            adv_loss, g_logit = generator_adversarial_loss(logit_fake[:, 0])
            _, g_dinput = self.discriminator_.backward(cache_dg, g_logit[:, None])
            grad_fake = g_dinput[:, :PARAM_DIM]
            lg_loss = 0.0
            if use_regressor:
                pred, cache_rg = self.regressor_.forward(fake)
                lg_loss, g_pred = l1_loss(pred, yb)
                _, g_rinput = self.regressor_.backward(cache_rg, g_pred)
                grad_fake = grad_fake + self.gamma * g_rinput
            grad_raw = head_backward(cache_head, grad_fake)
            grads_g, _ = self.generator_.backward(cache_g, grad_raw)
            opt_g.step(self.generator_, grads_g)

            g_loss = adv_loss + self.gamma * lg_loss
            history[it] = (it, d_loss, g_loss, r_loss)
            if not np.all(np.isfinite(history[it])):
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {it}", iteration=it)
        self.history_ = history
        return self

    def _generate_raw(self, z, yn):
        raw, cache = self.generator_.forward(np.concatenate([z, yn], axis=1))
        params, cache_head = head_forward(raw)
        return params, cache, cache_head

    # -- inference ---------------------------------------------------------

    def sample(self, conditions, n_draws: int = 1, z=None, seed: int | None = None):
        """Draw shape-parameter vectors for each (E, nu) condition row.

        Conditions are raw property units. Returns (n, n_draws, 6) or
        (n, 6) when n_draws == 1 and z is None. Conditions outside the
        training hull produce a warning; generation still proceeds.
        """
        self._require_fit()
        y = np.asarray(conditions, dtype=float)
        single = y.ndim == 1
        if single:
            y = y[None, :]
        if self.hull_ is not None and not np.all(self.hull_.contains(y[:, 0], y[:, 1],
                                                                     tol=1e-6)):
            warnings.warn("conditions outside the training property hull; "
                          "generated cells may not honor them", stacklevel=2)
        yn = self.scaler_.transform(y)
        if z is None:
            rng = np.random.default_rng(self.seed if seed is None else seed)
            z = rng.standard_normal((y.shape[0], n_draws, self.noise_dim))
        else:
            z = np.asarray(z, dtype=float)
            if z.ndim == 2:
                z = z[:, None, :]
            n_draws = z.shape[1]
        out = np.empty((y.shape[0], n_draws, PARAM_DIM))
        for d in range(n_draws):
            params, _, _ = self._generate_raw(z[:, d, :], yn)
            out[:, d, :] = params
        if n_draws == 1:
            out = out[:, 0, :]
        return out[0] if single else out

    def predict(self, conditions):
        """Single deterministic draw per condition (zero noise vector)."""
        y = np.asarray(conditions, dtype=float)
        single = y.ndim == 1
        if single:
            y = y[None, :]
        z = np.zeros((y.shape[0], 1, self.noise_dim))
        out = self.sample(y, z=z)
        return out[0] if single else out

    def _require_fit(self):
        if not hasattr(self, "generator_"):
            raise NotFittedError("CellGan is not fitted")

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        self._require_fit()
        payload = {
            "config": self.get_params(),
            "scaling": self.scaler_.to_dict(),
            "hull": None if self.hull_ is None else self.hull_.A.tolist(),
            "generator": self.generator_.to_dict(),
            "discriminator": self.discriminator_.to_dict(),
            "regressor": self.regressor_.to_dict(),
        }
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "CellGan":
        with open(path) as fh:
            payload = json.load(fh)
        model = cls(**payload["config"])
        model.scaler_ = PropertyScaler.from_dict(payload["scaling"])
        model.hull_ = (None if payload["hull"] is None
                       else PropertyHull(np.asarray(payload["hull"], dtype=float)))
        model.generator_ = Mlp.from_dict(payload["generator"])
        model.discriminator_ = Mlp.from_dict(payload["discriminator"])
        model.regressor_ = Mlp.from_dict(payload["regressor"])
        model.history_ = None
        return model


def _sum_grads(a, b):
    return {"weights": [ga + gb for ga, gb in zip(a["weights"], b["weights"])],
            "biases": [ga + gb for ga, gb in zip(a["biases"], b["biases"])]}


def property_error(target, params: ShapeParams, resolution: int = 40):
    """Signed relative property error of one generated cell.

    Homogenizes the cell and returns ((E' - E)/E, (nu' - nu)/nu).
    """
    E, nu = float(target[0]), float(target[1])
    props = homogenize(params, resolution=resolution)
    return (props.E_H - E) / E, (props.nu_H - nu) / nu


def evaluate_model(model: CellGan, conditions, resolution: int = 40,
                   seed: int = 0):
    """One generated cell per condition row -> list of error records.

    Rows are dicts with the target, achieved properties, and signed
    relative errors; cells whose homogenization fails carry error=None.
    """
    conditions = np.asarray(conditions, dtype=float)
    draws = model.sample(conditions, seed=seed)
    rows = []
    for target, vec in zip(conditions, np.atleast_2d(draws)):
        params = ShapeParams.from_array(vec)
        row = {"E": target[0], "nu": target[1], "params": params}
        try:
            props = homogenize(params, resolution=resolution)
            row.update(E_prime=props.E_H, nu_prime=props.nu_H,
                       eps_E=(props.E_H - target[0]) / target[0],
                       eps_nu=(props.nu_H - target[1]) / target[1])
        except Exception as exc:  # propagate the reason, keep the batch alive
            row.update(E_prime=None, nu_prime=None, eps_E=None, eps_nu=None,
                       failure=str(exc))
        rows.append(row)
    return rows


def sample_hull_conditions(hull: PropertyHull, count: int, seed: int = 0) -> np.ndarray:
    """Rejection-sample property targets uniformly inside the hull."""
    rng = np.random.default_rng(seed)
    lo = hull.vertices.min(axis=0)
    hi = hull.vertices.max(axis=0)
    out = np.empty((count, 2))
    filled = 0
    while filled < count:
        cand = lo + (hi - lo) * rng.random((4 * count, 2))
        keep = hull.contains(cand[:, 0], cand[:, 1], tol=0.0)
        take = cand[keep][:count - filled]
        out[filled:filled + len(take)] = take
        filled += len(take)
    return out


def noise_robustness_report(model: CellGan, conditions=50, draws: int = 50,
                            resolution: int = 40, seed: int = 0):
    """Per-condition spread of property errors under noise perturbation.

    conditions may be an integer (sampled inside the training hull) or an
    explicit (n, 2) array. Returns one dict per condition with the mean
    and standard deviation of each signed relative error.
    """
    if isinstance(conditions, (int, np.integer)):
        if model.hull_ is None:
            raise ValidationError("model has no property hull to sample conditions from")
        conditions = sample_hull_conditions(model.hull_, int(conditions), seed=seed)
    conditions = np.asarray(conditions, dtype=float)
    rows = []
    for ci, (E, nu) in enumerate(conditions):
        vecs = model.sample([E, nu], n_draws=draws, seed=seed + 1000 + ci)
        vecs = np.atleast_2d(vecs)
        errs = []
        for vec in vecs:
            try:
                errs.append(property_error((E, nu), ShapeParams.from_array(vec),
                                           resolution=resolution))
            except Exception:
                continue
        errs = np.asarray(errs) if errs else np.empty((0, 2))
        rows.append({
            "E": E, "nu": nu, "draws": len(errs),
            "mean_eps_E": float(errs[:, 0].mean()) if len(errs) else np.nan,
            "std_eps_E": float(errs[:, 0].std()) if len(errs) else np.nan,
            "mean_eps_nu": float(errs[:, 1].mean()) if len(errs) else np.nan,
            "std_eps_nu": float(errs[:, 1].std()) if len(errs) else np.nan,
        })
    return rows
