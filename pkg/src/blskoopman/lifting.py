"""State-lifting dictionaries.

Two sklearn-style transformers produce the lifted coordinates in which the
one-step dynamics are fitted linearly: a broad-learning random-feature
lifter (feature layer + enhancement layer, growable without disturbing
existing coordinates) and a thin-plate-spline RBF lifter for the classical
EDMD baseline.  Both pass the raw state through as the first coordinates,
which is what makes an exact [I 0] decoder possible.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import read_blob, write_blob
from .numerics import rng_stream

# rng_stream derivation tags, so init and grow draws never collide
_TAG_INIT = 0
_TAG_GROW = 1


def tps_activation(v):
    """Thin-plate response v^2 * log|v|, continuously extended to 0 at v = 0."""
    v = np.asarray(v, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = v * v * np.log(np.abs(v))
    return np.where(v == 0.0, 0.0, out)


ACTIVATIONS = {"tps": tps_activation, "tanh": np.tanh}


def get_activation(kind: str):
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}"
        ) from None


def _uniform(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return scale * (2.0 * rng.random(shape) - 1.0)


class BlsLifting(BaseEstimator, TransformerMixin):
    """Random feature/enhancement lifting of the state.

    The lifted vector stacks the raw state, ``n_feature`` activation nodes of
    a random affine map of the state, and ``n_enhance`` activation nodes of a
    random affine map of the feature block, for a total dimension
    n + n_feature + n_enhance.  Weights and biases are drawn i.i.d. uniform on
    [-scale, scale] and are never trained.

    ``grow`` appends nodes: every existing output coordinate keeps its exact
    value (new feature nodes get zero weight into old enhancement nodes, and
    new nodes are appended after all existing outputs), so lifts of grown
    lifters extend lifts of their ancestors coordinate-for-coordinate.
    """

    passes_state_through = True

    def __init__(self, n_feature=600, n_enhance=400, activation="tps",
                 scale=1.0, random_state=0):
        self.n_feature = n_feature
        self.n_enhance = n_enhance
        self.activation = activation
        self.scale = scale
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.n_feature < 0 or self.n_enhance < 0:
            raise ValueError("node counts must be >= 0")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")
        get_activation(self.activation)
        n = X.shape[1]
        rng = rng_stream(self.random_state, _TAG_INIT)
        # draw order is part of the reproducibility contract
        self.feature_weights_ = _uniform(rng, (n, self.n_feature), self.scale)
        self.feature_bias_ = _uniform(rng, self.n_feature, self.scale)
        self.enhance_weights_ = _uniform(rng, (self.n_feature, self.n_enhance), self.scale)
        self.enhance_bias_ = _uniform(rng, self.n_enhance, self.scale)
        self.n_features_in_ = n
        self.output_index_ = np.arange(n + self.n_feature + self.n_enhance)
        self.grow_count_ = 0
        return self

    @property
    def lift_dim_(self) -> int:
        check_is_fitted(self, "feature_weights_")
        return self.n_features_in_ + self.n_feature + self.n_enhance

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "feature_weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} state columns, got {X.shape[1]}"
            )
        act = get_activation(self.activation)
        Z = act(X @ self.feature_weights_ + self.feature_bias_)
        H = act(Z @ self.enhance_weights_ + self.enhance_bias_)
        out = np.hstack([X, Z, H])
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("lifted state has non-finite entries")
        if self.grow_count_:
            out = out[:, self.output_index_]
        return out

    def grow(self, add_feature: int, add_enhance: int, random_state=None) -> "BlsLifting":
        """Return a new lifter with extra nodes appended after all current ones.

        The first lift_dim_ output coordinates of the grown lifter equal this
        lifter's output exactly.  New enhancement nodes connect to the full
        grown feature block; by default the fresh draws derive from this
        lifter's seed and grow count.
        """
        check_is_fitted(self, "feature_weights_")
        if add_feature < 0 or add_enhance < 0:
            raise ValueError("growth counts must be >= 0")
        n = self.n_features_in_
        nz, nh = self.n_feature, self.n_enhance
        if random_state is None:
            rng = rng_stream(self.random_state, _TAG_GROW, self.grow_count_)
        else:
            rng = rng_stream(random_state, _TAG_GROW)
        new_fw = _uniform(rng, (n, add_feature), self.scale)
        new_fb = _uniform(rng, add_feature, self.scale)
        new_ew = _uniform(rng, (nz + add_feature, add_enhance), self.scale)
        new_eb = _uniform(rng, add_enhance, self.scale)

        out = BlsLifting(
            n_feature=nz + add_feature,
            n_enhance=nh + add_enhance,
            activation=self.activation,
            scale=self.scale,
            random_state=self.random_state,
        )
        out.n_features_in_ = n
        out.feature_weights_ = np.hstack([self.feature_weights_, new_fw])
        out.feature_bias_ = np.concatenate([self.feature_bias_, new_fb])
        # old enhancement nodes must not see the new feature nodes
        padded = np.vstack([self.enhance_weights_, np.zeros((add_feature, nh))])
        out.enhance_weights_ = np.hstack([padded, new_ew])
        out.enhance_bias_ = np.concatenate([self.enhance_bias_, new_eb])
        # canonical positions of old enhancement outputs shift by add_feature
        old = self.output_index_.copy()
        old[old >= n + nz] += add_feature
        new_z = np.arange(n + nz, n + nz + add_feature)
        new_h = np.arange(n + nz + add_feature + nh, n + nz + add_feature + nh + add_enhance)
        out.output_index_ = np.concatenate([old, new_z, new_h])
        out.grow_count_ = self.grow_count_ + 1
        return out


class ThinPlateRbfLifting(BaseEstimator, TransformerMixin):
    """State passthrough plus thin-plate-spline radial functions r^2 log r.

    Centers are drawn uniformly from ``center_box`` (per-dimension (lo, hi)
    rows) or, when omitted, from the per-dimension extent of the data seen by
    fit.  Each radial coordinate vanishes at its center.
    """

    passes_state_through = True

    def __init__(self, n_centers=100, center_box=None, random_state=0):
        self.n_centers = n_centers
        self.center_box = center_box
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.n_centers < 0:
            raise ValueError("n_centers must be >= 0")
        n = X.shape[1]
        if self.center_box is not None:
            box = np.asarray(self.center_box, dtype=np.float64)
            if box.shape != (n, 2):
                raise ValueError(f"center_box must have shape ({n}, 2)")
        else:
            box = np.column_stack([X.min(axis=0), X.max(axis=0)])
        rng = rng_stream(self.random_state, _TAG_INIT)
        self.centers_ = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((self.n_centers, n))
        self.n_features_in_ = n
        return self

    @property
    def lift_dim_(self) -> int:
        check_is_fitted(self, "centers_")
        return self.n_features_in_ + self.n_centers

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "centers_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} state columns, got {X.shape[1]}"
            )
        if not self.n_centers:
            return X.copy()
        r = cdist(X, self.centers_)
        return np.hstack([X, tps_activation(r)])


def _lifter_state(lifter):
    """Serializable (meta, arrays) pair for a fitted lifter."""
    if isinstance(lifter, BlsLifting):
        check_is_fitted(lifter, "feature_weights_")
        meta = {
            "lifter": "bls",
            "n_feature": int(lifter.n_feature),
            "n_enhance": int(lifter.n_enhance),
            "activation": lifter.activation,
            "scale": float(lifter.scale),
            "random_state": int(lifter.random_state),
            "n_features_in": int(lifter.n_features_in_),
            "grow_count": int(lifter.grow_count_),
        }
        arrays = {
            "feature_weights": lifter.feature_weights_,
            "feature_bias": lifter.feature_bias_,
            "enhance_weights": lifter.enhance_weights_,
            "enhance_bias": lifter.enhance_bias_,
            "output_index": lifter.output_index_,
        }
        return meta, arrays
    if isinstance(lifter, ThinPlateRbfLifting):
        check_is_fitted(lifter, "centers_")
        meta = {
            "lifter": "tps",
            "n_centers": int(lifter.n_centers),
            "random_state": int(lifter.random_state),
            "n_features_in": int(lifter.n_features_in_),
        }
        return meta, {"centers": lifter.centers_}
    raise TypeError(f"cannot serialise lifter of type {type(lifter).__name__}")


def _lifter_from_state(meta, arrays):
    if meta["lifter"] == "bls":
        out = BlsLifting(
            n_feature=meta["n_feature"],
            n_enhance=meta["n_enhance"],
            activation=meta["activation"],
            scale=meta["scale"],
            random_state=meta["random_state"],
        )
        out.n_features_in_ = meta["n_features_in"]
        out.feature_weights_ = arrays["feature_weights"]
        out.feature_bias_ = arrays["feature_bias"]
        out.enhance_weights_ = arrays["enhance_weights"]
        out.enhance_bias_ = arrays["enhance_bias"]
        out.output_index_ = arrays["output_index"].astype(np.int64)
        out.grow_count_ = meta["grow_count"]
        return out
    if meta["lifter"] == "tps":
        out = ThinPlateRbfLifting(
            n_centers=meta["n_centers"], random_state=meta["random_state"]
        )
        out.n_features_in_ = meta["n_features_in"]
        out.centers_ = arrays["centers"]
        return out
    raise ValueError(f"unknown lifter kind {meta.get('lifter')!r}")


def save_lifter(lifter, path) -> None:
    """Persist a fitted lifter; load_lifter round-trips bit-exactly."""
    meta, arrays = _lifter_state(lifter)
    write_blob(path, "lifter", meta, arrays)


def load_lifter(path):
    meta, arrays = read_blob(path, "lifter")
    return _lifter_from_state(meta, arrays)
