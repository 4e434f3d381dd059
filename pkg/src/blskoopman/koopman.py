"""Fitting and evaluating lifted linear one-step predictors.

KoopmanPredictor regresses lifted successors on lifted states and raw inputs
(ridge-regularised, right-sided least squares) and rolls the fitted linear
map forward from a single initial lift.  train_grown wraps the fit in an
incremental node-growth loop; benchmark_prediction runs the multi-method
RMSE comparison on the van der Pol plant.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import SnapshotDataset, read_blob, write_blob
from .lifting import BlsLifting, _lifter_from_state, _lifter_state
from .numerics import (
    IntegrationDiverged,
    linearize,
    ridge_solve_gram,
    rk4_rollout,
    rng_stream,
)


class KoopmanPredictor(BaseEstimator):
    """Linear one-step predictor in a lifted coordinate system.

    fit() lifts the snapshot states X and successors Y with one shared lifter
    and solves

        min_{A, B} ||lift(Y) - A lift(X) - B U||_F^2 + alpha (||A||_F^2 + ||B||_F^2)

    With alpha == 0 the fit routes through an SVD least squares (minimum-norm
    solution); with alpha > 0 normal equations are accumulated chunk-wise, so
    datasets never need to be lifted in one piece.  When the lifter passes the
    raw state through, the decoder C is the exact selector [I 0]; otherwise it
    is fitted by the same ridge regression.

    predict() iterates z <- A z + B u from the single initial lift and decodes
    with C at every step; the state is never re-lifted mid-rollout.

    Attributes (after fit): ``A_``, ``B_``, ``C_``, ``lifter_``,
    ``training_residual_`` (Frobenius norm of the lifted residual),
    ``one_step_mse_`` (dataset-mean squared decoded one-step error).
    """

    def __init__(self, lifter=None, alpha=1e-6, chunk_size=16384):
        self.lifter = lifter
        self.alpha = alpha
        self.chunk_size = chunk_size

    def _resolved_lifter(self, X):
        lifter = self.lifter
        if lifter is None:
            # identity lift: the raw state is the whole dictionary
            lifter = BlsLifting(n_feature=0, n_enhance=0, random_state=0)
        if not hasattr(lifter, "n_features_in_"):
            lifter.fit(X)
        return lifter

    def fit(self, X, Y, U):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        U = check_array(U, dtype=np.float64)
        if X.shape != Y.shape:
            raise ValueError("X and Y must share a shape")
        if U.shape[0] != X.shape[0]:
            raise ValueError("U must have one row per snapshot")
        N, n = X.shape
        if N < 1:
            raise ValueError("dataset is empty; cannot fit")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if N > 1 and float(np.ptp(X, axis=0).max()) == 0.0:
            warnings.warn("all snapshot states are identical; fit is rank deficient")
        lifter = self._resolved_lifter(X)
        E = lifter.lift_dim_
        l = U.shape[1]
        passthrough = getattr(lifter, "passes_state_through", False)

        if self.alpha == 0.0:
            K, stats = self._fit_dense(lifter, X, Y, U, E, n)
        else:
            K, stats = self._fit_chunked(lifter, X, Y, U, E, n)

        self.lifter_ = lifter
        self.A_ = np.ascontiguousarray(K[:, :E])
        self.B_ = np.ascontiguousarray(K[:, E:])
        if passthrough:
            C = np.zeros((n, E))
            C[:, :n] = np.eye(n)
            self.C_ = C
        else:
            self.C_ = stats["C"]
        self.training_residual_ = stats["residual"]
        self.one_step_mse_ = stats["one_step_mse"]
        self.n_state_ = n
        self.n_input_ = l
        self.n_samples_ = N
        return self

    def _fit_dense(self, lifter, X, Y, U, E, n):
        Zx = lifter.transform(X)
        Zy = lifter.transform(Y)
        D = np.hstack([Zx, U])
        Kt, _, rank, _ = np.linalg.lstsq(D, Zy, rcond=None)
        if rank < min(D.shape):
            warnings.warn(f"snapshot regression is rank deficient (rank {rank} of {min(D.shape)})")
        resid = Zy - D @ Kt
        stats = {"residual": float(np.linalg.norm(resid))}
        if getattr(lifter, "passes_state_through", False):
            err = resid[:, :n]
        else:
            Ct, _, _, _ = np.linalg.lstsq(Zx, X, rcond=None)
            stats["C"] = Ct.T
            err = (D @ Kt) @ stats["C"].T - Y
        stats["one_step_mse"] = float(np.mean(np.sum(err * err, axis=1)))
        return Kt.T, stats

    def _fit_chunked(self, lifter, X, Y, U, E, n):
        N = X.shape[0]
        l = U.shape[1]
        p = E + l
        gram = np.zeros((p, p))
        cross = np.zeros((p, E))
        sq_y = 0.0
        passthrough = getattr(lifter, "passes_state_through", False)
        cross_state = None if passthrough else np.zeros((E, n))
        step = max(1, int(self.chunk_size))
        for lo in range(0, N, step):
            hi = min(N, lo + step)
            D = np.hstack([lifter.transform(X[lo:hi]), U[lo:hi]])
            Zy = lifter.transform(Y[lo:hi])
            gram += D.T @ D
            cross += D.T @ Zy
            sq_y += float(np.vdot(Zy, Zy))
            if cross_state is not None:
                cross_state += D[:, :E].T @ X[lo:hi]
        K = ridge_solve_gram(gram, cross.T, self.alpha)  # (E, p)
        Kt = K.T
        # ||Zy - D K^T||_F^2 from the accumulated products
        resid_sq = sq_y - 2.0 * float(np.vdot(cross, Kt)) + float(np.vdot(gram @ Kt, Kt))
        stats = {"residual": float(np.sqrt(max(resid_sq, 0.0)))}
        if passthrough:
            # decoded error is the state-block restriction of the same residual
            Kt_s = Kt[:, :n]
            sq_state = 0.0
            for lo in range(0, N, step):
                hi = min(N, lo + step)
                sq_state += float(np.vdot(Y[lo:hi], Y[lo:hi]))
            err_sq = (
                sq_state
                - 2.0 * float(np.vdot(cross[:, :n], Kt_s))
                + float(np.vdot(gram @ Kt_s, Kt_s))
            )
            stats["one_step_mse"] = max(err_sq, 0.0) / N
        else:
            C = ridge_solve_gram(gram[:E, :E], cross_state.T, self.alpha)
            stats["C"] = C
            err_sq = 0.0
            for lo in range(0, N, step):
                hi = min(N, lo + step)
                D = np.hstack([lifter.transform(X[lo:hi]), U[lo:hi]])
                pred = (D @ Kt) @ C.T
                err_sq += float(np.vdot(pred - Y[lo:hi], pred - Y[lo:hi]))
            stats["one_step_mse"] = err_sq / N
        return K, stats

    @property
    def lift_dim_(self) -> int:
        check_is_fitted(self, "A_")
        return self.A_.shape[0]

    def lift(self, X) -> np.ndarray:
        check_is_fitted(self, "A_")
        return self.lifter_.transform(X)

    def predict(self, x0, U) -> np.ndarray:
        """Roll the predictor out for len(U) steps from a single initial lift.

        Returns the decoded states after each step, shape (K, n).  Raises
        IntegrationDiverged (carrying the step index) if the lifted state
        stops being finite.
        """
        check_is_fitted(self, "A_")
        x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        if U.shape[1] != self.n_input_:
            raise ValueError(f"expected {self.n_input_} input columns, got {U.shape[1]}")
        z = self.lift(x0[None, :])[0]
        K = U.shape[0]
        out = np.empty((K, self.n_state_))
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(K):
                z = self.A_ @ z + self.B_ @ U[k]
                if not np.all(np.isfinite(z)):
                    raise IntegrationDiverged(k, context="lifted rollout")
                out[k] = self.C_ @ z
        return out


def fit_edmd(ds: SnapshotDataset, lifter=None, alpha: float = 1e-6) -> KoopmanPredictor:
    """Fit a lifted linear predictor on a snapshot dataset."""
    if ds.n_samples < 1:
        raise ValueError("dataset is empty; cannot fit")
    return KoopmanPredictor(lifter=lifter, alpha=alpha).fit(ds.X, ds.Y, ds.U)


@dataclass
class GrowthStage:
    n_feature: int
    n_enhance: int
    lift_dim: int
    one_step_mse: float
    training_residual: float


@dataclass
class TrainResult:
    predictor: KoopmanPredictor
    history: list[GrowthStage]
    converged: bool
    reached_budget: bool


def train_grown(
    ds: SnapshotDataset,
    init_n_feature: int = 600,
    init_n_enhance: int = 400,
    tolerance: float = 1e-4,
    grow_feature: int = 100,
    grow_enhance: int = 100,
    max_lift_dim: int = 4000,
    alpha: float = 1e-6,
    activation: str = "tps",
    scale: float = 1.0,
    seed: int = 0,
) -> TrainResult:
    """Fit with an incrementally grown random-feature lifter.

    Refits after each growth step until the dataset-mean squared one-step
    prediction error drops below ``tolerance`` or the next growth would push
    the lifted dimension past ``max_lift_dim``.  Returns the best predictor
    seen; ``reached_budget`` reports hitting the dimension cap without
    converging (still a usable result, not a failure).
    """
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    if ds.n_samples < 1:
        raise ValueError("dataset is empty; cannot train")
    lifter = BlsLifting(
        n_feature=init_n_feature,
        n_enhance=init_n_enhance,
        activation=activation,
        scale=scale,
        random_state=seed,
    ).fit(ds.X)
    history: list[GrowthStage] = []
    best = None
    converged = False
    reached_budget = False
    while True:
        pred = KoopmanPredictor(lifter=lifter, alpha=alpha).fit(ds.X, ds.Y, ds.U)
        history.append(
            GrowthStage(
                n_feature=lifter.n_feature,
                n_enhance=lifter.n_enhance,
                lift_dim=lifter.lift_dim_,
                one_step_mse=pred.one_step_mse_,
                training_residual=pred.training_residual_,
            )
        )
        if best is None or pred.one_step_mse_ < best.one_step_mse_:
            best = pred
        if pred.one_step_mse_ < tolerance:
            converged = True
            break
        if grow_feature == 0 and grow_enhance == 0:
            reached_budget = True
            break
        if lifter.lift_dim_ + grow_feature + grow_enhance > max_lift_dim:
            reached_budget = True
            break
        lifter = lifter.grow(grow_feature, grow_enhance)
    return TrainResult(best, history, converged, reached_budget)


def rmse_percent(pred_runs, true_runs) -> float:
    """Mean over runs of 100 * ||pred - true|| / ||true||, runs flattened.

    Runs whose true trajectory has zero norm are excluded with a warning
    (the normalised ratio is undefined for them).
    """
    if len(pred_runs) != len(true_runs):
        raise ValueError("pred_runs and true_runs must have equal length")
    if not len(pred_runs):
        raise ValueError("no runs given")
    vals = []
    excluded = 0
    for yhat, y in zip(pred_runs, true_runs):
        yhat = np.asarray(yhat, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if yhat.shape != y.shape:
            raise ValueError("prediction/truth shape mismatch")
        denom = float(np.linalg.norm(y))
        if denom == 0.0:
            excluded += 1
            continue
        vals.append(float(np.linalg.norm(yhat - y)) / denom)
    if excluded:
        warnings.warn(f"excluded {excluded} run(s) with zero-norm truth from the RMSE mean")
    if not vals:
        raise ValueError("every run had zero-norm truth")
    return 100.0 * float(np.mean(vals))


class LocalLinearizationPredictor:
    """Baseline: integrate the plant's affine expansion about one point.

    The model is  xdot = c + A (x - xp) + B (u - u0)  with central-difference
    Jacobians, rolled out with the same RK4 stepper and step size as the
    truth simulation.  With ``nominal=None`` the expansion point xp is each
    rollout's own initial state; passing a fixed ``nominal`` freezes the
    expansion there, which is how the robustness benchmark uses it (one
    predictor built for the range's nominal initial state, evaluated across
    all drawn ones).
    """

    def __init__(self, plant, dt: float, u0=None, h_fd: float = 1e-6, nominal=None):
        self.plant = plant
        self.dt = dt
        self.u0 = np.zeros(plant.input_dim) if u0 is None else np.asarray(u0, float)
        self.h_fd = h_fd
        self.nominal = None if nominal is None else np.asarray(nominal, float)

    def predict(self, x0, U) -> np.ndarray:
        x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
        xp = x0 if self.nominal is None else self.nominal
        A, B, c = linearize(self.plant.rhs, xp, self.u0, self.h_fd)
        u0 = self.u0

        def model(x, u, t):
            return c + A @ (x - xp) + B @ (np.asarray(u, float) - u0)

        return rk4_rollout(model, x0, U, self.dt)


# Nominal initial states the frozen local baseline is built for, keyed by
# range half-width; ranges without an entry scale the widest range's point.
LOCAL_BASELINE_NOMINALS = {1.0: (-0.6, 0.2), 0.5: (-0.4, 0.2)}


def local_baseline_nominal(half_width: float) -> np.ndarray:
    point = LOCAL_BASELINE_NOMINALS.get(float(half_width))
    if point is None:
        point = half_width * np.asarray(LOCAL_BASELINE_NOMINALS[1.0])
    return np.asarray(point, dtype=np.float64)


@dataclass
class RangeSpec:
    """One benchmark row: initial conditions from [-half_width, half_width]^n."""

    half_width: float
    horizon: float


@dataclass
class RangeResult:
    half_width: float
    horizon: float
    per_run: dict
    x0s: list
    resampled: int


@dataclass
class BenchmarkReport:
    """Per-method, per-range normalised RMSE results (percent)."""

    methods: list
    ranges: list
    n_runs: int
    dt: float
    seed: int
    examples: list = field(default_factory=list)

    def mean(self, method: str, range_index: int) -> float:
        return float(np.mean(self.ranges[range_index].per_run[method]))

    def aggregate_mean(self, method: str) -> float:
        return float(np.mean([self.mean(method, i) for i in range(len(self.ranges))]))

    def to_table_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            heads = [f"[-{r.half_width:g},{r.half_width:g}]" for r in self.ranges]
            fh.write("method," + ",".join(heads) + ",aggregate\n")
            for m in self.methods:
                row = [self.mean(m, i) for i in range(len(self.ranges))]
                cells = ",".join(repr(float(v)) for v in row)
                fh.write(f"{m},{cells},{self.aggregate_mean(m)!r}\n")

    def to_per_run_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("range_half_width,horizon,run,method,rmse_percent\n")
            for r in self.ranges:
                for m in self.methods:
                    for j, v in enumerate(r.per_run[m]):
                        fh.write(f"{r.half_width!r},{r.horizon!r},{j},{m},{float(v)!r}\n")

    def to_json(self, path) -> None:
        payload = {
            "seed": self.seed,
            "dt": self.dt,
            "n_runs": self.n_runs,
            "methods": self.methods,
            "ranges": [
                {
                    "half_width": r.half_width,
                    "horizon": r.horizon,
                    "resampled": r.resampled,
                    "x0s": r.x0s,
                    "per_run": {m: [_json_float(v) for v in vs] for m, vs in r.per_run.items()},
                    "mean": {m: _json_float(float(np.mean(vs))) for m, vs in r.per_run.items()},
                }
                for r in self.ranges
            ],
            "aggregate_mean": {m: _json_float(self.aggregate_mean(m)) for m in self.methods},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, allow_nan=False)
            fh.write("\n")


def _json_float(v: float):
    return float(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf")


def benchmark_prediction(
    plant,
    methods: dict,
    ranges,
    input_signal,
    n_runs: int = 50,
    dt: float = 0.01,
    seed: int = 0,
    workers: int = 1,
    max_resamples: int = 1000,
    keep_examples: bool = True,
) -> BenchmarkReport:
    """Compare multi-step predictors against the simulated truth.

    For each range, draws ``n_runs`` seeded initial states uniformly from the
    range's box, simulates the plant under the sampled input signal for the
    range's horizon, and scores every method's rollout with the normalised
    RMSE.  Initial states whose truth diverges within the horizon are redrawn
    (count reported per range); a method whose own rollout diverges scores
    infinity for that run.

    A method value may be a predictor (shared across ranges) or a callable
    RangeSpec -> predictor for baselines that are built per range.
    ``workers`` > 1 fans runs out over a thread pool; per-run substreams make
    the result identical to serial execution.
    """
    ranges = [r if isinstance(r, RangeSpec) else RangeSpec(*r) for r in ranges]
    method_names = list(methods)
    n = plant.state_dim

    def one_run(ri, r, j, U, range_methods):
        for attempt in range(max_resamples):
            rng = rng_stream(seed, ri, j, attempt)
            x0 = -r.half_width + 2.0 * r.half_width * rng.random(n)
            try:
                truth = rk4_rollout(plant.rhs, x0, U, dt)
            except IntegrationDiverged:
                continue
            scores = {}
            trajs = {}
            for name, pred in range_methods.items():
                try:
                    yhat = pred.predict(x0, U)
                    scores[name] = 100.0 * float(np.linalg.norm(yhat - truth) / np.linalg.norm(truth))
                    trajs[name] = yhat
                except IntegrationDiverged:
                    scores[name] = float("inf")
                    trajs[name] = None
            return x0, truth, scores, trajs, attempt
        raise RuntimeError(
            f"range +-{r.half_width}: could not draw a bounded trajectory in {max_resamples} tries"
        )

    results = []
    examples = []
    for ri, r in enumerate(ranges):
        K = round(r.horizon / dt)
        U = np.array([[float(input_signal(k * dt))] for k in range(K)])
        range_methods = {name: (m(r) if callable(m) else m) for name, m in methods.items()}
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(lambda j: one_run(ri, r, j, U, range_methods), range(n_runs)))
        else:
            runs = [one_run(ri, r, j, U, range_methods) for j in range(n_runs)]
        per_run = {m: [runs[j][2][m] for j in range(n_runs)] for m in method_names}
        resampled = int(sum(runs[j][4] for j in range(n_runs)))
        x0s = [runs[j][0].tolist() for j in range(n_runs)]
        results.append(RangeResult(r.half_width, r.horizon, per_run, x0s, resampled))
        if keep_examples:
            x0, truth, _, trajs, _ = runs[0]
            examples.append(
                {
                    "half_width": r.half_width,
                    "horizon": r.horizon,
                    "x0": x0,
                    "t": np.arange(1, K + 1) * dt,
                    "truth": truth,
                    "methods": trajs,
                    "inputs": U,
                }
            )
    return BenchmarkReport(method_names, results, n_runs, dt, seed, examples)


def save_predictor(pred: KoopmanPredictor, path) -> None:
    """Persist a fitted predictor with its embedded lifter; round-trip is bit-exact."""
    check_is_fitted(pred, "A_")
    lifter_meta, lifter_arrays = _lifter_state(pred.lifter_)
    meta = {
        "alpha": float(pred.alpha),
        "n_state": int(pred.n_state_),
        "n_input": int(pred.n_input_),
        "n_samples": int(pred.n_samples_),
        "training_residual": float(pred.training_residual_),
        "one_step_mse": float(pred.one_step_mse_),
        "lifter_meta": lifter_meta,
    }
    arrays = {"A": pred.A_, "B": pred.B_, "C": pred.C_}
    arrays.update({f"lifter.{k}": v for k, v in lifter_arrays.items()})
    write_blob(path, "predictor", meta, arrays)


def load_predictor(path) -> KoopmanPredictor:
    meta, arrays = read_blob(path, "predictor")
    lifter_arrays = {
        k[len("lifter.") :]: v for k, v in arrays.items() if k.startswith("lifter.")
    }
    lifter = _lifter_from_state(meta["lifter_meta"], lifter_arrays)
    pred = KoopmanPredictor(lifter=lifter, alpha=meta["alpha"])
    pred.lifter_ = lifter
    pred.A_ = arrays["A"]
    pred.B_ = arrays["B"]
    pred.C_ = arrays["C"]
    pred.n_state_ = int(meta["n_state"])
    pred.n_input_ = int(meta["n_input"])
    pred.n_samples_ = int(meta["n_samples"])
    pred.training_residual_ = float(meta["training_residual"])
    pred.one_step_mse_ = float(meta["one_step_mse"])
    return pred
