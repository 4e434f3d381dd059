"""Lifted linear predictors for controlled nonlinear systems, plus MPC.

The pipeline: collect snapshot pairs from a simulated plant, lift states
with a random-feature dictionary, fit a linear one-step predictor by ridge
regression, and either benchmark its multi-step predictions or drop it into
a condensed box-constrained QP model-predictive controller.
"""

from .data import SnapshotDataset, collect_snapshots, export_csv, load_dataset, save_dataset
from .koopman import (
    BenchmarkReport,
    KoopmanPredictor,
    LocalLinearizationPredictor,
    RangeSpec,
    TrainResult,
    benchmark_prediction,
    fit_edmd,
    load_predictor,
    local_baseline_nominal,
    rmse_percent,
    save_predictor,
    train_grown,
)
from .lifting import BlsLifting, ThinPlateRbfLifting, get_activation, load_lifter, save_lifter
from .mpc import (
    ClosedLoopLog,
    MpcConfig,
    build_qp,
    condense,
    run_receding_horizon,
    select_outputs,
    solve_box_qp,
)
from .numerics import (
    FactorizationFailed,
    IntegrationDiverged,
    linearize,
    ridge_right_solve,
    rk4_rollout,
    rk4_step,
    rng_stream,
)
from .systems import Dsrv, DsrvParameters, SquareWave, VanDerPol, make_plant

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport",
    "BlsLifting",
    "ClosedLoopLog",
    "Dsrv",
    "DsrvParameters",
    "FactorizationFailed",
    "IntegrationDiverged",
    "KoopmanPredictor",
    "LocalLinearizationPredictor",
    "MpcConfig",
    "RangeSpec",
    "SnapshotDataset",
    "SquareWave",
    "ThinPlateRbfLifting",
    "TrainResult",
    "VanDerPol",
    "benchmark_prediction",
    "build_qp",
    "collect_snapshots",
    "condense",
    "export_csv",
    "fit_edmd",
    "get_activation",
    "linearize",
    "load_dataset",
    "load_lifter",
    "load_predictor",
    "local_baseline_nominal",
    "make_plant",
    "ridge_right_solve",
    "rk4_rollout",
    "rk4_step",
    "rmse_percent",
    "rng_stream",
    "run_receding_horizon",
    "save_dataset",
    "save_lifter",
    "save_predictor",
    "select_outputs",
    "solve_box_qp",
    "train_grown",
]
