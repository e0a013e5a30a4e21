"""Autoregressive-rollout training and evaluation for small time-series forecasters."""

from .autodiff import (
    GradCheckReport,
    Tape,
    Tensor,
    absolute,
    add,
    concat,
    finite_diff_oracle,
    layer_norm,
    make_tensor,
    matmul,
    max_relative_error,
    mean_all,
    mul,
    relu,
    scale,
    slice_axis,
    softmax,
    stop_gradient,
    sub,
    sum_all,
    transpose,
)
from .data import SeriesDataset, SeriesWindow, gen_ar_process, gen_sinusoid, load_csv, window_iter
from .evaluation import EvalReport, compare, evaluate, export_curve, write_report_json
from .models import (
    Dims,
    Forecaster,
    NormState,
    apply_norm,
    forecast,
    init_forecaster,
    invert_norm,
    param_count,
)
from .rollout import (
    BlockErrors,
    RolloutConfig,
    RolloutPrediction,
    ar_loss,
    block_error,
    check_gradients,
    discounted_loss,
    loss_magnitude_factor,
    mse_loss,
    rollout_predict,
)
from .training import (
    AdamState,
    Checkpoint,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    EpochStats,
    TrainConfig,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)

__version__ = "0.1.0"
