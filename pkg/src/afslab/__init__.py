"""Replay-based online class-incremental learning with adaptive focus shifting."""

from .losses import (
    LossConfig,
    LossOutput,
    afs_loss,
    ce_loss,
    classify_difficulty,
    focal_loss,
    lsr_loss,
    rfl_loss,
    rfl_weight,
    softmax_stable,
    virtual_teacher,
    vkd_loss,
)
from .memory import MemoryBuffer, class_histogram, random_retrieve, reservoir_update
from .metrics import (
    AccuracyMatrix,
    DiagnosticsRecord,
    average_accuracy,
    average_forgetting,
    average_intransigence,
    bias_diagnostics,
    confidence_interval,
)
from .model import (
    NetworkSpec,
    NetworkState,
    forward,
    init_network,
    load_checkpoint,
    predict,
    save_checkpoint,
    sgd_step,
)
from .stream import (
    Dataset,
    Sample,
    StreamBatch,
    TaskSplit,
    augment,
    batches,
    gen_synthetic,
    load_idx,
    split_tasks,
    task_streams,
    task_test_sets,
    write_idx,
)
from .trainer import (
    RunRecord,
    TrainConfig,
    evaluate,
    review_pass,
    train_ablation,
    train_afs,
    train_er_baseline,
    train_offline,
    train_reference,
)

__version__ = "0.1.0"
