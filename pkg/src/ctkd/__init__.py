"""Multi-stage progressive knowledge distillation for streaming conformer-transducer models."""

from .diffcore import Tape, Tensor, backpropagate, check_gradients, no_grad
from .distill import DistillationConfig, LossBreakdown, kd_loss, total_loss
from .evaluation import beam_decode, evaluate_corpus, greedy_decode, sentence_error_rate, word_error_rate
from .frontend import (
    AugmentPolicy,
    FrontendConfig,
    ToyCorpusSpec,
    compute_mfcc,
    generate_toy_corpus,
    spec_augment,
)
from .model import (
    Checkpoint,
    DecoderConfig,
    EncoderConfig,
    Model,
    ModelConfig,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import PipelineConfig, StageConfig, StageReport, compression_percent, run_pipeline
from .rnnt import LossResult, enumerate_alignments_oracle, rnnt_loss
from .train import ScheduleConfig, TrainConfig, learning_rate, optimizer_step, run_training

__version__ = "0.1.0"
