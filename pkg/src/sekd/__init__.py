"""Teacher-student knowledge distillation toolkit for causal speech enhancement."""

from .backbone import (
    BackboneConfig,
    FeatureMap,
    TapBundle,
    build_model,
    count_params,
    enhance,
    forward,
)
from .dataset import (
    Batch,
    ManifestEntry,
    MixManifest,
    build_manifest,
    load_batch,
    mix_at_snr,
    read_manifest,
    synthesize_noise,
    synthesize_speech,
    write_manifest,
)
from .distill import (
    DistillState,
    SimilarityMap,
    StrategyId,
    calibration_weights,
    d_prop,
    embed,
    freq_similarity_map,
    intra_inter_loss,
    residual_fuse_step,
    set_representative,
    tfckd_pair_loss,
    time_similarity_map,
    total_student_loss,
)
from .dsp import (
    ComplexSpectrogram,
    MrstftConfig,
    StftConfig,
    apply_crm,
    istft,
    mrstft_loss,
    si_snr,
    stft,
)
from .trainer import TrainConfig, train_student, train_teacher, validate

__version__ = "0.1.0"
