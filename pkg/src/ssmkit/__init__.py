"""Spatial self-similarity toolkit for patch-token feature maps.

Quantifies how strongly an encoder's patch tokens are spatially organized
(nearby patches more alike than distant ones), applies structure-accentuating
transforms, and correlates the metrics against external quality scores.
"""

__version__ = "0.1.0"

from .analysis import (
    CorrelationResult,
    LineFit,
    ScoreSeries,
    correlate_reports,
    linfit,
    pearson,
    read_scores_csv,
)
from .feature_io import (
    ChannelVector,
    NpyFormatError,
    PatchGrid,
    SegmentMask,
    load_channel_vector,
    load_mask,
    load_patch_grid,
    read_npy,
    save_channel_vector,
    save_mask,
    save_patch_grid,
    write_npy,
)
from .metrics import (
    METRIC_NAMES,
    MetricConfig,
    MetricReport,
    TripletSample,
    aggregate_metric,
    cds,
    compute_metric,
    lds,
    rmsc,
    sample_triplets,
    srss,
)
from .similarity import (
    Correlogram,
    DistanceClassIndex,
    SimilarityMatrix,
    correlogram,
    correlogram_csv,
    cosine_kernel,
    distance_classes,
    normalize_tokens,
    write_correlogram_csv,
)
from .synthetic import (
    SyntheticSpec,
    block_mask,
    block_partition,
    clustered_suite,
    derive_seed,
    generate,
    global_direction,
    overlay_suite,
    sweep,
)
from .transforms import (
    ConvWeights,
    MlpWeights,
    NormalizeConfig,
    alignment_loss_and_grad,
    conv_project,
    init_conv_weights,
    init_mlp_weights,
    load_weights,
    mean_patch_vector,
    mix_global,
    mlp_project,
    save_weights,
    spatial_normalize,
)
