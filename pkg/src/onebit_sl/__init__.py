"""Supervised-learning detection for multihop relay uplinks with one-bit ADCs."""
from .dataset import LabelledDataset, collect_training, dump_dataset, load_dataset
from .detectors import (
    BernoulliParams,
    CentroidParams,
    FitError,
    GaussianParams,
    detect_bernoulli,
    detect_emld,
    detect_mahalanobis,
    detect_mcd,
    detect_mmd,
    fit_bernoulli,
    fit_centroid,
    fit_gaussian,
)
from .forest import ClusterForest, build_forest, build_tree, complexity_estimate, detect_lsl, search_forest
from .netsim import (
    ChannelRealization,
    ConstellationSet,
    SystemConfig,
    class_decode,
    class_encode,
    draw_channel,
    make_constellation,
    modulate,
    qpsk,
    transmit,
)

__version__ = "0.1.0"
