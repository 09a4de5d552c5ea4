"""Low-rank-representation spatial pyramid matching for image classification.

Pipeline: dense SIFT -> k-means codebook -> per-descriptor encoding
(closed-form low-rank projection, or VQ / sparse coding / LLC baselines)
-> spatial pyramid pooling -> one-vs-rest linear SVM.
"""
from .classify import LinearModel, SvmParams, evaluate, svm_predict, svm_train
from .codebook import Codebook, KmeansParams, kmeans_train, sample_descriptors
from .dataset_io import DatasetIndex, GrayImage, SplitSpec, load_image, scan_dataset, split_dataset
from .encoding import (
    CodeMatrix,
    Encoder,
    EncoderConfig,
    Projection,
    build_projection,
    encode_llc,
    encode_lrr,
    encode_sc,
    encode_vq,
    threshold_codes,
)
from .features import DescriptorField, SiftParams, dense_grid, extract_dense_sift, sift_descriptor
from .pyramid import PyramidFeature, PyramidParams, assign_blocks, max_pool, sum_pool_histogram

__version__ = "0.1.0"
