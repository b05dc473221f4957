from ._fous import (
    apply_attention,
    assign_pseudo_labels,
    balance_factor,
    cluster_contrastive_loss,
    consistency_regularizer,
    cross_channel_covariance,
    cross_spatial_covariance,
    evaluate_detection,
    image_domain_loss,
    init_source_prototypes,
    instance_domain_loss,
    instance_invariance_loss,
    iou,
    sample_random_prototypes,
    total_loss,
)

__all__ = [
    "apply_attention",
    "assign_pseudo_labels",
    "balance_factor",
    "cluster_contrastive_loss",
    "consistency_regularizer",
    "cross_channel_covariance",
    "cross_spatial_covariance",
    "evaluate_detection",
    "image_domain_loss",
    "init_source_prototypes",
    "instance_domain_loss",
    "instance_invariance_loss",
    "iou",
    "sample_random_prototypes",
    "total_loss",
]
