use super::config::{AdapterConfig, Scaling};
use super::preset::AdapterPlacement;
use crate::vit::BackboneConfig;

/// Number of classes of the 19 VTAB-1k tasks.
pub const VTAB_CLASSES: [(&str, usize); 19] = [
    ("cifar100", 100),
    ("caltech101", 102),
    ("dtd", 47),
    ("flowers102", 102),
    ("pets", 37),
    ("svhn", 10),
    ("sun397", 397),
    ("camelyon", 2),
    ("eurosat", 10),
    ("resisc45", 45),
    ("retinopathy", 5),
    ("clevr-count", 8),
    ("clevr-dist", 6),
    ("dmlab", 6),
    ("kitti-dist", 4),
    ("dsprites-loc", 16),
    ("dsprites-ori", 16),
    ("smallnorb-azim", 18),
    ("smallnorb-elev", 9),
];

/// Mean class count over VTAB tasks (940 / 19).
pub fn vtab_average_classes() -> f64 {
    let total: usize = VTAB_CLASSES.iter().map(|(_, c)| c).sum();
    total as f64 / VTAB_CLASSES.len() as f64
}

/// Parameters of a single adapter with hidden size `d`.
pub fn adapter_params(config: &AdapterConfig, d: usize) -> usize {
    let r = config.rank;
    let mut n = 2 * d * r;
    if config.use_bias {
        n += r + d;
    }
    if config.use_layernorm {
        n += 2 * d;
    }
    n + match config.scaling {
        Scaling::LearnedLayer => 1,
        Scaling::LearnedChannel => d,
        Scaling::None | Scaling::Fixed(_) => 0,
    }
}

/// Linear classifier `d c + c`. Takes a real class count so averages can be used.
pub fn classifier_params(d: usize, classes: f64) -> f64 {
    (d as f64 + 1.0) * classes
}

/// Trainable parameters added on top of a frozen backbone, excluding the classifier.
pub fn placement_params(backbone: &BackboneConfig, placement: &AdapterPlacement) -> usize {
    let d = backbone.hidden_dim;
    let n = backbone.num_layers;
    let per_layer = if placement.attention { 2 } else { 1 };
    let mut total = n * per_layer * adapter_params(&placement.adapter, d);
    if placement.tune_backbone_norms {
        total += n * 2 * 2 * d + 2 * d;
    }
    total
}

/// Exact trainable count of an adapted model with `classes` outputs.
pub fn count_trainable_params(
    backbone: &BackboneConfig,
    placement: Option<&AdapterPlacement>,
    classes: usize,
) -> usize {
    let d = backbone.hidden_dim;
    placement.map_or(0, |p| placement_params(backbone, p)) + d * classes + classes
}

/// Trainable count in millions with a fractional (average) class count.
pub fn trainable_millions(backbone: &BackboneConfig, placement: Option<&AdapterPlacement>, classes: f64) -> f64 {
    let extra = placement.map_or(0, |p| placement_params(backbone, p)) as f64;
    (extra + classifier_params(backbone.hidden_dim, classes)) / 1e6
}
