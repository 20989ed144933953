//! Images, manifests, augmentation, perturbations and the synthetic toy set.

pub mod augment;
mod image;
pub mod manifest;
pub mod ops;
pub mod perturb;
pub mod toy;

pub use augment::{augment, augment_with, AugmentProbs};
pub use image::Image;
pub use manifest::{load_manifest, parse_manifest, write_manifest, Manifest, Sample, Split};
pub use perturb::{perturb, Family, PerturbationSpec, SeverityTable};
pub use toy::{make_toy_dataset, make_toy_dataset_with, Rect, ToyDataset, ToyParams};
