//! Semi-supervised mixtures, divergences and diameters, synthetic domains,
//! and the dataset file format.

mod dataset;
mod divergence;
mod mixture;
mod synthetic;

pub use dataset::{
    load_csv, load_domains, mask_labels, read_csv, write_csv, DatasetSplit, Domain, UNLABELED,
};
pub use divergence::{
    empirical_diameter, expected_conditional_kl, feature_diameter, kl_divergence,
};
pub use mixture::{mix, pseudo_label, MixtureSpec};
pub use synthetic::{
    gen_finite_joint, gen_two_moons_domains, gen_two_moons_labeled, random_simplex, two_moons,
    FiniteJointSpec, MOONS_CENTER,
};
