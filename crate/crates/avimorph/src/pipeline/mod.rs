//! The three-stage capture pipeline: per-instance alignment, species
//! mean deformation, individual blend-shape basis, PCA re-learning and
//! multi-species model assembly.

mod align;
mod objective;
mod pca;
mod species;
mod synthdb;

pub use align::{align_instance, default_stages, evaluate_fit, fit_model_to_instance, FitOutcome};
pub use objective::{AlignObjective, BasisObjective, MeanObjective};
pub use pca::{
    build_multispecies, build_species_model, mean_only_species_model, relearn_pca,
};
pub use species::{fit_individuals, fit_species_mean, BasisFitResult, MeanFitResult};
pub use synthdb::{build_synth_db, init_pose, DbEntry, SynthDb};

pub use crate::instance::{AnnotatedInstance, Keypoint2D};
pub use crate::model::{MultiSpeciesModel, PcaModel, ShapeModel, SpeciesModel};
