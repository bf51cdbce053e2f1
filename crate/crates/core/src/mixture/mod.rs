//! Learning a latent class mixture from three conditionally independent
//! views: kernel and categorical backends, posteriors, rank selection and
//! label alignment.

mod align;
mod estimate;
pub mod kernel;
mod multiview;
mod rank;
mod symmetric;

pub use align::{align_exact, align_permutation, Alignment, MAX_EXHAUSTIVE_K};
pub use estimate::{
    map_assign, posteriors_from_densities, priors_from_lambdas, BackendKind, KernelView,
    MixtureDiagnostics, MixtureEstimate, PosteriorFlavor, PosteriorMatrix, ViewInput, ViewModel,
    DEFAULT_DENSITY_FLOOR, PRIOR_FLOOR,
};
pub(crate) use estimate::normalize_row;
pub use kernel::{Bandwidth, KernelFamily, KernelSpec, RbfKernel};
pub use multiview::{fit_discrete_multiview, fit_multiview};
pub use rank::{scree, scree_discrete, Scree, NOISE_MULTIPLE, select_rank, singular_spectrum};
pub use symmetric::fit_symmetric_spectral;
