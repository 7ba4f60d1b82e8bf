//! Built-in objective surfaces.

mod dataset;
mod mixture;
mod quadratic;

pub use dataset::{make_blobs, SyntheticDataset};
pub use mixture::{kl_gauss, mixture_loss, Gauss2Mixture, MixtureComponent, MixtureSurface, SIGMA_FLOOR};
pub use quadratic::{make_quadratic, QuadraticSpec, QuadraticSurface};
