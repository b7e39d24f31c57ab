//! Diagnostics: per-class sample grids, t-SNE maps of generated features and
//! decision-boundary maps over a 2-D feature space.

mod boundary;
mod features;
mod grid;
mod plot;
mod tsne;

pub use boundary::{classify_point, decision_boundary, decision_boundary_for, write_boundary_csv, write_boundary_png, BoundaryMap};
pub use features::{export_features, FeatureLayer};
pub use grid::{render_sample_grid, SampleGrid};
pub use plot::{class_color, write_gray_png, write_rgb_png, write_scatter_png};
pub use tsne::{tsne_embed, write_embedding_csv, Embedding2D, EmbeddingMethod, TsneConfig};
