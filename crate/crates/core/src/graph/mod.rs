//! Template meshes, graph operators and the synthetic data generator.

mod adjacency;
mod coarsening;
mod dataset;
mod kinematics;
mod raster;
mod template;
mod token_graph;

pub use adjacency::{build_normalized_adjacency, NormalizedAdjacency};
pub use coarsening::{build_coarsening, Coarsening};
pub use dataset::{generate_dataset, generate_sample, read_dataset, write_dataset, DataSpec, MeshSample};
pub use kinematics::{forward_kinematics, log_rotation, rodrigues, Posed};
pub use raster::{pixel_x, pixel_y, project_weak_perspective, rasterize_silhouette, Camera, Image, SPLAT_SIGMA_PX};
pub use template::{generate_synthetic_template, points_to_obj, TemplateMesh, TemplateSpec, Vec3};
pub use token_graph::{build_token_graph, nearest_coarse_vertex, TokenLayout};
