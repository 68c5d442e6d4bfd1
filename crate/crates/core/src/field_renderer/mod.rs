//! The neural scene representation and its optimization: SDF/color voxel
//! grids with a small appearance decoder, SDF volume rendering, the full
//! mapping loss suite, and momentum-SGD map updates.

mod losses;
mod optim;
mod params;
mod render;

pub use losses::{
    loss_depth_continuity, loss_depth_continuity_grad, loss_depth_correspondence,
    loss_depth_correspondence_grad, loss_distortion, loss_distortion_grad, loss_eikonal,
    loss_eikonal_grad, loss_rgb, loss_rgb_grad, loss_sdf, loss_sdf_grad, total_loss,
    ContinuityForm, LossError, LossTerms, LossWeights, Neighborhood,
};
pub use optim::{optimize_map, render_view, MapOptimConfig, OptimizeError, TraceRow};
pub use params::{query_field, Decoder, FieldParams, SdfInit, TriLerp, DOMAIN_HALF};
pub use render::{
    backward_ray, coarse_weights, forward_ray, render_ray, sdf_to_occupancy, FieldGradients,
    RayTape, RenderOutput,
};
