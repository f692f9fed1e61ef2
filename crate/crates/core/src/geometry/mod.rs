//! Point clouds, normalization, spatial indexing and SE(3) math.

mod cloud;
pub mod io;
mod kdtree;
mod normalize;
mod transform;

pub use cloud::{Point, PointCloud};
pub use kdtree::KdIndex;
pub use normalize::{
    denormalize_transform, normalize_transform, preprocess, random_subsample, voxel_downsample, NormalizationRecord,
    ScaleSource,
};
pub use transform::{
    check_rotation, matrix_to_quat, quat_mul, quat_to_matrix, quat_to_matrix_vjp,
    quat_to_rotation_vector, rotation_vector_to_quat, skew, so3_exp, so3_left_jacobian,
    Quaternion, RigidTransform, TransformRecord,
};
