use crate::geometry::{GeometryError, PointCloud};
use crate::scalar::{dist2, Real};

/// Sub-cloud inside a sphere plus the original index of every kept point.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop<T> {
    pub cloud: PointCloud<T>,
    pub indices: Vec<usize>,
}

/// Points with `|p - center| <= radius`, in original order.
///
/// An empty result is reported as [`GeometryError::EmptyCrop`] so samplers
/// can redraw the center.
pub fn sphere_crop<T: Real>(
    cloud: &PointCloud<T>,
    center: [T; 3],
    radius: T,
) -> Result<Crop<T>, GeometryError> {
    if !(radius > T::zero()) {
        return Err(GeometryError::InvalidArgument(format!(
            "crop radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let indices: Vec<usize> = cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p, &center) <= r2)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(GeometryError::EmptyCrop);
    }
    Ok(Crop {
        cloud: cloud.subset(&indices),
        indices,
    })
}
