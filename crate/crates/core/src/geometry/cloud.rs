use crate::geometry::GeometryError;
use crate::graph::Tensor;
use crate::scalar::Real;

/// Points with optional colors in `[0,1]`, integer labels and per-point
/// features. All present arrays share the leading dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    pub positions: Vec<[T; 3]>,
    pub colors: Option<Vec<[T; 3]>>,
    pub labels: Option<Vec<usize>>,
    pub features: Option<Tensor<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn from_positions(positions: Vec<[T; 3]>) -> Self {
        Self {
            positions,
            colors: None,
            labels: None,
            features: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.len();
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| !p.iter().all(|x| x.is_finite()))
        {
            return Err(GeometryError::NonFinite { index: i });
        }
        let check = |field, actual| {
            if actual != n {
                Err(GeometryError::LengthMismatch {
                    field,
                    expected: n,
                    actual,
                })
            } else {
                Ok(())
            }
        };
        if let Some(c) = &self.colors {
            check("colors", c.len())?;
        }
        if let Some(l) = &self.labels {
            check("labels", l.len())?;
        }
        if let Some(f) = &self.features {
            check("features", f.rows())?;
        }
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        // A tensor cannot have zero rows, so an empty subset drops features.
        let features = self.features.as_ref().filter(|_| !indices.is_empty()).map(|f| {
            let c = f.cols();
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(f.row(i));
            }
            Tensor::new(&[indices.len(), c], data).expect("subset shape")
        });
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            features,
        }
    }
}
