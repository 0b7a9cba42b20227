use crate::error::{Error, Result};
use crate::tensor::{ops, Tensor};

/// Binary per-cell fixation indicator `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixationMap {
    map: Tensor,
}

impl FixationMap {
    pub fn empty(height: usize, width: usize) -> Self {
        FixationMap {
            map: Tensor::zeros(&[height, width]),
        }
    }

    /// Map with a one at each `(row, col)`; duplicates collapse.
    pub fn from_cells(height: usize, width: usize, cells: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = FixationMap::empty(height, width);
        for (r, c) in cells {
            if r >= height || c >= width {
                return Err(Error::Dimension(format!(
                    "cell ({r}, {c}) outside a {height}x{width} map"
                )));
            }
            out.map.data_mut()[r * width + c] = 1.0;
        }
        Ok(out)
    }

    /// Accepts `[H, W]` or `[H, W, 1]` tensors holding only zeros and ones.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = t.map_dims()?;
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dimension("fixation maps must be binary".into()));
        }
        Ok(FixationMap {
            map: t.reshape(&[h, w])?.detached(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.map.shape()[0], self.map.shape()[1])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.map
    }

    pub fn count(&self) -> usize {
        self.map.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn is_fixated(&self, index: usize) -> bool {
        self.map.data()[index] == 1.0
    }

    /// Flat indices of fixated cells in row-major order.
    pub fn fixated_indices(&self) -> Vec<usize> {
        (0..self.map.len()).filter(|&i| self.is_fixated(i)).collect()
    }

    pub fn union(&self, other: &FixationMap) -> Result<FixationMap> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension("fixation maps of different sizes".into()));
        }
        let (h, w) = self.dims();
        let data = self
            .map
            .data()
            .iter()
            .zip(other.map.data())
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(FixationMap {
            map: Tensor::new(&[h, w], data)?,
        })
    }

    /// Reduces to a coarser grid: a coarse cell is fixated iff any fine
    /// cell that falls in it is.
    pub fn downsample(&self, height: usize, width: usize) -> Result<FixationMap> {
        let (h, w) = self.dims();
        if height == 0 || width == 0 || height > h || width > w {
            return Err(Error::Dimension(format!(
                "cannot reduce a {h}x{w} fixation map to {height}x{width}"
            )));
        }
        let cells = self
            .fixated_indices()
            .into_iter()
            .map(|i| ((i / w) * height / h, (i % w) * width / w));
        FixationMap::from_cells(height, width, cells)
    }
}

/// Non-negative map summing to one, `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyDistribution {
    map: Tensor,
}

impl SaliencyDistribution {
    /// Rescales a non-negative map with positive mass to unit sum.
    pub fn normalize(t: &Tensor) -> Result<Self> {
        let (h, w) = t.map_dims()?;
        if !t.all_finite() || t.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Dimension(
                "distribution entries must be finite and non-negative".into(),
            ));
        }
        let total = t.sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("map has no mass"));
        }
        Ok(SaliencyDistribution {
            map: t.reshape(&[h, w])?.map(|v| v / total),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.map.shape()[0], self.map.shape()[1])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.map
    }

    pub fn into_tensor(self) -> Tensor {
        self.map
    }

    /// Box-averages onto a coarser grid whose sides divide the current
    /// ones, then renormalizes.
    pub fn downsample(&self, height: usize, width: usize) -> Result<SaliencyDistribution> {
        let (h, w) = self.dims();
        if height == 0 || width == 0 || h % height != 0 || w % width != 0 {
            return Err(Error::Dimension(format!(
                "cannot box-average a {h}x{w} map to {height}x{width}"
            )));
        }
        let (fy, fx) = (h / height, w / width);
        let mut out = vec![0.0; height * width];
        for (i, &v) in self.map.data().iter().enumerate() {
            out[(i / w / fy) * width + (i % w) / fx] += v;
        }
        SaliencyDistribution::normalize(&Tensor::new(&[height, width], out)?)
    }
}

/// Corner-aligned bilinear resize of a 2-D map to `height × width`.
pub fn resize_map(map: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w) = map.map_dims()?;
    if (h, w) == (height, width) {
        return map.reshape(&[h, w]).map(|t| t.detached());
    }
    ops::resize_bilinear(&map.reshape(&[h, w, 1])?, height, width)?.reshape(&[height, width])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixation_maps_are_binary() {
        let p = FixationMap::from_cells(3, 4, [(0, 0), (0, 0), (2, 3)]).unwrap();
        assert_eq!(p.count(), 2);
        assert_eq!(p.fixated_indices(), vec![0, 11]);
        assert!(FixationMap::from_cells(3, 4, [(3, 0)]).is_err());
        assert!(FixationMap::from_tensor(&Tensor::full(&[2, 2], 0.5)).is_err());
    }

    #[test]
    fn fixation_downsample_keeps_presence() {
        let p = FixationMap::from_cells(96, 96, [(0, 0), (95, 95), (50, 7)]).unwrap();
        let d = p.downsample(12, 12).unwrap();
        assert_eq!(d.fixated_indices(), vec![0, 6 * 12, 143]);
    }

    #[test]
    fn distribution_downsample_preserves_unit_mass() {
        let q = SaliencyDistribution::normalize(&Tensor::from_fn(&[8, 8], |i| (i % 5) as f64)).unwrap();
        let d = q.downsample(2, 4).unwrap();
        assert!((d.tensor().sum() - 1.0).abs() < 1e-12);
        assert!(q.downsample(3, 4).is_err());
        assert!(SaliencyDistribution::normalize(&Tensor::zeros(&[2, 2])).is_err());
    }
}
