use super::layer::LayerKind;
use super::Tensor;
use crate::geometry::BBox;
use crate::{Error, Result};

/// Max pooling of image-space regions onto a fixed `size x size` grid of a
/// single-image feature map.
#[derive(Clone, Debug)]
pub struct RoiPool {
    pub output_size: usize,
    pub spatial_scale: f64,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl RoiPool {
    pub fn new(output_size: usize, spatial_scale: f64) -> Self {
        Self {
            output_size,
            spatial_scale,
            cache: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::RoiPool
    }

    /// Feature-cell span `[start, end)` covered by `[lo, hi)` in image space.
    fn span(&self, lo: f64, hi: f64, extent: usize) -> (usize, usize) {
        let start = ((lo * self.spatial_scale).floor().max(0.0) as usize).min(extent - 1);
        let end = ((hi * self.spatial_scale).ceil().max(0.0) as usize).min(extent);
        (start, end.max(start + 1))
    }

    pub fn forward(&mut self, feature: &Tensor, rois: &[BBox]) -> Result<Tensor> {
        let (n, c, h, w) = feature.dims4("roi_pool")?;
        if n != 1 {
            return Err(Error::shape("roi_pool", "[1, C, H, W]", format!("{:?}", feature.shape())));
        }
        if rois.is_empty() {
            return Err(Error::EmptyInput("roi_pool needs at least one region".into()));
        }
        let p = self.output_size;
        let x = feature.data();
        let mut out = Vec::with_capacity(rois.len() * c * p * p);
        let mut argmax = Vec::with_capacity(rois.len() * c * p * p);
        for roi in rois {
            roi.validate()?;
            let (y0, y1) = self.span(roi.y_min, roi.y_max, h);
            let (x0, x1) = self.span(roi.x_min, roi.x_max, w);
            let (rh, rw) = (y1 - y0, x1 - x0);
            for ch in 0..c {
                let plane = ch * h * w;
                for py in 0..p {
                    let ys = y0 + py * rh / p;
                    let ye = (y0 + ((py + 1) * rh).div_ceil(p)).max(ys + 1);
                    for px in 0..p {
                        let xs = x0 + px * rw / p;
                        let xe = (x0 + ((px + 1) * rw).div_ceil(p)).max(xs + 1);
                        let mut best = plane + ys * w + xs;
                        for yy in ys..ye {
                            for xx in xs..xe {
                                let idx = plane + yy * w + xx;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        self.cache = Some((feature.shape().to_vec(), argmax));
        Tensor::new(vec![rois.len(), c, p, p], out)
    }

    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("roi_pool backward called before forward".into()))?;
        let mut dx = Tensor::zeros(&shape);
        if grad_output.numel() != argmax.len() {
            return Err(Error::shape(
                "roi_pool backward",
                argmax.len(),
                format!("{:?}", grad_output.shape()),
            ));
        }
        for (&g, &i) in grad_output.data().iter().zip(&argmax) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_pools_to_constant() {
        let mut pool = RoiPool::new(3, 0.25);
        let f = Tensor::full(&[1, 2, 8, 8], 1.5);
        let rois = [
            BBox::new(0.0, 0.0, 32.0, 32.0).unwrap(),
            BBox::new(5.0, 9.0, 6.0, 10.0).unwrap(),
        ];
        let y = pool.forward(&f, &rois).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn gradient_routes_to_argmax() {
        let mut pool = RoiPool::new(1, 1.0);
        let f = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let y = pool.forward(&f, &[BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()]).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = pool.backward(&Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(g.data()[4], 2.0);
        assert_eq!(g.sum(), 2.0);
    }
}
