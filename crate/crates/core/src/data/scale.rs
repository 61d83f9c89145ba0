use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel values divided by 255.
pub fn scale_pixels(images: &Tensor) -> Tensor {
    images.map(|v| v / 255.0)
}

/// Per-feature min-max statistics of a `[n × features]` training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

fn cols(x: &Tensor) -> Result<usize> {
    match x.dims() {
        &[_, f] => Ok(f),
        other => Err(Error::Shape(format!("scaler expects a 2-D matrix, got {other:?}"))),
    }
}

impl MinMaxScaler {
    pub fn fit(train: &Tensor) -> Result<Self> {
        let f = cols(train)?;
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for row in train.data().chunks(f) {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(f64::from(v));
                max[j] = max[j].max(f64::from(v));
            }
        }
        for j in 0..f {
            if max[j] == min[j] {
                log::warn!("feature {j} is constant ({}) in training data; it scales to 0", min[j]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let f = cols(x)?;
        if f != self.features() {
            return Err(Error::Dimension {
                op: "min-max scaling",
                left: x.dims().to_vec(),
                right: vec![self.features()],
            });
        }
        Ok(f)
    }

    /// `(x - min) / (max - min)`; constant features become 0.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.check(x)?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % f;
                let range = self.max[j] - self.min[j];
                if range == 0.0 {
                    0.0
                } else {
                    ((f64::from(v) - self.min[j]) / range) as f32
                }
            })
            .collect();
        Tensor::new(x.dims().to_vec(), data)
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.check(x)?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % f;
                (f64::from(v) * (self.max[j] - self.min[j]) + self.min[j]) as f32
            })
            .collect();
        Tensor::new(x.dims().to_vec(), data)
    }
}

/// Fit on `train` and scale it together with every tensor in `others`.
pub fn fit_apply_minmax(train: &Tensor, others: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(train)?;
    let scaled = scaler.transform(train)?;
    let rest = others.iter().map(|o| scaler.transform(o)).collect::<Result<_>>()?;
    Ok((scaled, rest, scaler))
}

/// Area-average resampling of `[n × h × w × c]` images to `[n × oh × ow × c]`.
/// Each output pixel averages the input area it covers, with fractional
/// overlap weights at the edges.
pub fn resample_area(images: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (n, h, w, c) = match images.dims() {
        &[n, h, w, c] => (n, h, w, c),
        &[n, h, w] => (n, h, w, 1),
        other => return Err(Error::Shape(format!("resample expects images, got {other:?}"))),
    };
    if oh == 0 || ow == 0 {
        return Err(Error::Shape("resample target must be non-empty".into()));
    }
    let weights = |inp: usize, out: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut ws = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < inp {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        ws.push((i, overlap / scale));
                    }
                    i += 1;
                }
                ws
            })
            .collect()
    };
    let (wy, wx) = (weights(h, oh), weights(w, ow));
    let src = images.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for img in 0..n {
        let base = img * h * w * c;
        for ys in &wy {
            for xs in &wx {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for &(y, a) in ys {
                        for &(x, b) in xs {
                            acc += a * b * f64::from(src[base + (y * w + x) * c + ch]);
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    let mut dims = vec![n, oh, ow];
    if images.dims().len() == 4 {
        dims.push(c);
    }
    Tensor::new(dims, out)
}
