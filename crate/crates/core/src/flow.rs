//! Dense displacement fields.

use crate::error::{shape_err, Error, Result};

/// Per-pixel displacement `(dx, dy)` in pixels, `x` rightward and `y`
/// downward. Forward convention: the pixel at `p` in frame `t` lands at
/// `p + flow(p)` in frame `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, [0.0, 0.0])
    }

    pub fn uniform(height: usize, width: usize, v: [f64; 2]) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(height * width, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: [f64; 2]) {
        self.data[y * self.width + x] = v;
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|[dx, dy]| [-dx, -dy]).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|[dx, dy]| [c * dx, c * dy]).collect(),
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(|[dx, dy]| dx.hypot(*dy)).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|[dx, dy]| dx.is_finite() && dy.is_finite())
    }

    pub fn flip_horizontal(&self) -> FlowField {
        FlowField::from_fn(self.height, self.width, |y, x| {
            let [dx, dy] = self.get(y, self.width - 1 - x);
            [-dx, dy]
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<FlowField> {
        if top + height > self.height || left + width > self.width {
            return Err(shape_err(
                format!("crop within {}x{}", self.height, self.width),
                format!("{height}x{width}@({top},{left})"),
            ));
        }
        Ok(FlowField::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }
}

/// Sums a sequence of frame-to-frame flows pixelwise into the aggregated
/// motion used for guidance.
pub fn aggregate_flow(flows: &[FlowField]) -> Result<FlowField> {
    let first = flows
        .first()
        .ok_or_else(|| Error::Domain("aggregate_flow needs at least one field".into()))?;
    let mut out = FlowField::zeros(first.height, first.width);
    for f in flows {
        if f.dims() != first.dims() {
            return Err(shape_err(
                format!("{}x{}", first.height, first.width),
                format!("{}x{}", f.height, f.width),
            ));
        }
        for (acc, v) in out.data.iter_mut().zip(&f.data) {
            acc[0] += v[0];
            acc[1] += v[1];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn six_unit_fields_sum_to_six() {
        let flows = vec![FlowField::uniform(3, 4, [1.0, 0.0]); 6];
        let agg = aggregate_flow(&flows).unwrap();
        assert!(agg.data().iter().all(|v| *v == [6.0, 0.0]));
    }

    #[test]
    fn oscillation_cancels() {
        let flows = vec![
            FlowField::uniform(2, 2, [1.0, 0.0]),
            FlowField::uniform(2, 2, [-1.0, 0.0]),
        ];
        let agg = aggregate_flow(&flows).unwrap();
        assert!(agg.data().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn matches_accumulation_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w, n) = (5, 7, 4);
        let flows: Vec<FlowField> = (0..n)
            .map(|_| FlowField::from_fn(h, w, |_, _| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]))
            .collect();
        let agg = aggregate_flow(&flows).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut sx = 0.0;
                let mut sy = 0.0;
                for f in &flows {
                    sx += f.get(y, x)[0];
                    sy += f.get(y, x)[1];
                }
                assert_eq!(agg.get(y, x), [sx, sy]);
            }
        }
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(aggregate_flow(&[]).is_err());
        let flows = vec![FlowField::zeros(2, 2), FlowField::zeros(2, 3)];
        assert!(matches!(aggregate_flow(&flows), Err(Error::Shape { .. })));
    }
}
