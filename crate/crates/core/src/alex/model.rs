use serde::{Deserialize, Serialize};

use crate::index::Key;

/// `position ≈ slope · key + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("cannot train a model on zero points")]
    Empty,
    #[error("got {keys} keys but {positions} positions")]
    LengthMismatch { keys: usize, positions: usize },
}

impl LinearModel {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn raw(&self, key: Key) -> f64 {
        self.slope * key as f64 + self.intercept
    }

    /// Slot prediction inside a data node: round half up, clamped to `[0, capacity - 1]`.
    #[inline]
    pub fn predict_slot(&self, key: Key, capacity: usize) -> usize {
        debug_assert!(capacity >= 1);
        let p = (self.raw(key) + 0.5).floor();
        if p <= 0.0 {
            0
        } else if p >= (capacity - 1) as f64 {
            capacity - 1
        } else {
            p as usize
        }
    }

    /// Child routing inside an internal node: floor, clamped to `[0, slots - 1]`.
    ///
    /// Floor (rather than rounding) keeps routing stable when the slot array is doubled and the
    /// model scaled by two: a key in slot `j` lands in `2j` or `2j + 1`.
    #[inline]
    pub fn route(&self, key: Key, slots: usize) -> usize {
        let p = self.raw(key);
        if p <= 0.0 || p.is_nan() {
            0
        } else if p >= (slots - 1) as f64 {
            slots - 1
        } else {
            p as usize
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.slope *= factor;
        self.intercept *= factor;
    }

    /// Least-squares fit over `(key, position)` pairs produced by `points`, which is iterated twice.
    pub fn fit<I>(points: I) -> Result<Self, ModelError>
    where
        I: Iterator<Item = (Key, f64)> + Clone,
    {
        let (mut n, mut sum_x, mut sum_y) = (0usize, 0.0f64, 0.0f64);
        for (k, y) in points.clone() {
            n += 1;
            sum_x += k as f64;
            sum_y += y;
        }
        if n == 0 {
            return Err(ModelError::Empty);
        }
        let mean_x = sum_x / n as f64;
        let mean_y = sum_y / n as f64;
        let (mut sxx, mut sxy) = (0.0f64, 0.0f64);
        for (k, y) in points {
            let dx = k as f64 - mean_x;
            sxx += dx * dx;
            sxy += dx * (y - mean_y);
        }
        if n == 1 || sxx == 0.0 {
            return Ok(Self::new(0.0, mean_y));
        }
        let slope = (sxy / sxx).max(0.0);
        Ok(Self::new(slope, mean_y - slope * mean_x))
    }

    /// Fits keys to evenly spread target slots `i · capacity / n` (the layout used when a data
    /// node is built or retrained).
    pub fn fit_spread(keys: &[Key], capacity: usize) -> Result<Self, ModelError> {
        let step = capacity as f64 / keys.len().max(1) as f64;
        Self::fit(keys.iter().enumerate().map(|(i, &k)| (k, i as f64 * step)))
    }
}

/// Least-squares linear model mapping `keys` to `positions`.
///
/// A single key yields a flat model through its position.
pub fn train_linear_model(keys: &[Key], positions: &[f64]) -> Result<LinearModel, ModelError> {
    if keys.len() != positions.len() {
        return Err(ModelError::LengthMismatch {
            keys: keys.len(),
            positions: positions.len(),
        });
    }
    LinearModel::fit(keys.iter().copied().zip(positions.iter().copied()))
}

/// Slot for `key` in a node of `capacity` slots.
pub fn predict_slot(model: &LinearModel, key: Key, capacity: usize) -> usize {
    model.predict_slot(key, capacity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Closed-form simple regression evaluated exactly in integer arithmetic.
    fn closed_form(keys: &[u64], pos: &[u64]) -> (f64, f64) {
        let n = keys.len() as i128;
        let sx: i128 = keys.iter().map(|&k| k as i128).sum();
        let sy: i128 = pos.iter().map(|&p| p as i128).sum();
        let sxx: i128 = keys.iter().map(|&k| k as i128 * k as i128).sum();
        let sxy: i128 = keys.iter().zip(pos).map(|(&k, &p)| k as i128 * p as i128).sum();
        let num = n * sxy - sx * sy;
        let den = n * sxx - sx * sx;
        let slope = num as f64 / den as f64;
        // intercept = (sy * den - num * sx) / (n * den)
        let intercept = (sy * den - num * sx) as f64 / (n * den) as f64;
        (slope, intercept)
    }

    #[test]
    fn identity_fit() {
        let keys: Vec<u64> = (0..100).collect();
        let pos: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let m = train_linear_model(&keys, &pos).unwrap();
        assert_relative_eq!(m.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.intercept, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn three_point_fit() {
        let m = train_linear_model(&[10, 20, 30], &[0.0, 1.0, 2.0]).unwrap();
        let (s, i) = closed_form(&[10, 20, 30], &[0, 1, 2]);
        assert_relative_eq!(s, 0.1, epsilon = 1e-12);
        assert_relative_eq!(i, -1.0, epsilon = 1e-12);
        assert_relative_eq!(m.slope, 0.1, epsilon = 1e-12);
        assert_relative_eq!(m.intercept, -1.0, epsilon = 1e-12);
        assert_eq!(predict_slot(&m, 20, 8), 1);
    }

    #[test]
    fn degenerate_and_empty() {
        let m = train_linear_model(&[42], &[7.0]).unwrap();
        assert_eq!(m, LinearModel::new(0.0, 7.0));
        assert_eq!(train_linear_model(&[], &[]), Err(ModelError::Empty));
        assert!(matches!(
            train_linear_model(&[1, 2], &[0.0]),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn clamping() {
        let m = LinearModel::new(3.7, -2.0);
        assert_eq!(m.predict_slot(1_000, 1), 0);
        assert_eq!(LinearModel::new(1.0, 0.0).predict_slot(1_000_000_000, 100), 99);
        assert_eq!(LinearModel::new(1.0, -50.0).predict_slot(3, 100), 0);
        // half rounds up
        assert_eq!(LinearModel::new(0.5, 0.0).predict_slot(1, 10), 1);
        assert_eq!(LinearModel::new(1.0, 0.0).route(7, 4), 3);
    }

    #[test]
    fn doubling_preserves_routing() {
        let mut m = LinearModel::new(16.0 / 1000.0, -0.37);
        let before: Vec<usize> = (0..2000u64).map(|k| m.route(k, 16)).collect();
        m.scale(2.0);
        for (k, &slot) in (0..2000u64).zip(&before) {
            let s = m.route(k, 32);
            assert!(s == 2 * slot || s == 2 * slot + 1, "key {k}: {slot} -> {s}");
        }
    }

    proptest! {
        #[test]
        fn fit_matches_closed_form(mut keys in proptest::collection::btree_set(0u64..1_000_000, 2..200)
            .prop_map(|s| s.into_iter().collect::<Vec<_>>()), cap in 1usize..5000) {
            keys.sort_unstable();
            let pos: Vec<u64> = (0..keys.len()).map(|i| (i * cap / keys.len()) as u64).collect();
            let pos_f: Vec<f64> = pos.iter().map(|&p| p as f64).collect();
            let m = train_linear_model(&keys, &pos_f).unwrap();
            let (s, i) = closed_form(&keys, &pos);
            prop_assert!((m.slope - s).abs() <= 1e-9 * s.abs().max(1e-12), "{} vs {}", m.slope, s);
            // intercept error is bounded by the slope error times the key magnitude
            prop_assert!((m.intercept - i).abs() <= 1e-6 * (1.0 + i.abs() + s * 1e6), "{} vs {}", m.intercept, i);
            // predictions are non-decreasing in key
            let slots: Vec<usize> = keys.iter().map(|&k| m.predict_slot(k, cap.max(1))).collect();
            prop_assert!(slots.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
