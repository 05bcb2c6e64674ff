//! Seeded random streams. Every run or trial gets its own ChaCha stream
//! derived from `(seed, index)`, so results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent stream `index` of the generator seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, std_dev: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| std_dev * rng.sample::<f64, _>(StandardNormal))
}

/// Entries are drawn row by row.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

/// Uniform draw from `[lo, hi]`; a degenerate range returns `lo` without
/// consuming randomness.
pub fn uniform_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Uniform point on the sphere of the given radius in `dim` dimensions.
pub fn sphere_point<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let g = normal_vector(rng, dim, 1.0);
        let norm = g.norm();
        if norm > 0.0 {
            return g * (radius / norm);
        }
    }
}
