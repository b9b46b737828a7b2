use rand::Rng;
use rand_distr::StandardNormal;

use super::CellError;
use crate::autodiff::Tensor;

/// Uniform Xavier/Glorot initialisation for a `[fan_in×fan_out]` matrix.
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

pub fn init_identity(n: usize) -> Tensor {
    Tensor::identity(n)
}

/// Orthogonal matrix from the QR factorisation of a standard-normal draw.
///
/// Gram-Schmidt is run twice per column, and the factor is taken with a
/// positive diagonal in `R`, which makes `Q` unique for the draw.
pub fn init_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    // columns stored contiguously
    let mut cols: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for j in 0..n {
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let (done, rest) = cols.split_at_mut(j);
                for (c, q) in rest[0].iter_mut().zip(&done[i]) {
                    *c -= dot * q;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut data = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::from_parts(vec![n, n], data)
}

/// Chrono initialisation of forget and input gate biases.
///
/// `b_f = ln(u)` with `u ~ U[1, t_max − 1]` and `b_i = −b_f`.
pub fn init_chrono<R: Rng + ?Sized>(t_max: usize, size: usize, rng: &mut R) -> Result<(Tensor, Tensor), CellError> {
    if t_max < 3 {
        return Err(CellError::Config(format!("chrono initialisation needs t_max >= 3, got {t_max}")));
    }
    let hi = (t_max - 1) as f64;
    let forget: Vec<f64> = (0..size).map(|_| rng.gen_range(1.0..=hi).ln()).collect();
    let input = forget.iter().map(|v| -v).collect();
    Ok((Tensor::from_parts(vec![size], forget), Tensor::from_parts(vec![size], input)))
}
