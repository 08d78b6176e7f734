//! Data-parallel minibatch gradients shared by the training loops.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluates `f` on every index in parallel and averages the `(loss, grad)`
/// pairs. Results are reduced in index order, so the outcome does not depend
/// on the number of worker threads.
pub(crate) fn mean_gradient<F>(indices: &[usize], n_params: usize, f: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, usize) -> Result<(f64, Vec<f64>)> + Sync,
{
    if indices.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let parts: Vec<Result<(f64, Vec<f64>)>> = indices
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| f(slot, i))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / indices.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Indices for one minibatch: a full pass when the batch covers the data,
/// otherwise uniform draws with replacement.
pub(crate) fn draw_batch(rng: &mut crate::rng::RngStream, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        (0..batch).map(|_| ((rng.uniform() * n as f64) as usize).min(n - 1)).collect()
    }
}
