//! Weighted aggregation across workers and clients.
//!
//! Both reductions walk parameters in definition order and sum worker
//! contributions in worker-index order, so results are bitwise
//! reproducible; with exact arithmetic they are permutation-invariant in
//! the (store, size) pairs.

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

fn weighted_mean<F>(stores: &[&ParamStore], sizes: &[usize], select: F) -> Result<Vec<Tensor>>
where
    F: Fn(&ParamStore, usize) -> Tensor,
{
    let first = *stores
        .first()
        .ok_or_else(|| Error::InvalidConfig("aggregation over zero stores".to_string()))?;
    if stores.len() != sizes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} stores but {} sizes",
            stores.len(),
            sizes.len()
        )));
    }
    if let Some(bad) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!("size of shard {bad} is zero")));
    }
    for (k, s) in stores.iter().enumerate() {
        if !first.structure_matches(s) {
            return Err(Error::shape(
                "aggregate",
                format!("store {k} has a different parameter structure"),
            ));
        }
    }
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(first.len());
    for p in 0..first.len() {
        let mut acc = Tensor::zeros(first.get(p).value().shape());
        for (k, store) in stores.iter().enumerate() {
            let weight = sizes[k] as f64 / total as f64;
            acc.add_scaled(&select(store, p), weight)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Combine worker gradients into the shard-size-weighted mean
/// `sum_k (n_k / n) * g_k`, reduced in worker-index order.
pub fn dsgd_aggregate(stores: &[&ParamStore], shard_sizes: &[usize]) -> Result<Vec<Tensor>> {
    weighted_mean(stores, shard_sizes, |s, p| s.get(p).grad().clone())
}

/// Combine client parameter values into the data-size-weighted mean
/// `sum_k (n_k / n) * w_k`, reduced in client-index order.
pub fn fedavg_aggregate(stores: &[&ParamStore], client_sizes: &[usize]) -> Result<Vec<Tensor>> {
    weighted_mean(stores, client_sizes, |s, p| s.get(p).value().clone())
}
