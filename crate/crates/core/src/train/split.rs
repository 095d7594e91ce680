use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::TrainError;
use crate::rng;
use crate::synth::DatasetBundle;

/// Train, validation and test partitions of one bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DatasetBundle,
    pub val: DatasetBundle,
    pub test: DatasetBundle,
}

/// Index sets of a stratified split; each set is in ascending order.
pub fn split_indices(bundle: &DatasetBundle, fractions: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut cells: BTreeMap<(usize, i32), Vec<usize>> = BTreeMap::new();
    for (i, (&c, &s)) in bundle.mod_labels.iter().zip(&bundle.snr_labels).enumerate() {
        cells.entry((c, s)).or_default().push(i);
    }
    let mut out: [Vec<usize>; 3] = Default::default();
    for ((c, s), mut idx) in cells {
        let mut r = rng::stream(seed, "shuffle", &[0, c as u64, s as i64 as u64]);
        idx.shuffle(&mut r);
        let n = idx.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        out[0].extend_from_slice(&idx[..n_train]);
        out[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        out[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    for part in &mut out {
        part.sort_unstable();
    }
    out
}

/// Stratified by (class, snr) cell, disjoint, deterministic given `seed`.
pub fn split_dataset(bundle: &DatasetBundle, fractions: [f64; 3], seed: u64) -> Result<Splits, TrainError> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("invalid split fractions {fractions:?}")));
    }
    let [a, b, c] = split_indices(bundle, fractions, seed);
    Ok(Splits {
        train: bundle.subset(&a),
        val: bundle.subset(&b),
        test: bundle.subset(&c),
    })
}
