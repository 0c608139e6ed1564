use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by a 70/15/15 cut.
///
/// Training takes ⌊0.7n⌋ items (at most n−2, so every part is non-empty);
/// the remainder is halved with the odd item going to validation.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<Split<T>> {
    let n = items.len();
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 cascades, got {n}")));
    }
    let mut items = items;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 7 / 10).min(n - 2);
    let rest = n - n_train;
    let n_val = rest.div_ceil(2);

    let mut it = items.into_iter();
    let train: Vec<T> = it.by_ref().take(n_train).collect();
    let val: Vec<T> = it.by_ref().take(n_val).collect();
    let test: Vec<T> = it.collect();
    Ok(Split { train, val, test })
}
