use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::{Error, Result};

/// Seeded 4:1 partition. The train side gets `ceil(0.8 n)` records; both
/// sides keep the corpus's original record order.
pub fn split_train_test(corpus: &Corpus) -> Result<(Corpus, Corpus)> {
    let n = corpus.len();
    if n < 5 {
        return Err(Error::Size(format!("need at least 5 records to split, got {n}")));
    }
    let n_train = (4 * n).div_ceil(5);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(corpus.split_seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (r, &t) in corpus.records.iter().zip(&is_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((corpus.with_records(train), corpus.with_records(test)))
}
