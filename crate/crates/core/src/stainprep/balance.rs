//! Class rebalancing: keep every positive (oversampled via loss weight),
//! subsample negatives to the target ratio.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{ClassRatioConfig, Label, SampleRecord};
use crate::error::{Error, Result};

/// Rebalances a record pool for training.
///
/// All positives are kept with weight `oversample_weight`; negatives are
/// subsampled without replacement to `train_ratio` times the positive count
/// (or all of them when fewer are available, with a warning), weight 1.
/// Selection is deterministic given `seed`.
pub fn rebalance(
    records: &[SampleRecord],
    config: &ClassRatioConfig,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<f64>)> {
    config.validate()?;
    let positives: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| r.label == Label::Mitosis)
        .collect();
    let negatives: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| r.label == Label::NonMitosis)
        .collect();
    if positives.is_empty() {
        return Err(Error::DegenerateClass(
            "rebalance requires at least one positive sample".into(),
        ));
    }

    let want = positives.len() * config.train_ratio as usize;
    let take = want.min(negatives.len());
    if take < want {
        log::warn!(
            "rebalance: only {} negatives available for {} positives (wanted {want}); keeping all",
            negatives.len(),
            positives.len()
        );
    }

    let mut order: Vec<usize> = (0..negatives.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(take);

    let mut selected = Vec::with_capacity(positives.len() + take);
    let mut weights = Vec::with_capacity(positives.len() + take);
    for p in &positives {
        selected.push((*p).clone());
        weights.push(config.oversample_weight);
    }
    for idx in order {
        selected.push(negatives[idx].clone());
        weights.push(1.0);
    }
    Ok((selected, weights))
}
