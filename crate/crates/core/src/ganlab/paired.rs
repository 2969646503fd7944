//! Conditional (paired) adversarial training on aligned stain pairs.

use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{CorpusStore, Split, StainDomain};
use crate::error::{Error, Result};
use crate::ganlab::{derive_seed, PairedGanConfig, TraceRecord, TrainingTrace};
use crate::nets::{
    bce_with_logits, mae, patch_to_input, Adam, AdamConfig, Checkpoint, CheckpointMeta,
    Discriminator, DiscriminatorSpec, GenCache, Generator, GradStore,
};
use crate::par;

/// Trains a generator mapping `direction.0` to `direction.1` on the
/// `gan_train` split, with a conditional discriminator over concatenated
/// (source, target) patches.
///
/// Loss: `adversarial_weight * BCE(D(src, fake), real) + l1_weight *
/// MAE(fake, target)`. Every `gan_train` record of the source stain must
/// carry `paired_ref`. Returns the final generator checkpoint and the
/// per-epoch trace; epoch checkpoints land in `out_dir`.
pub fn train_paired(
    store: &CorpusStore,
    direction: (StainDomain, StainDomain),
    config: &PairedGanConfig,
    out_dir: impl AsRef<Path>,
) -> Result<(Checkpoint<f32>, TrainingTrace)> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    if direction.0 == direction.1 {
        return Err(Error::Precondition(
            "translation direction must change the stain domain".into(),
        ));
    }

    let records: Vec<_> = store
        .manifest()
        .split(Split::GanTrain)
        .filter(|r| r.stain == direction.0)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::Precondition(format!(
            "gan_train split has no {} records",
            direction.0
        )));
    }
    for r in &records {
        if r.paired_ref.is_none() {
            return Err(Error::Precondition(format!(
                "paired training requires aligned pairs, but `{}` has no paired_ref",
                r.patch_ref
            )));
        }
    }

    let loaded: Vec<Result<(Array3<f32>, Array3<f32>)>> = par::map(&records, |r| {
        let src = store.load_patch(r)?;
        let tgt = store.load_paired_patch(r)?;
        Ok((patch_to_input::<f32>(&src), patch_to_input::<f32>(&tgt)))
    });
    let pairs: Vec<(Array3<f32>, Array3<f32>)> = loaded.into_iter().collect::<Result<_>>()?;

    let mut gen: Generator<f32> =
        Generator::build(&config.generator, derive_seed(config.seed, "paired.gen", 0));
    let disc_spec = DiscriminatorSpec {
        in_channels: 6,
        widths: config.discriminator.widths.clone(),
    };
    let mut disc: Discriminator<f32> =
        Discriminator::build(&disc_spec, derive_seed(config.seed, "paired.disc", 0));

    let adam_cfg = AdamConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    };
    let mut adam_g = Adam::new(adam_cfg);
    let mut adam_d = Adam::new(adam_cfg);

    let adv_w = config.adversarial_weight as f32;
    let l1_w = config.l1_weight as f32;
    let adversarial = config.adversarial_weight > 0.0;

    let mut trace = TrainingTrace::default();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "paired.order", u64::from(epoch)));
        order.shuffle(&mut rng);

        let mut sum_g = 0.0f64;
        let mut sum_d = 0.0f64;
        let mut sum_l1 = 0.0f64;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0f32 / batch.len() as f32;

            // generator forwards, kept for both optimizer phases
            let gens: Vec<(Array3<f32>, GenCache<f32>)> = par::map(batch, |&i| {
                let (fake, _tap, cache) = gen.forward(&pairs[i].0);
                (fake, cache)
            });

            // discriminator update on real pairs vs detached fakes
            if adversarial {
                let items: Vec<(usize, &Array3<f32>)> = batch
                    .iter()
                    .copied()
                    .zip(gens.iter().map(|(fake, _)| fake))
                    .collect();
                let results: Vec<(GradStore<f32>, f32)> = par::map(&items, |(i, fake)| {
                    let (src, tgt) = &pairs[*i];
                    let real_in =
                        concatenate(Axis(0), &[src.view(), tgt.view()]).expect("channel concat");
                    let fake_in =
                        concatenate(Axis(0), &[src.view(), fake.view()]).expect("channel concat");
                    let mut store = GradStore::new();
                    let (r_out, r_cache) = disc.forward(&real_in);
                    let (l_r, g_r) = bce_with_logits(&r_out, 1.0);
                    let (f_out, f_cache) = disc.forward(&fake_in);
                    let (l_f, g_f) = bce_with_logits(&f_out, 0.0);
                    disc.backward(&r_cache, &(&g_r * 0.5f32), &mut store);
                    disc.backward(&f_cache, &(&g_f * 0.5f32), &mut store);
                    (store, 0.5 * (l_r + l_f))
                });
                let mut d_grads = GradStore::new();
                for (store, loss) in results {
                    sum_d += f64::from(loss);
                    d_grads.merge(store);
                }
                d_grads.scale(scale);
                adam_d.step(&mut disc, &d_grads);
            }

            // generator update against the (just updated) discriminator
            let items: Vec<(usize, &(Array3<f32>, GenCache<f32>))> =
                batch.iter().copied().zip(gens.iter()).collect();
            let results: Vec<(GradStore<f32>, f32, f32)> = par::map(&items, |(i, fc)| {
                let (fake, cache) = fc;
                let (src, tgt) = &pairs[*i];
                let mut store = GradStore::new();
                let mut g_fake: Array3<f32> = Array3::zeros(fake.dim());
                let mut adv_loss = 0.0f32;
                if adversarial {
                    let fake_in =
                        concatenate(Axis(0), &[src.view(), fake.view()]).expect("channel concat");
                    let (f_out, f_cache) = disc.forward(&fake_in);
                    let (l, g_map) = bce_with_logits(&f_out, 1.0);
                    adv_loss = l;
                    let mut scratch = GradStore::new();
                    let g_in = disc.backward(&f_cache, &g_map, &mut scratch);
                    let g_via_d = g_in.slice(ndarray::s![3..6, .., ..]);
                    g_fake.zip_mut_with(&g_via_d, |a, &b| *a = *a + adv_w * b);
                }
                let (l1, g_l1) = mae(fake, tgt);
                if l1_w > 0.0 {
                    g_fake.zip_mut_with(&g_l1, |a, &b| *a = *a + l1_w * b);
                }
                if adversarial || l1_w > 0.0 {
                    gen.backward(cache, Some(&g_fake), None, &mut store);
                }
                (store, adv_w * adv_loss + l1_w * l1, l1)
            });
            let mut g_grads = GradStore::new();
            for (store, g_loss, l1_loss) in results {
                sum_g += f64::from(g_loss);
                sum_l1 += f64::from(l1_loss);
                g_grads.merge(store);
            }
            g_grads.scale(scale);
            adam_g.step(&mut gen, &g_grads);

            let probe = sum_g + sum_d + sum_l1;
            if !probe.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: probe,
                });
            }
        }

        let n = pairs.len() as f64;
        let checkpoint_name =
            if epoch % config.checkpoint_interval == 0 || epoch == config.epochs {
                let name = format!("generator_epoch_{epoch:03}.ckpt");
                checkpoint_of(&gen, config, direction, epoch).save(out_dir.join(&name))?;
                Some(name)
            } else {
                None
            };
        trace.push(TraceRecord {
            epoch,
            loss: sum_g / n,
            adv_loss: sum_d / n,
            recon_loss: sum_l1 / n,
            accuracy: None,
            wall_clock_s: started.elapsed().as_secs_f64(),
            checkpoint: checkpoint_name,
        })?;
        log::info!(
            "paired {}->{} epoch {epoch}/{}: g {:.4} d {:.4} l1 {:.4}",
            direction.0,
            direction.1,
            config.epochs,
            sum_g / n,
            sum_d / n,
            sum_l1 / n
        );
    }

    let final_ckpt = checkpoint_of(&gen, config, direction, config.epochs);
    final_ckpt.save(out_dir.join("generator_final.ckpt"))?;
    Checkpoint::from_net(
        &disc,
        CheckpointMeta {
            kind: "discriminator".into(),
            spec: serde_json::to_value(&disc_spec)?,
            fingerprint: disc_spec.fingerprint(),
            dtype: String::new(),
            epoch: config.epochs,
            from_stain: Some(direction.0),
            to_stain: Some(direction.1),
        },
    )
    .save(out_dir.join("discriminator_final.ckpt"))?;
    trace.save(out_dir.join("trace.csv"))?;
    Ok((final_ckpt, trace))
}

fn checkpoint_of(
    gen: &Generator<f32>,
    config: &PairedGanConfig,
    direction: (StainDomain, StainDomain),
    epoch: u32,
) -> Checkpoint<f32> {
    Checkpoint::from_net(
        gen,
        CheckpointMeta {
            kind: "generator".into(),
            spec: serde_json::to_value(&config.generator).expect("spec serializes"),
            fingerprint: config.generator.fingerprint(),
            dtype: String::new(),
            epoch,
            from_stain: Some(direction.0),
            to_stain: Some(direction.1),
        },
    )
}
