//! Cycle-consistent (unpaired) adversarial training.
//!
//! Two generators and two patch discriminators trained jointly on
//! unaligned H&E and PHH3 pools: least-squares adversarial terms, mean
//! absolute reconstruction after the round trip, optional identity terms.
//! Pairing information is never consulted, even when present; the corpus
//! store counts pair lookups so tests can prove it.

use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{CorpusStore, Split, StainDomain};
use crate::error::{Error, Result};
use crate::ganlab::{derive_seed, TraceRecord, TrainingTrace, UnpairedGanConfig};
use crate::nets::{
    lsgan, mae, patch_to_input, Adam, AdamConfig, Checkpoint, CheckpointMeta, Discriminator,
    Generator, GradStore, Scalar,
};
use crate::par;

/// Cycle reconstruction term: `MAE(rec_a, a) + MAE(rec_b, b)` with the
/// gradients w.r.t. both reconstructions. Exactly zero when the round trips
/// reproduce the inputs (identity mappings).
pub fn cycle_reconstruction_terms<T: Scalar>(
    a: &Array3<T>,
    rec_a: &Array3<T>,
    b: &Array3<T>,
    rec_b: &Array3<T>,
) -> (T, Array3<T>, Array3<T>) {
    let (la, ga) = mae(rec_a, a);
    let (lb, gb) = mae(rec_b, b);
    (la + lb, ga, gb)
}

/// Trains the HE->PHH3 and PHH3->HE generators jointly on the `gan_train`
/// split. Returns `(checkpoint_he2phh3, checkpoint_phh32he, trace)`.
pub fn train_unpaired(
    store: &CorpusStore,
    config: &UnpairedGanConfig,
    out_dir: impl AsRef<Path>,
) -> Result<(Checkpoint<f32>, Checkpoint<f32>, TrainingTrace)> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let load_pool = |stain: StainDomain| -> Result<Vec<Array3<f32>>> {
        let records: Vec<_> = store
            .manifest()
            .split(Split::GanTrain)
            .filter(|r| r.stain == stain)
            .cloned()
            .collect();
        if records.is_empty() {
            return Err(Error::Precondition(format!(
                "gan_train split has no {stain} records"
            )));
        }
        let loaded: Vec<Result<Array3<f32>>> = par::map(&records, |r| {
            Ok(patch_to_input::<f32>(&store.load_patch(r)?))
        });
        loaded.into_iter().collect()
    };
    let pool_a = load_pool(StainDomain::He)?; // domain A: H&E
    let pool_b = load_pool(StainDomain::Phh3)?; // domain B: PHH3

    let mut g_ab: Generator<f32> =
        Generator::build(&config.generator, derive_seed(config.seed, "cycle.g_ab", 0));
    let mut g_ba: Generator<f32> =
        Generator::build(&config.generator, derive_seed(config.seed, "cycle.g_ba", 0));
    let mut d_a: Discriminator<f32> = Discriminator::build(
        &config.discriminator,
        derive_seed(config.seed, "cycle.d_a", 0),
    );
    let mut d_b: Discriminator<f32> = Discriminator::build(
        &config.discriminator,
        derive_seed(config.seed, "cycle.d_b", 0),
    );

    let adam_cfg = AdamConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    };
    let mut adam_g_ab = Adam::new(adam_cfg);
    let mut adam_g_ba = Adam::new(adam_cfg);
    let mut adam_d_a = Adam::new(adam_cfg);
    let mut adam_d_b = Adam::new(adam_cfg);

    let adv_w = config.adversarial_weight as f32;
    let cyc_w = config.cycle_weight as f32;
    let idt_w = config.identity_weight as f32;
    let adversarial = config.adversarial_weight > 0.0;

    let mut trace = TrainingTrace::default();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let steps = pool_a.len().min(pool_b.len());
        let mut order_a: Vec<usize> = (0..pool_a.len()).collect();
        let mut order_b: Vec<usize> = (0..pool_b.len()).collect();
        order_a.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            "cycle.order_a",
            u64::from(epoch),
        )));
        order_b.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            "cycle.order_b",
            u64::from(epoch),
        )));
        let indices: Vec<(usize, usize)> = order_a[..steps]
            .iter()
            .copied()
            .zip(order_b[..steps].iter().copied())
            .collect();

        let mut sum_g = 0.0f64;
        let mut sum_d = 0.0f64;
        let mut sum_cycle = 0.0f64;
        for (step, batch) in indices.chunks(config.batch_size).enumerate() {
            let scale = 1.0f32 / batch.len() as f32;

            struct GOut {
                store_ab: GradStore<f32>,
                store_ba: GradStore<f32>,
                fake_a: Array3<f32>,
                fake_b: Array3<f32>,
                g_loss: f32,
                cycle_loss: f32,
            }
            let g_results: Vec<GOut> = par::map(batch, |&(ia, ib)| {
                let a = &pool_a[ia];
                let b = &pool_b[ib];
                let mut store_ab = GradStore::new();
                let mut store_ba = GradStore::new();

                let (fake_b, _, cache_ab1) = g_ab.forward(a);
                let (rec_a, _, cache_ba1) = g_ba.forward(&fake_b);
                let (fake_a, _, cache_ba2) = g_ba.forward(b);
                let (rec_b, _, cache_ab2) = g_ab.forward(&fake_a);

                let (cycle, g_rec_a, g_rec_b) =
                    cycle_reconstruction_terms(a, &rec_a, b, &rec_b);
                let mut g_loss = cyc_w * cycle;

                // round trip A -> B -> A
                let mut g_fake_b =
                    g_ba.backward(&cache_ba1, Some(&(&g_rec_a * cyc_w)), None, &mut store_ba);
                if adversarial {
                    let (db_out, db_cache) = d_b.forward(&fake_b);
                    let (l, g_map) = lsgan(&db_out, 1.0);
                    g_loss += adv_w * l;
                    let mut scratch = GradStore::new();
                    let g_adv = d_b.backward(&db_cache, &(&g_map * adv_w), &mut scratch);
                    g_fake_b += &g_adv;
                }
                g_ab.backward(&cache_ab1, Some(&g_fake_b), None, &mut store_ab);

                // round trip B -> A -> B
                let mut g_fake_a =
                    g_ab.backward(&cache_ab2, Some(&(&g_rec_b * cyc_w)), None, &mut store_ab);
                if adversarial {
                    let (da_out, da_cache) = d_a.forward(&fake_a);
                    let (l, g_map) = lsgan(&da_out, 1.0);
                    g_loss += adv_w * l;
                    let mut scratch = GradStore::new();
                    let g_adv = d_a.backward(&da_cache, &(&g_map * adv_w), &mut scratch);
                    g_fake_a += &g_adv;
                }
                g_ba.backward(&cache_ba2, Some(&g_fake_a), None, &mut store_ba);

                // optional identity terms
                if idt_w > 0.0 {
                    let (idt_b, _, cache_idt_b) = g_ab.forward(b);
                    let (l_idt_b, g_idt_b) = mae(&idt_b, b);
                    g_ab.backward(&cache_idt_b, Some(&(&g_idt_b * idt_w)), None, &mut store_ab);
                    let (idt_a, _, cache_idt_a) = g_ba.forward(a);
                    let (l_idt_a, g_idt_a) = mae(&idt_a, a);
                    g_ba.backward(&cache_idt_a, Some(&(&g_idt_a * idt_w)), None, &mut store_ba);
                    g_loss += idt_w * (l_idt_a + l_idt_b);
                }

                GOut {
                    store_ab,
                    store_ba,
                    fake_a,
                    fake_b,
                    g_loss,
                    cycle_loss: cycle,
                }
            });

            let mut grads_ab = GradStore::new();
            let mut grads_ba = GradStore::new();
            let mut fakes: Vec<(Array3<f32>, Array3<f32>)> = Vec::with_capacity(batch.len());
            for r in g_results {
                sum_g += f64::from(r.g_loss);
                sum_cycle += f64::from(r.cycle_loss);
                grads_ab.merge(r.store_ab);
                grads_ba.merge(r.store_ba);
                fakes.push((r.fake_a, r.fake_b));
            }
            grads_ab.scale(scale);
            grads_ba.scale(scale);
            adam_g_ab.step(&mut g_ab, &grads_ab);
            adam_g_ba.step(&mut g_ba, &grads_ba);

            // discriminators learn from the pre-update fakes (the usual
            // stale-pool behaviour of the reference setup)
            if adversarial {
                let items: Vec<((usize, usize), &(Array3<f32>, Array3<f32>))> =
                    batch.iter().copied().zip(fakes.iter()).collect();
                let d_results: Vec<(GradStore<f32>, GradStore<f32>, f32)> =
                    par::map(&items, |((ia, ib), fakes)| {
                        let (fake_a, fake_b) = fakes;
                        let mut store_a = GradStore::new();
                        let mut store_b = GradStore::new();
                        let mut loss = 0.0f32;
                        for (disc, store, real, fake) in [
                            (&d_a, &mut store_a, &pool_a[*ia], fake_a),
                            (&d_b, &mut store_b, &pool_b[*ib], fake_b),
                        ] {
                            let (r_out, r_cache) = disc.forward(real);
                            let (l_r, g_r) = lsgan(&r_out, 1.0);
                            let (f_out, f_cache) = disc.forward(fake);
                            let (l_f, g_f) = lsgan(&f_out, 0.0);
                            disc.backward(&r_cache, &(&g_r * 0.5f32), store);
                            disc.backward(&f_cache, &(&g_f * 0.5f32), store);
                            loss += 0.5 * (l_r + l_f);
                        }
                        (store_a, store_b, loss)
                    });
                let mut grads_da = GradStore::new();
                let mut grads_db = GradStore::new();
                for (sa, sb, l) in d_results {
                    sum_d += f64::from(l);
                    grads_da.merge(sa);
                    grads_db.merge(sb);
                }
                grads_da.scale(scale);
                grads_db.scale(scale);
                adam_d_a.step(&mut d_a, &grads_da);
                adam_d_b.step(&mut d_b, &grads_db);
            }

            let probe = sum_g + sum_d + sum_cycle;
            if !probe.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: probe,
                });
            }
        }

        let n = steps as f64;
        let checkpoint_name =
            if epoch % config.checkpoint_interval == 0 || epoch == config.epochs {
                save_pair(&g_ab, &g_ba, config, epoch, out_dir, false)?;
                Some(format!("g_he2phh3_epoch_{epoch:03}.ckpt"))
            } else {
                None
            };
        trace.push(TraceRecord {
            epoch,
            loss: sum_g / n,
            adv_loss: sum_d / n,
            recon_loss: sum_cycle / n,
            accuracy: None,
            wall_clock_s: started.elapsed().as_secs_f64(),
            checkpoint: checkpoint_name,
        })?;
        log::info!(
            "cycle epoch {epoch}/{}: g {:.4} d {:.4} cycle {:.4}",
            config.epochs,
            sum_g / n,
            sum_d / n,
            sum_cycle / n
        );
    }

    let (ckpt_ab, ckpt_ba) = save_pair(&g_ab, &g_ba, config, config.epochs, out_dir, true)?;
    trace.save(out_dir.join("trace.csv"))?;
    Ok((ckpt_ab, ckpt_ba, trace))
}

fn save_pair(
    g_ab: &Generator<f32>,
    g_ba: &Generator<f32>,
    config: &UnpairedGanConfig,
    epoch: u32,
    out_dir: &Path,
    as_final: bool,
) -> Result<(Checkpoint<f32>, Checkpoint<f32>)> {
    let meta = |from: StainDomain, to: StainDomain| CheckpointMeta {
        kind: "generator".into(),
        spec: serde_json::to_value(&config.generator).expect("spec serializes"),
        fingerprint: config.generator.fingerprint(),
        dtype: String::new(),
        epoch,
        from_stain: Some(from),
        to_stain: Some(to),
    };
    let ckpt_ab = Checkpoint::from_net(g_ab, meta(StainDomain::He, StainDomain::Phh3));
    let ckpt_ba = Checkpoint::from_net(g_ba, meta(StainDomain::Phh3, StainDomain::He));
    if as_final {
        ckpt_ab.save(out_dir.join("g_he2phh3_final.ckpt"))?;
        ckpt_ba.save(out_dir.join("g_phh32he_final.ckpt"))?;
    } else {
        ckpt_ab.save(out_dir.join(format!("g_he2phh3_epoch_{epoch:03}.ckpt")))?;
        ckpt_ba.save(out_dir.join(format!("g_phh32he_epoch_{epoch:03}.ckpt")))?;
    }
    Ok((ckpt_ab, ckpt_ba))
}
