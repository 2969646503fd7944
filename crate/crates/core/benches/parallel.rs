//! Parallel-vs-sequential benchmarks over the data-parallel kernels.
//!
//! With the default `parallel` feature each workload runs twice: on the
//! default rayon pool and inside a single-thread pool (the runtime
//! equivalent of the sequential fallback). Building the bench with
//! `--no-default-features` measures the true compile-time fallback under
//! the same benchmark ids, so criterion baselines line up.

use criterion::{criterion_group, criterion_main, Criterion};

use ndarray::{Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stainbridge_core::nets::{conv2d_forward, Generator, GeneratorSpec};
use stainbridge_core::par;
use stainbridge_core::phantom::{generate_pair, PhantomConfig};
use stainbridge_core::stainprep::{color_deconvolve_pixels, doh_response, StainMatrix};

struct Fixtures {
    conv_x: Array3<f32>,
    conv_w: Array4<f32>,
    conv_b: Array1<f32>,
    generator: Generator<f32>,
    gen_inputs: Vec<Array3<f32>>,
    pixel_batch: Vec<Array3<f64>>,
    lum_batch: Vec<ndarray::Array2<f64>>,
    stains: StainMatrix,
    phantom: PhantomConfig,
}

fn fixtures() -> Fixtures {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let conv_x = Array3::from_shape_fn((256, 25, 25), |_| rng.random::<f32>() - 0.5);
    let conv_w = Array4::from_shape_fn((256, 256, 3, 3), |_| (rng.random::<f32>() - 0.5) * 0.05);
    let conv_b = Array1::zeros(256);
    let spec = GeneratorSpec {
        base_width: 16,
        n_blocks: 2,
    };
    let generator = Generator::build(&spec, 7);
    let gen_inputs: Vec<Array3<f32>> = (0..4)
        .map(|_| Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f32>()))
        .collect();
    let pixel_batch: Vec<Array3<f64>> = (0..8)
        .map(|_| Array3::from_shape_fn((100, 100, 3), |_| rng.random::<f64>().max(0.05)))
        .collect();
    let lum_batch: Vec<ndarray::Array2<f64>> = (0..8)
        .map(|_| ndarray::Array2::from_shape_fn((100, 100), |_| rng.random::<f64>()))
        .collect();
    Fixtures {
        conv_x,
        conv_w,
        conv_b,
        generator,
        gen_inputs,
        pixel_batch,
        lum_batch,
        stains: StainMatrix::hed(),
        phantom: PhantomConfig {
            patch_size: 64,
            ..Default::default()
        },
    }
}

fn run_workloads(c: &mut Criterion, label: &str, f: &Fixtures, runner: &dyn Fn(&(dyn Fn() + Sync))) {
    let mut group = c.benchmark_group(label);
    group.sample_size(10);

    group.bench_function("conv2d_residual_block", |b| {
        b.iter(|| {
            runner(&|| {
                std::hint::black_box(conv2d_forward(&f.conv_x, &f.conv_w, &f.conv_b, 1, 1));
            })
        })
    });

    group.bench_function("generator_forward_batch4", |b| {
        b.iter(|| {
            runner(&|| {
                let outs = par::map(&f.gen_inputs, |x| f.generator.forward_infer(x).0);
                std::hint::black_box(outs);
            })
        })
    });

    group.bench_function("deconvolve_batch8", |b| {
        b.iter(|| {
            runner(&|| {
                let out = par::map(&f.pixel_batch, |p| color_deconvolve_pixels(p, &f.stains));
                std::hint::black_box(out);
            })
        })
    });

    group.bench_function("doh_batch8_sigma4", |b| {
        b.iter(|| {
            runner(&|| {
                let out = par::map(&f.lum_batch, |img| doh_response(img, 4.0));
                std::hint::black_box(out);
            })
        })
    });

    group.bench_function("phantom_pairs_batch8", |b| {
        b.iter(|| {
            runner(&|| {
                let out = par::map_range(8, |i| generate_pair(&f.phantom, i as u64).unwrap());
                std::hint::black_box(out);
            })
        })
    });

    group.finish();
}

fn benches(c: &mut Criterion) {
    let f = fixtures();

    #[cfg(feature = "parallel")]
    {
        run_workloads(c, "rayon_default_pool", &f, &|work| work());
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        run_workloads(c, "single_thread_pool", &f, &|work| single.install(work));
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_workloads(c, "sequential_fallback", &f, &|work| work());
    }
}

criterion_group!(parallel_benches, benches);
criterion_main!(parallel_benches);
