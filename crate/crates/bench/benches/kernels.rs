use beamsim_core::channel::{self, ArrayDims};
use beamsim_core::codebook::{self, dft_codebook};
use beamsim_core::geometry::{Orientation, Pose};
use beamsim_core::neuralnet::{FeatureScaler, HeadKind, MlpModel};
use beamsim_core::selectors::{self, ChannelOracle};
use beamsim_core::{rng, ScenarioConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn ut_pose() -> Pose {
    Pose::new([3.0, 2.0, 1.5], Orientation::new(0.4, 0.1, -0.2))
}

fn bench_trace(c: &mut Criterion) {
    let sc = ScenarioConfig::living_room();
    let pose = ut_pose();
    c.bench_function("trace_paths order 2", |b| b.iter(|| channel::trace_paths(&sc.room, black_box(&pose), 2).unwrap()));
}

fn bench_gains(c: &mut Criterion) {
    let sc = ScenarioConfig::living_room();
    let paths = channel::trace_paths(&sc.room, &ut_pose(), 2).unwrap();
    let (cb_ap, cb_ut) = (dft_codebook(8, 8).unwrap(), dft_codebook(4, 4).unwrap());
    c.bench_function("beam responses 64x16", |b| {
        b.iter(|| codebook::beam_responses_from_paths(black_box(&paths), &cb_ap, &cb_ut))
    });
    let h = channel::assemble_channel(&paths, sc.ap_array, sc.ut_array).unwrap();
    c.bench_function("gain matrix from channel", |b| {
        b.iter(|| codebook::gain_matrix(black_box(&h), &cb_ap, &cb_ut, sc.p_ap(), sc.sigma2()).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let (ap, ut) = (ArrayDims::new(8, 8), ArrayDims::new(4, 4));
    let poses = vec![ut_pose(); 256];
    for head in HeadKind::ALL {
        let m = MlpModel::new(head, ap, ut, 5, 128, FeatureScaler::identity(), &mut rng::stream(1, &[]));
        c.bench_function(&format!("{} forward x256", head.label()), |b| b.iter(|| m.predict_pairs(black_box(&poses)).unwrap()));
    }
}

fn bench_hbs(c: &mut Criterion) {
    let sc = ScenarioConfig::living_room();
    let paths = channel::trace_paths(&sc.room, &ut_pose(), 2).unwrap();
    let h = channel::assemble_channel(&paths, sc.ap_array, sc.ut_array).unwrap();
    c.bench_function("hbs 8x8/4x4", |b| {
        b.iter(|| {
            let mut o = ChannelOracle { channel: &h, p_ap: sc.p_ap(), noise_var: sc.sigma2(), rng: rng::stream(3, &[]) };
            selectors::hbs_run(&mut o, sc.ap_array, sc.ut_array).unwrap()
        })
    });
}

criterion_group!(kernels, bench_trace, bench_gains, bench_forward, bench_hbs);
criterion_main!(kernels);
