use beamsim_core::channel::{array_response, assemble_channel, trace_paths, MAX_PATHS};
use beamsim_core::codebook::{dft_codebook, gain_matrix, measure_rss, PairLayout};
use beamsim_core::dataset::{draw_pose, generate_dataset, label_mhot};
use beamsim_core::eval::{ese, scan_candidates, T_FRAME, T_SENSE};
use beamsim_core::neuralnet::{combine_heads, top_candidates, FeatureScaler};
use beamsim_core::rng::stream;
use beamsim_core::selectors::{gifp_bin_index, hbs_run, ChannelOracle, GifpGeometry, RssOracle};
use beamsim_core::{
    ArrayAngles, ArrayDims, CandidateList, GainMatrix, HeadKind, MlpModel, Orientation, Pose, PropagationPath,
    RssMatrix, ScenarioConfig,
};
use ndarray::Array1;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

const AP: ArrayDims = ArrayDims::new(8, 8);
const UT: ArrayDims = ArrayDims::new(4, 4);

fn pow2_dims() -> impl Strategy<Value = ArrayDims> {
    (0u32..5, 0u32..5).prop_map(|(h, v)| ArrayDims::new(1 << h, 1 << v))
}

fn angles() -> impl Strategy<Value = ArrayAngles> {
    (-PI..PI, 0.0..PI).prop_map(|(phi, theta)| ArrayAngles::new(phi, theta))
}

fn path() -> impl Strategy<Value = PropagationPath> {
    (0usize..3, 1e-9..1e-3f64, 0.0..2.0 * PI, angles(), angles(), 1.0..20.0f64).prop_map(
        |(order, power, phase, aod, aoa, length)| PropagationPath { order, power, phase, aod, aoa, length },
    )
}

fn room_pose(seed: u64) -> Pose {
    draw_pose(&ScenarioConfig::living_room(), &mut stream(seed, &[1]))
}

fn random_gains(seed: u64) -> GainMatrix {
    let s = ScenarioConfig::living_room();
    let pose = room_pose(seed);
    let paths = trace_paths(&s.room, &pose, s.max_order).unwrap();
    let h = assemble_channel(&paths, AP, UT).unwrap();
    gain_matrix(&h, &dft_codebook(AP.n_h, AP.n_v).unwrap(), &dft_codebook(UT.n_h, UT.n_v).unwrap(), 1.0, 1e-3).unwrap()
}

fn rss_matrix(seed: u64) -> RssMatrix {
    let g = random_gains(seed);
    measure_rss(&g, 1.0, &mut stream(seed, &[2]))
}

struct Counter<O> {
    inner: O,
    calls: usize,
}

impl<O: RssOracle> RssOracle for Counter<O> {
    fn measure(&mut self, precoder: &Array1<Complex64>, combiner: &Array1<Complex64>) -> f64 {
        self.calls += 1;
        self.inner.measure(precoder, combiner)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn array_response_unit_norm(dims in pow2_dims(), a in angles()) {
        let v = array_response(dims, a);
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_is_linear_in_paths(a in prop::collection::vec(path(), 1..6), b in prop::collection::vec(path(), 1..6)) {
        let ha = assemble_channel(&a, AP, UT).unwrap();
        let hb = assemble_channel(&b, AP, UT).unwrap();
        let joined: Vec<_> = a.iter().chain(&b).copied().collect();
        let hab = assemble_channel(&joined, AP, UT).unwrap();
        let diff = hab.matrix() - &(ha.matrix() + hb.matrix());
        let scale = hab.matrix().iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
        prop_assert!(diff.iter().all(|c| c.norm() <= 1e-12 * scale));
    }

    #[test]
    fn traced_paths_sorted_and_capped(seed in any::<u64>()) {
        let s = ScenarioConfig::living_room();
        let paths = trace_paths(&s.room, &room_pose(seed), s.max_order).unwrap();
        prop_assert!(!paths.is_empty() && paths.len() <= MAX_PATHS);
        prop_assert!(paths.windows(2).all(|w| w[0].power >= w[1].power));
        prop_assert!(paths.iter().all(|p| p.power > 0.0));
    }

    #[test]
    fn pair_index_round_trip(ap in 1usize..100, ut in 1usize..40, i in 0usize..100, j in 0usize..40) {
        let layout = PairLayout { n_ap: ap, n_ut: ut };
        let (i, j) = (i % ap, j % ut);
        prop_assert_eq!(layout.split(layout.flatten(i, j)), (i, j));
    }

    #[test]
    fn beam_index_round_trip(dims in pow2_dims(), k in 0usize..256) {
        let cb = dft_codebook(dims.n_h, dims.n_v).unwrap();
        let k = k % cb.len();
        let (p, q) = cb.unflatten(k);
        prop_assert_eq!(cb.flat_index(p, q), k);
    }

    #[test]
    fn rss_is_seeded_and_noiseless_argmax_matches(seed in any::<u64>()) {
        let g = random_gains(seed);
        let a = measure_rss(&g, 0.5, &mut stream(seed, &[9]));
        let b = measure_rss(&g, 0.5, &mut stream(seed, &[9]));
        prop_assert_eq!(a.as_slice(), b.as_slice());
        prop_assert!(a.as_slice().iter().all(|&x| x >= 0.0));
        let clean = measure_rss(&g, 0.0, &mut stream(seed, &[9]));
        prop_assert_eq!(clean.argmax(), g.argmax());
    }

    #[test]
    fn labels_mark_the_m_largest(seed in any::<u64>(), m in 1usize..40) {
        let r = rss_matrix(seed);
        let label = label_mhot(&r, m).unwrap();
        let dense = label.dense();
        prop_assert_eq!(dense.iter().filter(|&&x| x == 1.0).count(), m);
        prop_assert_eq!(dense.sum(), m as f64);
        let marked_min = label.ranked().iter().map(|&k| r.as_slice()[k as usize]).fold(f64::INFINITY, f64::min);
        let unmarked_max = (0..r.as_slice().len())
            .filter(|&k| !label.contains(k))
            .map(|k| r.as_slice()[k])
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(marked_min >= unmarked_max);
    }

    #[test]
    fn combined_output_is_a_distribution(seed in any::<u64>(), head in prop::sample::select(HeadKind::ALL.to_vec())) {
        let mut rng = stream(seed, &[3]);
        let model = MlpModel::new(head, AP, UT, 2, 16, FeatureScaler::identity(), &mut rng);
        let f: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let out = model.forward(&f).unwrap();
        for g in &out.groups {
            prop_assert!((g.sum() - 1.0).abs() < 1e-9);
            prop_assert!(g.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let o = combine_heads(&out, AP, UT);
        prop_assert_eq!(o.len(), AP.len() * UT.len());
        prop_assert!((o.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn candidates_invariant_under_monotone_map(o in prop::collection::vec(0.0..1.0f64, 1..200), n in 1usize..200) {
        let n = n.min(o.len());
        let base = top_candidates(&o, n).unwrap();
        let mapped: Vec<f64> = o.iter().map(|&x| (3.0 * x).exp() - 7.0).collect();
        let again = top_candidates(&mapped, n).unwrap();
        prop_assert_eq!(base.as_slice(), again.as_slice());
        let mut seen = base.as_slice().to_vec();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), n);
        prop_assert!(base.as_slice().windows(2).all(|w| o[w[0]] >= o[w[1]]));
    }

    #[test]
    fn nested_candidates_give_monotone_scan(seed in any::<u64>()) {
        let r = rss_matrix(seed);
        let mut rng = stream(seed, &[4]);
        let scores: Vec<f64> = (0..r.as_slice().len()).map(|_| rng.random()).collect();
        let full = top_candidates(&scores, scores.len()).unwrap();
        let mut prev = 0.0;
        for n_b in [1, 2, 5, 20, 100, 1024] {
            let chosen = scan_candidates(&r, &full.prefix(n_b)).unwrap();
            let v = r.at(chosen);
            prop_assert!(v >= prev);
            prev = v;
        }
        prop_assert_eq!(scan_candidates(&r, &full).unwrap(), r.argmax());
    }

    #[test]
    fn ese_decreases_with_overhead(snr in 0.0..1e4f64, a in 0usize..199, b in 0usize..199) {
        let (lo, hi) = (a.min(b), a.max(b));
        let e_lo = ese(snr, lo, T_FRAME, T_SENSE).unwrap();
        let e_hi = ese(snr, hi, T_FRAME, T_SENSE).unwrap();
        prop_assert!(e_hi <= e_lo && e_hi >= 0.0);
        prop_assert!((e_lo - (1.0 - lo as f64 / 200.0) * (1.0 + snr).log2()).abs() < 1e-12 * e_lo.max(1.0));
    }

    #[test]
    fn gifp_bins_partition_pose_space(seed in any::<u64>(), ds in 0.2..2.0f64, da in 0.2..1.5f64) {
        let s = ScenarioConfig::living_room();
        let geo = GifpGeometry::new(&s, ds, da).unwrap();
        let pose = draw_pose(&s, &mut stream(seed, &[5]));
        let bin = gifp_bin_index(&pose, &geo);
        prop_assert!(bin < geo.n_bins());
        // Nudging within the same cell keeps the bin; the cell is half-open.
        let cell: Vec<f64> = (0..6).map(|k| {
            let f = pose.features()[k];
            let lo = geo.origin[k] + ((f - geo.origin[k]) / geo.delta[k]).floor() * geo.delta[k];
            lo + 0.5 * geo.delta[k]
        }).collect();
        let centre = Pose::new([cell[0], cell[1], cell[2]], Orientation::new(cell[3], cell[4], cell[5]));
        prop_assert_eq!(gifp_bin_index(&centre, &geo), bin);
    }

    #[test]
    fn hbs_call_count_is_fixed(seed in any::<u64>()) {
        let s = ScenarioConfig::living_room();
        let paths = trace_paths(&s.room, &room_pose(seed), s.max_order).unwrap();
        let h = assemble_channel(&paths, AP, UT).unwrap();
        let mut oracle = Counter { inner: ChannelOracle { channel: &h, p_ap: 1.0, noise_var: 1e-9, rng: stream(seed, &[6]) }, calls: 0 };
        let res = hbs_run(&mut oracle, AP, UT).unwrap();
        prop_assert_eq!(oracle.calls, 20);
        prop_assert_eq!(res.sensed_pairs, 20);
        prop_assert_eq!(res.feedbacks, 6);
        prop_assert!(res.pair < AP.len() * UT.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dataset_generation_is_reproducible(seed in any::<u64>(), m in 1usize..5) {
        let s = ScenarioConfig::living_room();
        let a = generate_dataset(&s, 12, m, seed).unwrap();
        let b = generate_dataset(&s, 12, m, seed).unwrap();
        prop_assert_eq!(&a.samples, &b.samples);
        for sample in &a.samples {
            prop_assert_eq!(sample.recompute_label(m).unwrap(), sample.label.clone());
            prop_assert!(s.room.user_grid.contains(&sample.pose.position, 1e-12));
        }
    }
}

#[test]
fn singleton_candidate_scan_returns_it() {
    let r = rss_matrix(3);
    let s = CandidateList::new(vec![17]).unwrap();
    assert_eq!(scan_candidates(&r, &s).unwrap(), 17);
}
