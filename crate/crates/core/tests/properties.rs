use proptest::prelude::*;

use vsa::blocks::{patchify, unpatchify, AttentionConfig, CrossAttentionBlock, MultiHeadAttention};
use vsa::camera::{CameraPose, Rig};
use vsa::data::sampler::sample_pair;
use vsa::data::SamplerKind;
use vsa::model::{kept_count, mask_indices};
use vsa::params::{Init, ParamStore};
use vsa::rng::{rng_for, standard_normal};
use vsa::tape::Tape;
use vsa::tensor::Tensor;
use vsa::train::{OptimConfig, Schedule};

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = rng_for(seed, &[]);
    Tensor::from_fn(shape.to_vec(), |_| standard_normal(&mut rng) * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_length_must_match_shape(a in 1usize..5, b in 1usize..5, extra in 1usize..3) {
        prop_assert!(Tensor::<f32>::new([a, b], vec![0.0; a * b]).is_ok());
        prop_assert!(Tensor::<f32>::new([a, b], vec![0.0; a * b + extra]).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, scale in 0.1f64..1e3, seed: u64) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(random(&[rows, cols], seed, scale));
        let y = tape.softmax(x);
        for row in tape.value(y).data().chunks(cols) {
            prop_assert!(row.iter().all(|&v| v.is_finite() && v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        prop_assert_eq!(tape.grad(x).unwrap().shape(), &[rows, cols]);
    }

    #[test]
    fn layer_norm_standardizes(rows in 1usize..5, cols in 4usize..40, scale in 0.1f64..100.0, seed: u64) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(random(&[rows, cols], seed, scale));
        let g = tape.leaf(Tensor::full([cols], 1.0));
        let b = tape.leaf(Tensor::zeros([cols]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4, "var {}", var);
        }
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        for v in [x, g, b] {
            prop_assert_eq!(tape.grad(v).unwrap().shape(), tape.shape(v));
        }
    }

    #[test]
    fn concat_then_narrow_and_identity_matmul(a in 1usize..4, b in 1usize..4, n in 1usize..6, seed: u64) {
        let x = random(&[a, n], seed, 1.0);
        let y = random(&[b, n], seed ^ 1, 1.0);
        let c = Tensor::concat(&[&x, &y], 0).unwrap();
        prop_assert_eq!(c.narrow(0, 0, a).unwrap(), x.clone());
        prop_assert_eq!(c.narrow(0, a, b).unwrap(), y);
        prop_assert_eq!(x.matmul(&Tensor::eye(n)).unwrap(), x);
    }

    #[test]
    fn patchify_inverts(p in 1usize..5, gh in 1usize..4, gw in 1usize..4, c in 1usize..4, seed: u64) {
        let img = random(&[c, gh * p, gw * p], seed, 1.0);
        let patches = patchify(&img, p).unwrap();
        prop_assert_eq!(patches.shape(), &[gh * gw, c * p * p]);
        prop_assert_eq!(unpatchify(&patches, gh * p, gw * p, p).unwrap(), img);
    }

    #[test]
    fn masks_are_sorted_distinct_and_sized(n in 1usize..64, ratio in 0.0f64..0.99, seed: u64) {
        let kept = mask_indices(n, ratio, &mut rng_for(seed, &[])).unwrap();
        prop_assert_eq!(kept.len(), kept_count(n, ratio));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kept.iter().all(|&i| i < n));
    }

    #[test]
    fn fixed_sampler_is_the_successor_bijection(n in 2usize..40, seed: u64) {
        let mut rng = rng_for(seed, &[]);
        let mut target_of = vec![None; n];
        for _ in 0..20 * n {
            let p = sample_pair(SamplerKind::Fixed, n, 1, &mut rng).unwrap();
            prop_assert_eq!(p.target, (p.sources[0] + 1) % n);
            target_of[p.sources[0]] = Some(p.target);
        }
        let mut hit: Vec<usize> = target_of.iter().flatten().copied().collect();
        let len = hit.len();
        hit.sort_unstable();
        hit.dedup();
        prop_assert_eq!(hit.len(), len);
    }

    #[test]
    fn schedule_stays_within_zero_and_peak(
        warmup in 0usize..20, extra in 1usize..60, spe in 1u64..20, batch in 1usize..512, step in 0u64..2000,
    ) {
        let cfg = OptimConfig { warmup_epochs: warmup, total_epochs: warmup + extra, batch_size: batch, ..OptimConfig::pretrain() };
        let s = Schedule::new(&cfg, spe);
        let lr = s.lr_at(step);
        prop_assert!((0.0..=s.peak * (1.0 + 1e-12)).contains(&lr));
        if step >= s.total_steps {
            prop_assert_eq!(lr, 0.0);
        }
    }

    #[test]
    fn camera_records_round_trip(x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.5f64..5.0, fov in 20.0f64..90.0) {
        let pose = CameraPose::look_at([x, y, z], [0.0; 3], fov, 32, 24).unwrap();
        let back = CameraPose::from_record(&pose.to_record());
        prop_assert_eq!(&back, &pose);
        let r = pose.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rig_azimuth_steps_are_equal(n in 1usize..40) {
        let rig = Rig::new(n);
        for i in 1..n {
            let d = rig.azimuth(i) - rig.azimuth(i - 1);
            prop_assert!((d - std::f64::consts::TAU / n as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn attention_output_follows_the_query_for_every_length_pair() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = rng_for(0, &[]);
    let mut init = Init { rng: &mut rng, std: 0.3 };
    let cfg = AttentionConfig::new(8, 2).unwrap();
    let attn = MultiHeadAttention::new(&mut store, "a", cfg, &mut init);
    let cross = CrossAttentionBlock::new(&mut store, "c", cfg, &mut init);
    for lq in [1, 4, 16, 49] {
        for lk in [1, 16, 32, 64] {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, |_| false);
            let q = tape.constant(random(&[2, lq, 8], 1, 1.0));
            let k = tape.constant(random(&[2, lk, 8], 2, 1.0));
            let v = tape.constant(random(&[2, lk, 8], 3, 1.0));
            let (out, w) = attn.forward_with_weights(&mut tape, &p, q, k, v).unwrap();
            assert_eq!(tape.shape(out), &[2, lq, 8]);
            for row in tape.value(w).data().chunks(lk) {
                assert!(row.iter().all(|&x| x >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let y = cross.forward(&mut tape, &p, v, k, q).unwrap();
            assert_eq!(tape.shape(y), &[2, lq, 8], "lq {lq} lk {lk}");
        }
    }
}
