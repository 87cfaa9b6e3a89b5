use vsa::camera::{pooled_ray_tokens, ray_field, CameraPose, Rig};
use vsa::data::{generate_dataset, GenConfig, Split};
use vsa::gradcheck::randomize;
use vsa::model::{kept_count, mask_indices, vsa_loss, PoseMode, ViewPose, VsaBatch, VsaConfig, VsaModel};
use vsa::rng::rng_for;
use vsa::tape::Tape;
use vsa::tensor::Tensor;

fn small(pose_mode: PoseMode) -> VsaConfig {
    VsaConfig {
        image_size: 16,
        patch_size: 8,
        enc_dim: 16,
        enc_depth: 1,
        enc_heads: 2,
        dec_dim: 16,
        dec_depth: 2,
        dec_cross: 2,
        dec_heads: 2,
        pose_mode,
        ..VsaConfig::default()
    }
}

fn random_model(cfg: VsaConfig, seed: u64) -> VsaModel<f64> {
    let mut m = VsaModel::<f64>::new(cfg, seed).unwrap();
    randomize(&mut m.params, seed + 1, 0.3);
    m
}

fn view(cfg: &VsaConfig, i: usize) -> ViewPose {
    ViewPose { index: i, camera: Rig::new(cfg.n_views).pose(i, cfg.image_size, cfg.image_size).unwrap() }
}

fn random_image(cfg: &VsaConfig, seed: u64) -> Tensor<f64> {
    let b = VsaBatch::<f64>::synthetic(&VsaConfig { num_source_views: 1, ..cfg.clone() }, 1, seed).unwrap();
    b.targets.reshape(vec![cfg.channels, cfg.image_size, cfg.image_size]).unwrap()
}

#[test]
fn query_determines_output_shape() {
    for s in [1, 2, 4] {
        for mask in [0.0, 0.75] {
            let cfg = VsaConfig { num_source_views: s, mask_ratio: mask, ..VsaConfig::tiny() };
            let model = VsaModel::<f32>::new(cfg.clone(), 1).unwrap();
            let batch = VsaBatch::<f32>::synthetic(&cfg, 2, 2).unwrap();
            let masks = batch.draw_masks(&cfg, &mut rng_for(3, &[])).unwrap();
            let kept = kept_count(cfg.num_patches(), mask);
            assert!(masks.iter().flatten().all(|k| k.len() == kept));
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, |_| false);
            let out = model.forward_batch(&mut tape, &p, &batch, &masks).unwrap();
            assert_eq!(tape.shape(out), &[2, 3, 32, 32], "s={s} mask={mask}");
            assert!(tape.value(out).all_finite());
        }
    }
}

#[test]
fn decoder_output_is_sixteen_patches_of_192() {
    let cfg = VsaConfig::tiny();
    let model = VsaModel::<f32>::new(cfg.clone(), 0).unwrap();
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let v = tape.constant(Tensor::zeros([1, 16, cfg.dec_dim]));
    let q = model.pose_tokens(&mut tape, &p, &[view(&cfg, 0)]).unwrap();
    let out = model.decode(&mut tape, &p, v, q, q).unwrap();
    assert_eq!(tape.shape(out), &[1, 16, 192]);
}

#[test]
fn decode_matches_a_hand_wired_two_block_reference() {
    let cfg = VsaConfig { num_source_views: 2, ..small(PoseMode::Discrete) };
    let model = random_model(cfg.clone(), 4);
    let n = cfg.num_patches();
    let rand = |seed: u64, len: usize| {
        let mut rng = rng_for(seed, &[]);
        Tensor::from_fn([1, len, cfg.dec_dim], |_| vsa::rng::standard_normal(&mut rng))
    };
    let (value, key, query, fresh) = (rand(1, 2 * n), rand(2, 2 * n), rand(3, n), rand(4, n));

    let run = |second_key: Option<&Tensor<f64>>, second_query: Option<&Tensor<f64>>| {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, |_| false);
        let (v, k, q) = (tape.constant(value.clone()), tape.constant(key.clone()), tape.constant(query.clone()));
        let x = model.cross_blocks[0].forward(&mut tape, &p, v, k, q).unwrap();
        // the fused key is longer than the first block's output
        let k2 = second_key.map_or(q, |t| tape.constant(t.clone()));
        let q2 = second_query.map_or(q, |t| tape.constant(t.clone()));
        let mut x = model.cross_blocks[1].forward(&mut tape, &p, x, k2, q2).unwrap();
        for blk in &model.dec_blocks {
            x = blk.forward(&mut tape, &p, x).unwrap();
        }
        let x = model.dec_norm.forward(&mut tape, &p, x).unwrap();
        let y = model.pixel_head.forward(&mut tape, &p, x).unwrap();
        tape.value(y).clone()
    };

    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let (v, k, q) = (tape.constant(value.clone()), tape.constant(key.clone()), tape.constant(query.clone()));
    let out = model.decode(&mut tape, &p, v, k, q).unwrap();
    let reference = run(None, None);
    assert_eq!(tape.value(out), &reference);
    assert_ne!(run(Some(&fresh), None), reference);
    assert_ne!(run(None, Some(&fresh)), reference);
}

#[test]
fn every_cross_depth_up_to_the_decoder_depth_runs() {
    for cross in 1..=4 {
        let cfg = VsaConfig { dec_depth: 4, dec_cross: cross, ..VsaConfig::tiny() };
        let model = VsaModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.cross_blocks.len() + model.dec_blocks.len(), 4);
        let batch = VsaBatch::<f32>::synthetic(&cfg, 1, 0).unwrap();
        let masks = batch.draw_masks(&cfg, &mut rng_for(0, &[])).unwrap();
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, |_| false);
        let out = model.forward_batch(&mut tape, &p, &batch, &masks).unwrap();
        assert_eq!(tape.shape(out), &[1, 3, 32, 32]);
    }
    assert!(VsaConfig { dec_cross: 0, ..VsaConfig::tiny() }.validate().is_err());
    assert!(VsaConfig { dec_cross: 5, ..VsaConfig::tiny() }.validate().is_err());
}

#[test]
fn masked_two_source_fusion_keeps_keys_aligned_with_values() {
    let cfg = VsaConfig { num_source_views: 2, mask_ratio: 0.75, ..VsaConfig::tiny() };
    let model = VsaModel::<f64>::new(cfg.clone(), 5).unwrap();
    let batch = VsaBatch::<f64>::synthetic(&cfg, 1, 6).unwrap();
    let masks = batch.draw_masks(&cfg, &mut rng_for(7, &[])).unwrap();
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let mut values = vec![];
    let mut keys = vec![];
    for (s, kept) in masks.iter().enumerate() {
        let img = tape.constant(batch.sources[s].clone());
        let enc = model.encode(&mut tape, &p, img, Some(kept)).unwrap();
        assert_eq!(tape.shape(enc), &[1, 4, cfg.enc_dim]);
        values.push(model.enc_to_dec.forward(&mut tape, &p, enc).unwrap());
        let full = model.pose_tokens(&mut tape, &p, &batch.source_poses[s]).unwrap();
        keys.push(tape.gather_rows(full, kept).unwrap());
    }
    let (v, k) = VsaModel::fuse_sources(&mut tape, &values, &keys).unwrap();
    assert_eq!(tape.shape(v), &[1, 8, cfg.dec_dim]);
    assert_eq!(tape.shape(k), &[1, 8, cfg.dec_dim]);
    // row j of the fused key is the pose-table row of the j-th kept patch
    let table = model.pose_table().unwrap();
    let d = cfg.dec_dim;
    let fused = tape.value(k).data().to_vec();
    let mut j = 0;
    for (s, kept) in masks.iter().enumerate() {
        let pose = batch.source_poses[s][0].index;
        for &patch in &kept[0] {
            let start = (pose * cfg.num_patches() + patch) * d;
            assert_eq!(&fused[j * d..(j + 1) * d], &table.data()[start..start + d]);
            j += 1;
        }
    }
    let (v1, k1) = VsaModel::fuse_sources(&mut tape, &values[..1], &keys[..1]).unwrap();
    assert_eq!((v1, k1), (values[0], keys[0]));
}

#[test]
fn discrete_table_has_one_distinct_sequence_per_view() {
    let model = VsaModel::<f32>::new(VsaConfig::default(), 0).unwrap();
    let table = model.pose_table().unwrap();
    assert_eq!(table.shape(), &[12, 16, 384]);
    let row = |i: usize| table.narrow(0, i, 1).unwrap();
    assert_ne!(row(0), row(5));
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let cfg = &model.cfg;
    let q = model.pose_tokens(&mut tape, &p, &[view(cfg, 0), view(cfg, 5)]).unwrap();
    assert_eq!(tape.shape(q), &[2, 16, 384]);
}

#[test]
fn pinhole_rays_at_the_origin_point_down_minus_z() {
    let pose = CameraPose::look_at([0.0; 3], [0.0, 0.0, -1.0], 60.0, 33, 33).unwrap();
    let field = ray_field(&pose, 33, 33).unwrap();
    assert_eq!(field.shape(), &[33, 33, 6]);
    let center = &field.data()[(16 * 33 + 16) * 6..(16 * 33 + 17) * 6];
    for (got, want) in center.iter().zip([0.0, 0.0, 0.0, 0.0, 0.0, -1.0]) {
        assert!((got - want).abs() < 1e-9, "{center:?}");
    }
    for px in field.data().chunks(6) {
        assert!(px[..3].iter().all(|&o| o == 0.0));
        let n = (px[3] * px[3] + px[4] * px[4] + px[5] * px[5]).sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
    let pooled = pooled_ray_tokens(&pose, 32, 32, 8).unwrap();
    assert_eq!(pooled.shape(), &[16, 6]);
}

#[test]
fn synthesis_depends_on_the_target_pose_only_through_the_embedding() {
    for mode in [PoseMode::Discrete, PoseMode::Ray] {
        let cfg = small(mode);
        let mut model = random_model(cfg.clone(), 8);
        let src = random_image(&cfg, 9);
        let run = |m: &VsaModel<f64>, target: usize| {
            m.synthesize(&[src.clone()], &[view(&cfg, 0)], &view(&cfg, target), 0.0, &mut rng_for(0, &[])).unwrap()
        };
        let (a, b) = (run(&model, 3), run(&model, 7));
        assert!(a.all_finite() && b.all_finite());
        assert_eq!(a.shape(), &[3, 16, 16]);
        let diff = a.zip_map(&b, |x, y| x - y).unwrap().max_abs();
        assert!(diff > 1e-3, "{mode:?}: target pose had no effect ({diff})");
        if mode == PoseMode::Discrete {
            model.zero_pose_embedding();
            assert_eq!(run(&model, 3), run(&model, 7));
        }
    }
}

#[test]
fn untrained_models_synthesize_finite_images() {
    for s in [1, 2, 4] {
        let cfg = VsaConfig { num_source_views: s, ..VsaConfig::tiny() };
        let model = VsaModel::<f32>::new(cfg.clone(), 0).unwrap();
        let batch = VsaBatch::<f32>::synthetic(&cfg, 1, 1).unwrap();
        let sources: Vec<_> = batch.sources.iter().map(|t| t.reshape(vec![3, 32, 32]).unwrap()).collect();
        let poses: Vec<_> = batch.source_poses.iter().map(|p| p[0].clone()).collect();
        let out = model.synthesize(&sources, &poses, &batch.target_poses[0], 0.0, &mut rng_for(0, &[])).unwrap();
        assert_eq!(out.shape(), &[3, 32, 32]);
        assert!(out.all_finite());
        assert!(model.synthesize(&sources[..s - 1], &poses[..s - 1], &poses[0], 0.0, &mut rng_for(0, &[])).is_err());
    }
}

#[test]
fn same_seed_gives_identical_synthesis() {
    let cfg = VsaConfig { mask_ratio: 0.5, ..small(PoseMode::Discrete) };
    let model = random_model(cfg.clone(), 2);
    let src = random_image(&cfg, 3);
    let run = |seed| model.synthesize(&[src.clone()], &[view(&cfg, 1)], &view(&cfg, 2), 0.5, &mut rng_for(seed, &[])).unwrap();
    assert_eq!(run(11), run(11));
}

#[test]
fn gray_prediction_loss_is_the_variance_around_gray() {
    let data = generate_dataset(&GenConfig { objects: 1, ..GenConfig::default() }, Split::Train).unwrap();
    let target = &data.samples[0].images[4];
    let oracle: f64 = target.data().iter().map(|&v| (v as f64 - 0.5).powi(2)).sum::<f64>() / target.numel() as f64;
    let target = target.cast::<f64>().reshape(vec![1, 3, 32, 32]).unwrap();
    let mut tape = Tape::new();
    let gray = tape.constant(Tensor::full([1, 3, 32, 32], 0.5));
    let loss = vsa_loss(&mut tape, gray, &target).unwrap();
    assert!((tape.value(loss).item() - oracle).abs() < 1e-12);
    let perfect = tape.constant(target.clone());
    let zero = vsa_loss(&mut tape, perfect, &target).unwrap();
    assert_eq!(tape.value(zero).item(), 0.0);
}

#[test]
fn mask_keeps_each_index_half_the_time() {
    let mut rng = rng_for(42, &[]);
    let mut counts = [0usize; 16];
    let draws = 10_000;
    for _ in 0..draws {
        let kept = mask_indices(16, 0.5, &mut rng).unwrap();
        assert_eq!(kept.len(), 8);
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        for i in kept {
            counts[i] += 1;
        }
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }
    assert_eq!(kept_count(16, 0.75), 4);
    assert_eq!(mask_indices(16, 0.0, &mut rng).unwrap(), (0..16).collect::<Vec<_>>());
    assert!(mask_indices(16, 1.0, &mut rng).is_err());
}
