use std::f64::consts::PI;

use vsa::camera::{cross, dot, norm, Rig};
use vsa::data::dataset::HEADER_BYTES;
use vsa::data::objects::generate_object;
use vsa::data::render::{render_view, silhouette};
use vsa::data::sampler::sample_pair;
use vsa::data::{generate_dataset, Dataset, GenConfig, SamplerKind, Split};
use vsa::error::VsaError;
use vsa::rng::rng_for;

#[test]
fn rig_views_are_evenly_spaced_and_face_the_origin() {
    for n in [4, 12] {
        let rig = Rig::new(n);
        for i in 0..n {
            let next = rig.azimuth((i + 1) % n) + if i + 1 == n { 2.0 * PI } else { 0.0 };
            assert!((next - rig.azimuth(i) - 2.0 * PI / n as f64).abs() < 1e-12);
            let pose = rig.pose(i, 32, 32).unwrap();
            pose.validate().unwrap();
            let f = pose.forward();
            let to_origin = pose.position.map(|x| -x);
            // the optical axis passes through the origin, in front of the camera
            assert!(norm(cross(f, to_origin)) < 1e-6);
            assert!(dot(f, to_origin) > 0.0);
            let center = pose.project([0.0; 3]).unwrap();
            assert!((center.0 - 16.0).abs() < 1e-9 && (center.1 - 16.0).abs() < 1e-9);
        }
        assert!(rig.pose(n, 32, 32).is_err());
    }
}

/// Fraction of covered pixels of `a` that have a covered pixel of the
/// mirrored `b` within one pixel. Splatting leaves holes and stray rim points
/// that differ between hemispheres, so exact pixel equality is too strict.
fn mirrored_cover(a: &[bool], b: &[bool], w: usize) -> f64 {
    let h = a.len() / w;
    let covered = |x: usize, y: usize| b[y * w + (w - 1 - x)];
    let mut hit = 0;
    let mut total = 0;
    for y in 0..h {
        for x in 0..w {
            if !a[y * w + x] {
                continue;
            }
            total += 1;
            let near = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| covered(xx, yy)));
            hit += near as usize;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn opposite_views_of_a_sphere_are_mirror_silhouettes() {
    let rig = Rig::new(12);
    for seed in 0..3 {
        let sphere = generate_object(0, seed).unwrap();
        for i in 0..6 {
            let a = silhouette(&render_view(&sphere, &rig.pose(i, 32, 32).unwrap(), 32, 32));
            let b = silhouette(&render_view(&sphere, &rig.pose(i + 6, 32, 32).unwrap(), 32, 32));
            assert!(a.iter().any(|&x| x));
            let (ab, ba) = (mirrored_cover(&a, &b, 32), mirrored_cover(&b, &a, 32));
            assert!(ab >= 0.98 && ba >= 0.98, "seed {seed} view {i}: {ab} {ba}");
            let shifted: Vec<bool> = (0..32 * 32).map(|k| k % 32 >= 3 && b[k - 3]).collect();
            assert!(mirrored_cover(&a, &shifted, 32) < 0.98);
        }
    }
}

#[test]
fn random_sampler_covers_every_pair_uniformly() {
    let mut rng = rng_for(1, &[]);
    // 10x the minimum so that +-10% is several standard deviations per cell
    let draws = 1_200_000;
    let mut counts = vec![0usize; 144];
    for _ in 0..draws {
        let p = sample_pair(SamplerKind::Random, 12, 1, &mut rng).unwrap();
        counts[p.sources[0] * 12 + p.target] += 1;
    }
    let expect = draws as f64 / 144.0;
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - expect).abs() < 0.1 * expect, "pair {i}: {c} vs {expect}");
    }
}

#[test]
fn two_random_sources_are_independent_and_may_coincide() {
    let mut rng = rng_for(2, &[]);
    let draws = 60_000;
    let mut equal = 0;
    for _ in 0..draws {
        let p = sample_pair(SamplerKind::Random, 12, 2, &mut rng).unwrap();
        assert_eq!(p.sources.len(), 2);
        equal += (p.sources[0] == p.sources[1]) as usize;
    }
    let f = equal as f64 / draws as f64;
    assert!((f - 1.0 / 12.0).abs() < 0.2 / 12.0, "{f}");
}

#[test]
fn fixed_sampler_always_targets_the_next_view() {
    let mut rng = rng_for(3, &[]);
    let mut seen_wrap = false;
    for _ in 0..5_000 {
        let p = sample_pair(SamplerKind::Fixed, 12, 1, &mut rng).unwrap();
        assert_eq!(p.target, (p.sources[0] + 1) % 12);
        assert_ne!(p.target, p.sources[0]);
        seen_wrap |= p.sources[0] == 11 && p.target == 0;
    }
    assert!(seen_wrap);
    assert!(matches!(sample_pair(SamplerKind::Fixed, 1, 1, &mut rng), Err(VsaError::InvalidArgument(_))));
}

#[test]
fn file_size_matches_the_layout() {
    let cfg = GenConfig { objects: 10, views: 5, size: 16, ..GenConfig::default() };
    let data = generate_dataset(&cfg, Split::Train).unwrap();
    let bytes = data.to_bytes().unwrap();
    // object id + label, then 11 f64 pose fields and 3*16*16 f32 pixels per view
    let per_sample = 4 + 4 + 5 * (11 * 8 + 3 * 16 * 16 * 4);
    assert_eq!(bytes.len(), HEADER_BYTES + 10 * per_sample);
    assert_eq!(data.file_bytes(), bytes.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.vsad");
    data.write(&path).unwrap();
    assert_eq!(Dataset::read(&path).unwrap(), data);

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(Dataset::from_bytes(&bad), Err(VsaError::Format(_))));
    assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 1]), Err(VsaError::Format(_))));
}

#[test]
fn splits_share_classes_but_not_objects() {
    let cfg = GenConfig { objects: 32, size: 16, views: 4, ..GenConfig::default() };
    let train = generate_dataset(&cfg, Split::Train).unwrap();
    let test = generate_dataset(&cfg, Split::Test).unwrap();
    assert_eq!(train.num_classes(), 8);
    assert_ne!(train.samples[0].images[0], test.samples[0].images[0]);
    assert_eq!(generate_dataset(&cfg, Split::Train).unwrap(), train);
}
