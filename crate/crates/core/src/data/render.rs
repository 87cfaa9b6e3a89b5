//! One-pixel z-buffered point splatting.

use crate::camera::{norm, CameraPose};
use crate::data::objects::ProceduralObject;
use crate::tensor::Tensor;

pub const BACKGROUND: f32 = 1.0;

/// Render `[3, H, W]` in `[0, 1]` on a white background. The nearest point
/// per pixel wins; brightness falls linearly from 1 to 0.5 across the depth
/// range `[d - 1, d + 1]`, where `d` is the camera's distance to the origin.
/// Points behind the camera are dropped.
pub fn render_view(object: &ProceduralObject, pose: &CameraPose, height: usize, width: usize) -> Tensor<f32> {
    let plane = height * width;
    let mut img = vec![BACKGROUND; 3 * plane];
    let mut zbuf = vec![f64::INFINITY; plane];
    let center = norm(pose.position);
    for (p, color) in object.points.iter().zip(&object.colors) {
        let Some((u, v, depth)) = pose.project(*p) else { continue };
        if !(u >= 0.0 && v >= 0.0) {
            continue;
        }
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        if x >= width || y >= height {
            continue;
        }
        let i = y * width + x;
        if depth >= zbuf[i] {
            continue;
        }
        zbuf[i] = depth;
        let t = ((depth - (center - 1.0)) / 2.0).clamp(0.0, 1.0);
        let shade = (1.0 - 0.5 * t) as f32;
        for ch in 0..3 {
            img[ch * plane + i] = (color[ch] * shade).clamp(0.0, 1.0);
        }
    }
    Tensor::new([3, height, width], img).expect("extents match buffer")
}

/// Pixels that differ from the background, `[H * W]` row-major.
pub fn silhouette(image: &Tensor<f32>) -> Vec<bool> {
    let s = image.shape();
    let plane = s[1] * s[2];
    let d = image.data();
    (0..plane).map(|i| (0..s[0]).any(|c| d[c * plane + i] != BACKGROUND)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Rig;
    use crate::data::objects::generate_object;

    #[test]
    fn empty_cloud_is_white() {
        let pose = Rig::new(12).pose(0, 16, 16).unwrap();
        let img = render_view(&ProceduralObject::empty(), &pose, 16, 16);
        assert!(img.data().iter().all(|&v| v == BACKGROUND));
    }

    #[test]
    fn origin_lands_in_the_center_pixel() {
        let pose = CameraPose::look_at([0.0, 0.0, 2.5], [0.0; 3], 50.0, 32, 32).unwrap();
        let obj = ProceduralObject { points: vec![[0.0; 3]], colors: vec![[0.2, 0.4, 0.6]], ..ProceduralObject::empty() };
        let img = render_view(&obj, &pose, 32, 32);
        let sil = silhouette(&img);
        assert_eq!(sil.iter().filter(|&&b| b).count(), 1);
        assert!(sil[16 * 32 + 16]);
        // depth equals the camera distance: mid-range shading 0.75
        assert!((img.at(&[0, 16, 16]) - 0.2 * 0.75).abs() < 1e-6);
    }

    #[test]
    fn nearer_point_wins() {
        let pose = CameraPose::look_at([0.0, 0.0, 2.5], [0.0; 3], 50.0, 32, 32).unwrap();
        let obj = ProceduralObject {
            points: vec![[0.0, 0.0, -0.5], [0.0, 0.0, 0.5]],
            colors: vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            ..ProceduralObject::empty()
        };
        let img = render_view(&obj, &pose, 32, 32);
        assert!(img.at(&[2, 16, 16]) > 0.0 && img.at(&[0, 16, 16]) == 0.0);
    }

    #[test]
    fn images_are_in_range_and_not_blank() {
        let rig = Rig::new(12);
        for class in 0..8 {
            let obj = generate_object(class, 3).unwrap();
            let img = render_view(&obj, &rig.pose(2, 32, 32).unwrap(), 32, 32);
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(silhouette(&img).iter().filter(|&&b| b).count() > 30, "class {class}");
        }
    }
}
