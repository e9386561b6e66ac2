//! Optional horizontal flip and random crop.

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::propagation::FlowField;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    pub hflip: bool,
    /// `[height, width]` of a random crop.
    pub crop: Option<[usize; 2]>,
}

/// Mirror images left-right. Works on any `(C, H, W)` array.
pub fn hflip_frame<T: Clone>(x: &Array3<T>) -> Array3<T> {
    x.slice(s![.., .., ..;-1]).to_owned()
}

pub fn hflip_map<T: Clone>(x: &Array2<T>) -> Array2<T> {
    x.slice(s![.., ..;-1]).to_owned()
}

/// Mirrored flow: positions flip and the horizontal component changes sign.
pub fn hflip_flow(flow: &FlowField<f32>) -> FlowField<f32> {
    let mut a = hflip_frame(flow.as_array());
    a.index_axis_mut(Axis(0), 0).mapv_inplace(|u| -u);
    FlowField::new(a).expect("two channels")
}

/// Top-left corner of a uniformly placed `ch x cw` window, aligned to
/// multiples of `align` so that strided feature grids stay aligned.
pub fn random_crop_window<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    ch: usize,
    cw: usize,
    align: usize,
    rng: &mut R,
) -> (usize, usize) {
    let align = align.max(1);
    let pick = |span: usize, rng: &mut R| rng.random_range(0..=span / align) * align;
    let y = pick(h.saturating_sub(ch), rng);
    let x = pick(w.saturating_sub(cw), rng);
    (y, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::warp_bilinear;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn flip_commutes_with_warp() {
        let src = Array3::from_shape_fn((1, 3, 5), |(_, y, x)| (y * 5 + x) as f32);
        let flow = FlowField::from_uv(Array2::from_elem((3, 5), 1.0f32), Array2::zeros((3, 5))).unwrap();
        let a = hflip_frame(&warp_bilinear(src.view(), &flow).unwrap());
        let b = warp_bilinear(hflip_frame(&src).view(), &hflip_flow(&flow)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn map_flip() {
        assert_eq!(hflip_map(&array![[1, 2, 3]]), array![[3, 2, 1]]);
    }

    #[test]
    fn crop_window_in_bounds_and_aligned() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (y, x) = random_crop_window(64, 96, 32, 64, 4, &mut rng);
            assert!(y + 32 <= 64 && x + 64 <= 96 && y % 4 == 0 && x % 4 == 0);
        }
    }
}
