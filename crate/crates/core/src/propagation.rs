//! Flow-guided backward warping and the frame-by-frame propagation state.
//!
//! Flow convention: a field stored at the pixels of the *target* grid points
//! into the source, so `out(p) = src(p + flow(p))`. Samples that land outside
//! the source grid read zeros.

use ndarray::{Array3, Array4, ArrayView3, Axis};

use dvss_nn::layers::{resize_bilinear, resize_bilinear_backward};
use dvss_nn::Real;

use crate::error::{ensure_shape, Result};
use crate::Error;

/// Per-pixel displacement `(u, v)` in pixels of the grid it is stored on.
///
/// Backed by a `(2, H, W)` array; channel 0 is horizontal (`u`, +x to the
/// right), channel 1 vertical (`v`, +y downwards).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T = f32>(Array3<T>);

impl<T: Real> FlowField<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        ensure_shape!(data.len_of(Axis(0)) == 2, "flow needs 2 channels, got {}", data.len_of(Axis(0)));
        Ok(Self(data))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Array3::zeros((2, height, width)))
    }

    pub fn constant(height: usize, width: usize, u: T, v: T) -> Self {
        let mut f = Self::zeros(height, width);
        f.0.index_axis_mut(Axis(0), 0).fill(u);
        f.0.index_axis_mut(Axis(0), 1).fill(v);
        f
    }

    pub fn from_uv(u: ndarray::Array2<T>, v: ndarray::Array2<T>) -> Result<Self> {
        ensure_shape!(u.dim() == v.dim(), "u {:?} and v {:?} differ", u.dim(), v.dim());
        let data = ndarray::stack(Axis(0), &[u.view(), v.view()]).expect("equal shapes");
        Ok(Self(data))
    }

    pub fn height(&self) -> usize {
        self.0.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.0.len_of(Axis(2))
    }

    pub fn u(&self) -> ndarray::ArrayView2<'_, T> {
        self.0.index_axis(Axis(0), 0)
    }

    pub fn v(&self) -> ndarray::ArrayView2<'_, T> {
        self.0.index_axis(Axis(0), 1)
    }

    pub fn as_array(&self) -> &Array3<T> {
        &self.0
    }

    pub fn into_array(self) -> Array3<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Mean Euclidean length of the displacement vectors.
    pub fn mean_magnitude(&self) -> f64 {
        let n = (self.height() * self.width()).max(1) as f64;
        self.u()
            .iter()
            .zip(self.v().iter())
            .map(|(a, b)| {
                let (a, b) = (a.to_f64().unwrap_or(0.0), b.to_f64().unwrap_or(0.0));
                (a * a + b * b).sqrt()
            })
            .sum::<f64>()
            / n
    }

    pub fn cast<U: Real>(&self) -> FlowField<U> {
        FlowField(self.0.mapv(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).expect("finite")))
    }
}

/// Corner indices and weights of one bilinear sample.
struct Sample<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

#[inline]
fn sample_at<T: Real>(px: usize, py: usize, u: T, v: T) -> Sample<T> {
    let x = T::from_usize(px).expect("index") + u;
    let y = T::from_usize(py).expect("index") + v;
    let xf = x.floor();
    let yf = y.floor();
    Sample {
        x0: xf.to_isize().unwrap_or(isize::MIN / 2),
        y0: yf.to_isize().unwrap_or(isize::MIN / 2),
        fx: x - xf,
        fy: y - yf,
    }
}

#[inline]
fn tap<T: Real>(plane: &ndarray::ArrayView2<T>, x: isize, y: isize) -> T {
    let (h, w) = plane.dim();
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[[y as usize, x as usize]]
    }
}

fn check_warp_inputs<T: Real>(src: &ArrayView3<T>, flow: &FlowField<T>) -> Result<()> {
    let (_, h, w) = src.dim();
    ensure_shape!(
        (flow.height(), flow.width()) == (h, w),
        "flow {}x{} does not match source {}x{}",
        flow.height(),
        flow.width(),
        h,
        w
    );
    if !flow.is_finite() {
        return Err(Error::InvalidArgument("non-finite flow".into()));
    }
    Ok(())
}

/// Backward-warps every channel of `src` (`C x H x W`) with bilinear sampling.
pub fn warp_bilinear<T: Real>(src: ArrayView3<T>, flow: &FlowField<T>) -> Result<Array3<T>> {
    check_warp_inputs(&src, flow)?;
    let (c, h, w) = src.dim();
    let mut out = Array3::zeros((c, h, w));
    let (u, v) = (flow.u(), flow.v());
    for py in 0..h {
        for px in 0..w {
            let s = sample_at(px, py, u[[py, px]], v[[py, px]]);
            let (one, fx, fy) = (T::one(), s.fx, s.fy);
            for ch in 0..c {
                let plane = src.index_axis(Axis(0), ch);
                let top = (one - fx) * tap(&plane, s.x0, s.y0) + fx * tap(&plane, s.x0 + 1, s.y0);
                let bot = (one - fx) * tap(&plane, s.x0, s.y0 + 1) + fx * tap(&plane, s.x0 + 1, s.y0 + 1);
                out[[ch, py, px]] = (one - fy) * top + fy * bot;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`warp_bilinear`] with respect to the source and the flow.
///
/// The flow gradient is the derivative of the bilinear weights; at integer
/// sample positions it is the one-sided (right) derivative.
pub fn warp_bilinear_backward<T: Real>(
    src: ArrayView3<T>,
    flow: &FlowField<T>,
    d_out: ArrayView3<T>,
) -> Result<(Array3<T>, FlowField<T>)> {
    check_warp_inputs(&src, flow)?;
    ensure_shape!(d_out.dim() == src.dim(), "gradient {:?} vs source {:?}", d_out.dim(), src.dim());
    let (c, h, w) = src.dim();
    let mut d_src = Array3::zeros((c, h, w));
    let mut d_flow = Array3::zeros((2, h, w));
    let (u, v) = (flow.u(), flow.v());
    let one = T::one();
    for py in 0..h {
        for px in 0..w {
            let s = sample_at(px, py, u[[py, px]], v[[py, px]]);
            let (fx, fy) = (s.fx, s.fy);
            let mut du = T::zero();
            let mut dv = T::zero();
            let corners = [
                (s.x0, s.y0, (one - fx) * (one - fy)),
                (s.x0 + 1, s.y0, fx * (one - fy)),
                (s.x0, s.y0 + 1, (one - fx) * fy),
                (s.x0 + 1, s.y0 + 1, fx * fy),
            ];
            for ch in 0..c {
                let g = d_out[[ch, py, px]];
                if g == T::zero() {
                    continue;
                }
                let plane = src.index_axis(Axis(0), ch);
                let (a, b) = (tap(&plane, s.x0, s.y0), tap(&plane, s.x0 + 1, s.y0));
                let (cc, d) = (tap(&plane, s.x0, s.y0 + 1), tap(&plane, s.x0 + 1, s.y0 + 1));
                du += g * ((one - fy) * (b - a) + fy * (d - cc));
                dv += g * ((one - fx) * (cc - a) + fx * (d - b));
                for &(x, y, wgt) in &corners {
                    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                        d_src[[ch, y as usize, x as usize]] += g * wgt;
                    }
                }
            }
            d_flow[[0, py, px]] = du;
            d_flow[[1, py, px]] = dv;
        }
    }
    Ok((d_src, FlowField(d_flow)))
}

/// Warps each item of an NCHW batch with its own flow.
pub fn warp_batch<T: Real>(src: &Array4<T>, flows: &[FlowField<T>]) -> Result<Array4<T>> {
    ensure_shape!(src.len_of(Axis(0)) == flows.len(), "batch {} vs {} flows", src.len_of(Axis(0)), flows.len());
    let mut out = Array4::zeros(src.raw_dim());
    for (b, flow) in flows.iter().enumerate() {
        let w = warp_bilinear(src.index_axis(Axis(0), b), flow)?;
        out.index_axis_mut(Axis(0), b).assign(&w);
    }
    Ok(out)
}

/// Resamples a flow to a grid `factor` times coarser and rescales its values
/// so that displacements stay in units of the coarse grid.
pub fn downscale_flow<T: Real>(flow: &FlowField<T>, factor: usize) -> Result<FlowField<T>> {
    let (h, w) = (flow.height(), flow.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!("factor {factor} does not divide {h}x{w}")));
    }
    if factor == 1 {
        return Ok(flow.clone());
    }
    let x = flow.0.view().insert_axis(Axis(0));
    let small = resize_bilinear(x, h / factor, w / factor);
    let scale = T::one() / T::from_usize(factor).expect("factor");
    Ok(FlowField(small.index_axis_move(Axis(0), 0).mapv(|v| v * scale)))
}

/// Adjoint of [`downscale_flow`] for a fine grid of `(h, w)`.
pub fn downscale_flow_backward<T: Real>(d_small: &FlowField<T>, factor: usize, h: usize, w: usize) -> FlowField<T> {
    if factor == 1 {
        return d_small.clone();
    }
    let scale = T::one() / T::from_usize(factor).expect("factor");
    let g = d_small.0.mapv(|v| v * scale).insert_axis(Axis(0));
    FlowField(resize_bilinear_backward(g.view(), h, w).index_axis_move(Axis(0), 0))
}

/// A frame handed to a flow estimator, with its index in the clip.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub index: usize,
    pub image: ArrayView3<'a, f32>,
}

/// Source of the flow that aligns `prev` to `next` (stored on `next`'s grid).
pub trait FlowEstimator {
    fn estimate(&mut self, prev: FrameRef<'_>, next: FrameRef<'_>) -> Result<FlowField<f32>>;
}

/// Ground-truth flows of a clip, keyed by the index of the earlier frame.
pub struct GroundTruthFlow<'a> {
    pub flows: &'a std::collections::BTreeMap<usize, FlowField<f32>>,
}

impl FlowEstimator for GroundTruthFlow<'_> {
    fn estimate(&mut self, prev: FrameRef<'_>, next: FrameRef<'_>) -> Result<FlowField<f32>> {
        if next.index != prev.index + 1 {
            return Err(Error::InvalidArgument(format!(
                "ground-truth flow only links adjacent frames, got {} -> {}",
                prev.index, next.index
            )));
        }
        self.flows
            .get(&prev.index)
            .cloned()
            .ok_or_else(|| Error::MissingPrerequisite(format!("no ground-truth flow for frame {}", prev.index)))
    }
}

/// What is carried from one non-key frame to the next.
#[derive(Debug, Clone)]
pub struct PropagationState {
    /// Propagated (or corrected) feature, `C x H/s x W/s`.
    pub prop_feature: Array3<f32>,
    /// Key frame warped along the same chain of flows.
    pub prop_frame: Array3<f32>,
    /// The true frame at the current position, used for the next flow estimate.
    pub prev_frame: Array3<f32>,
    pub key_frame_index: usize,
    pub distance: usize,
}

impl PropagationState {
    pub fn at_key(key_frame_index: usize, frame: Array3<f32>, feature: Array3<f32>) -> Self {
        Self {
            prop_feature: feature,
            prop_frame: frame.clone(),
            prev_frame: frame,
            key_frame_index,
            distance: 0,
        }
    }

    pub fn frame_index(&self) -> usize {
        self.key_frame_index + self.distance
    }
}

/// Advances the state by one frame. Returns the new state and the full
/// resolution flow that was used.
pub fn propagate_step(
    state: &PropagationState,
    frame_next: ArrayView3<f32>,
    flow_source: &mut dyn FlowEstimator,
    feature_stride: usize,
) -> Result<(PropagationState, FlowField<f32>)> {
    ensure_shape!(
        frame_next.dim() == state.prop_frame.dim(),
        "next frame {:?} vs propagated frame {:?}",
        frame_next.dim(),
        state.prop_frame.dim()
    );
    let index = state.frame_index();
    let flow = flow_source.estimate(
        FrameRef { index, image: state.prev_frame.view() },
        FrameRef { index: index + 1, image: frame_next },
    )?;
    let prop_frame = warp_bilinear(state.prop_frame.view(), &flow)?;
    let small = downscale_flow(&flow, feature_stride)?;
    let prop_feature = warp_bilinear(state.prop_feature.view(), &small)?;
    let next = PropagationState {
        prop_feature,
        prop_frame,
        prev_frame: frame_next.to_owned(),
        key_frame_index: state.key_frame_index,
        distance: state.distance + 1,
    };
    Ok((next, flow))
}
