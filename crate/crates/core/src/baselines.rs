//! Comparison explanations: occlusion discrepancy and gradient saliency maps,
//! plus Spearman rank agreement between any two maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Objective};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::regions::{lattice, RegionSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Occlusion,
    Saliency,
    Landmark,
}

/// Per-pixel importance; larger means more discriminative.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub method: Method,
    pub patch: usize,
    pub stride: usize,
    /// Model forward passes spent building the map.
    pub evaluations: usize,
}

fn check_patch(patch: usize, width: usize, height: usize) -> Result<()> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::invalid(format!("patch {patch} must be a positive odd size")));
    }
    if patch > width.min(height) {
        return Err(Error::invalid(format!(
            "patch {patch} larger than {width}x{height} image"
        )));
    }
    Ok(())
}

/// Score drop `S_c(I) - S_c(I with patch zeroed)` on the stride lattice
/// (last origin clamped to the border), averaged per pixel over the patches
/// covering it.
pub fn occlusion_map<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    class: usize,
    patch: usize,
    stride: usize,
) -> Result<Heatmap<T>> {
    let (w, h, channels) = image.dims();
    check_patch(patch, w, h)?;
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let base = class_score(model, image, class)?;
    let origins: Vec<(usize, usize)> = lattice(h, patch, stride)
        .into_iter()
        .flat_map(|y0| lattice(w, patch, stride).into_iter().map(move |x0| (x0, y0)))
        .collect();
    let drops = origins
        .par_iter()
        .map(|&(x0, y0)| {
            let mut occluded = image.clone();
            for c in 0..channels {
                for y in y0..y0 + patch {
                    let start = occluded.index(c, y, x0);
                    occluded.pixels_mut()[start..start + patch].fill(T::zero());
                }
            }
            Ok(base - class_score(model, &occluded, class)?)
        })
        .collect::<Result<Vec<T>>>()?;

    let mut sum = vec![T::zero(); w * h];
    let mut count = vec![0u32; w * h];
    for (&(x0, y0), &d) in origins.iter().zip(&drops) {
        for y in y0..y0 + patch {
            for x in x0..x0 + patch {
                sum[y * w + x] += d;
                count[y * w + x] += 1;
            }
        }
    }
    let values = sum
        .into_iter()
        .zip(count)
        .map(|(s, n)| if n == 0 { T::zero() } else { s / T::lit(f64::from(n)) })
        .collect();
    Ok(Heatmap {
        width: w,
        height: h,
        values,
        method: Method::Occlusion,
        patch,
        stride,
        evaluations: origins.len() + 1,
    })
}

fn class_score<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    class: usize,
) -> Result<T> {
    let scores = model.scores(image)?;
    scores.get(class).copied().ok_or(Error::LabelOutOfRange {
        label: class,
        classes: scores.len(),
    })
}

/// `|dS_c/dI|`, max over channels, then a `patch x patch` moving average.
pub fn saliency_map<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    class: usize,
    patch: usize,
) -> Result<Heatmap<T>> {
    let (w, h, channels) = image.dims();
    check_patch(patch, w, h)?;
    let g = model.input_gradient(image, Objective::Score(class))?.grad;
    let raw: Vec<T> = (0..w * h)
        .map(|p| {
            (0..channels)
                .map(|c| g.pixels()[c * w * h + p].abs())
                .fold(T::zero(), T::max)
        })
        .collect();
    Ok(Heatmap {
        width: w,
        height: h,
        values: box_filter(&raw, w, h, patch),
        method: Method::Saliency,
        patch,
        stride: 1,
        evaluations: 1,
    })
}

/// Mean over a centered `patch x patch` window, border pixels replicated.
pub fn box_filter<T: Scalar>(values: &[T], width: usize, height: usize, patch: usize) -> Vec<T> {
    let r = (patch / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let area = T::lit((patch * patch) as f64);
    let mut out = Vec::with_capacity(values.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut s = T::zero();
            for dy in -r..=r {
                let row = clamp(y + dy, height) * width;
                for dx in -r..=r {
                    s += values[row + clamp(x + dx, width)];
                }
            }
            out.push(s / area);
        }
    }
    out
}

/// Landmark mask spread to pixels: `C(i) * sum_{k ∋ i} x_k` per spatial location.
pub fn landmark_heatmap<T: Scalar>(regions: &RegionSet, x: &[T]) -> Result<Heatmap<T>> {
    let (w, h, _) = regions.dims();
    let (patch, stride) = match regions.geometry() {
        crate::regions::RegionGeometry::Grid { window, stride } => (*window, *stride),
        _ => (1, 1),
    };
    Ok(Heatmap {
        width: w,
        height: h,
        values: regions.spread(x)?,
        method: Method::Landmark,
        patch,
        stride,
        evaluations: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agreement {
    /// Spearman rank correlation in `[-1, 1]`.
    pub rho: f64,
    /// Set when either map is constant; `rho` is then 0.
    pub degenerate: bool,
}

/// Spearman correlation of the pixel scores, ties sharing their average rank.
pub fn rank_agreement<T: Scalar>(a: &Heatmap<T>, b: &Heatmap<T>) -> Result<Agreement> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::invalid(format!(
            "heatmaps differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    spearman(&a.values, &b.values)
}

pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<Agreement> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("rank correlation needs two equal-length non-empty series"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(Agreement {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Agreement {
        rho: (cov / (va * vb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[i]
            .partial_cmp(&values[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn linear(w: usize, h: usize, weights: &[f64]) -> Network<f64> {
        let n = w * h;
        let mut net =
            Network::new(vec![n], vec![LayerSpec::Dense { inputs: n, outputs: 2 }]).unwrap();
        let p = net.layers_mut()[0].params[0].values_mut();
        p[..n].copy_from_slice(weights);
        net
    }

    fn map(values: Vec<f64>, w: usize, h: usize) -> Heatmap<f64> {
        Heatmap { width: w, height: h, values, method: Method::Saliency, patch: 1, stride: 1, evaluations: 0 }
    }

    #[test]
    fn occlusion_matches_linear_closed_form() {
        let (w, h) = (9, 7);
        let weights: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 19) as f64 / 7.0 - 1.0).collect();
        let px: Vec<f64> = (0..w * h).map(|i| ((i * 11) % 13) as f64 / 13.0).collect();
        let net = linear(w, h, &weights);
        let img = Image::new(w, h, 1, px.clone()).unwrap();
        let m = occlusion_map(&net, &img, 0, 3, 2).unwrap();

        let xs = lattice(w, 3, 2);
        let ys = lattice(h, 3, 2);
        assert_eq!(m.evaluations, xs.len() * ys.len() + 1);
        for y in 0..h {
            for x in 0..w {
                let mut drops = Vec::new();
                for &y0 in &ys {
                    for &x0 in &xs {
                        if (x0..x0 + 3).contains(&x) && (y0..y0 + 3).contains(&y) {
                            let mut d = 0.0;
                            for yy in y0..y0 + 3 {
                                for xx in x0..x0 + 3 {
                                    d += weights[yy * w + xx] * px[yy * w + xx];
                                }
                            }
                            drops.push(d);
                        }
                    }
                }
                let expected = drops.iter().sum::<f64>() / drops.len() as f64;
                assert!((m.values[y * w + x] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn occluding_background_has_no_effect() {
        let weights = vec![1.0; 25];
        let mut px = vec![0.0; 25];
        px[24] = 1.0;
        let net = linear(5, 5, &weights);
        let img = Image::new(5, 5, 1, px).unwrap();
        let m = occlusion_map(&net, &img, 0, 3, 1).unwrap();
        assert_eq!(m.values[0], 0.0);
        assert!(m.values[24] > 0.0);
    }

    #[test]
    fn occlusion_evaluation_count() {
        let net = linear(32, 32, &[0.01; 1024]);
        let img = Image::filled(32, 32, 1, 0.5);
        let m = occlusion_map(&net, &img, 1, 11, 3).unwrap();
        assert_eq!(m.evaluations, 8 * 8 + 1);
        assert!(occlusion_map(&net, &img, 1, 33, 3).is_err());
        assert!(occlusion_map(&net, &img, 1, 10, 3).is_err());
    }

    #[test]
    fn saliency_of_linear_scorer_is_abs_weights() {
        let weights: Vec<f64> = (0..16).map(|i| i as f64 - 8.0).collect();
        let net = linear(4, 4, &weights);
        let img = Image::filled(4, 4, 1, 0.3);
        let m = saliency_map(&net, &img, 0, 1).unwrap();
        let abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
        assert_eq!(m.values, abs);
        assert_eq!(m.evaluations, 1);
    }

    struct Counting<'a>(&'a Network<f64>, AtomicUsize);

    impl Classifier<f64> for Counting<'_> {
        fn num_classes(&self) -> usize {
            2
        }
        fn scores(&self, image: &Image<f64>) -> Result<Vec<f64>> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.scores(image)
        }
        fn input_gradient(&self, image: &Image<f64>, o: Objective) -> Result<crate::classifier::InputGradient<f64>> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.input_gradient(image, o)
        }
    }

    #[test]
    fn saliency_uses_one_pass_for_any_patch() {
        let net = linear(9, 9, &[0.1; 81]);
        let img = Image::filled(9, 9, 1, 0.3);
        for patch in [1, 3, 5, 9] {
            let c = Counting(&net, AtomicUsize::new(0));
            let m = saliency_map(&c, &img, 0, patch).unwrap();
            assert_eq!(c.1.load(Ordering::SeqCst), 1);
            assert_eq!(m.evaluations, 1);
        }
        let c = Counting(&net, AtomicUsize::new(0));
        let m = occlusion_map(&c, &img, 0, 3, 3).unwrap();
        assert_eq!(c.1.load(Ordering::SeqCst), m.evaluations);
    }

    #[test]
    fn box_filter_preserves_constants() {
        let v = vec![0.7f64; 30];
        for p in [1, 3, 5] {
            for o in box_filter(&v, 6, 5, p) {
                assert!((o - 0.7).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spearman_cases() {
        let a = map(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(rank_agreement(&a, &a).unwrap().rho, 1.0);
        let neg = map(vec![-1.0, -2.0, -3.0, -4.0], 2, 2);
        assert_eq!(rank_agreement(&a, &neg).unwrap().rho, -1.0);
        let b = map(vec![1.0, 3.0, 2.0, 4.0], 2, 2);
        assert!((rank_agreement(&a, &b).unwrap().rho - 0.8).abs() < 1e-12);
        let flat = map(vec![2.0; 4], 2, 2);
        let r = rank_agreement(&a, &flat).unwrap();
        assert_eq!(r, Agreement { rho: 0.0, degenerate: true });
        assert!(rank_agreement(&a, &map(vec![0.0; 6], 3, 2)).is_err());
    }

    #[test]
    fn ties_share_average_rank() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }
}
