//! Frequency-domain evaluation of the same-padded convolution.
//!
//! Every channel is zero-padded to a transform length `n ≥ L + K − 1`, so
//! circular correlation equals the linear one on the rows we keep. Per
//! frequency bin the channel mixing is a complex matrix product, expressed
//! as a real GEMM on interleaved `(re, im)` pairs: a complex `cin × cout`
//! matrix becomes a real `2cin × 2cout` block matrix.
//!
//! Spectra are stored `[sample][bin][channel][re|im]`, so the per-sample
//! scatter after each transform stays in cache.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::scalar::{gemm, gemm_strided, MatView};
use super::Scalar;

/// Smallest `2^a·3^b` (a ≥ 1) not below `min`.
pub fn transform_len(min: usize) -> usize {
    let mut best = usize::MAX;
    let mut p2 = 2;
    loop {
        let mut v = p2;
        while v < min {
            v *= 3;
        }
        best = best.min(v);
        if p2 >= min {
            return best;
        }
        p2 *= 2;
    }
}

/// Rough multiply-add counts per sample for the two algorithms.
pub fn prefers_fft(len: usize, kernel: usize, cin: usize, cout: usize) -> bool {
    let n = transform_len(len + kernel - 1) as f64;
    let bins = n / 2.0 + 1.0;
    let direct = (len * kernel * cin * cout) as f64;
    let spectral = 4.0 * bins * (cin * cout) as f64 + 3.0 * (cin + cout) as f64 * n * n.log2();
    spectral < 0.8 * direct
}

pub(crate) struct Plan<T: Scalar> {
    pub n: usize,
    pub bins: usize,
    fwd: Arc<dyn RealToComplex<T>>,
    inv: Arc<dyn ComplexToReal<T>>,
}

impl<T: Scalar> Plan<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = RealFftPlanner::<T>::new();
        Self { n, bins: n / 2 + 1, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }
}

/// Channel-major time and frequency buffers for one sample.
struct Work<T> {
    n: usize,
    bins: usize,
    time: Vec<T>,
    freq: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Scalar> Work<T> {
    fn new(plan: &Plan<T>, channels: usize) -> Self {
        let scratch = plan.fwd.get_scratch_len().max(plan.inv.get_scratch_len());
        Self {
            n: plan.n,
            bins: plan.bins,
            time: vec![T::zero(); plan.n * channels],
            freq: vec![Complex::new(T::zero(), T::zero()); plan.bins * channels],
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch],
        }
    }

    /// Transform every time row into its frequency row.
    fn forward(&mut self, plan: &Plan<T>) {
        for (t, f) in self.time.chunks_exact_mut(self.n).zip(self.freq.chunks_exact_mut(self.bins)) {
            plan.fwd.process_with_scratch(t, f, &mut self.scratch).expect("buffer lengths match the plan");
        }
    }

    /// Transform every frequency row into its time row, unnormalised.
    fn inverse(&mut self, plan: &Plan<T>) {
        let nyquist = plan.n % 2 == 0;
        for (f, t) in self.freq.chunks_exact_mut(self.bins).zip(self.time.chunks_exact_mut(self.n)) {
            // Spectra of real signals have real DC and Nyquist terms; the block
            // GEMM can leave rounding there.
            f[0].im = T::zero();
            if nyquist {
                f[self.bins - 1].im = T::zero();
            }
            plan.inv.process_with_scratch(f, t, &mut self.scratch).expect("buffer lengths match the plan");
        }
    }
}

/// Spectra of `channels`-channel rows; `offset` zeros precede each row.
fn spectra<T: Scalar>(plan: &Plan<T>, x: &[T], batch: usize, len: usize, channels: usize, offset: usize) -> Vec<T> {
    let (n, bins) = (plan.n, plan.bins);
    let mut out = vec![T::zero(); bins * batch * 2 * channels];
    let mut w = Work::new(plan, channels);
    for (xs, os) in x.chunks_exact(len * channels).zip(out.chunks_exact_mut(bins * 2 * channels)) {
        for row in w.time.chunks_exact_mut(n) {
            row[..offset].iter_mut().for_each(|v| *v = T::zero());
            row[offset + len..].iter_mut().for_each(|v| *v = T::zero());
        }
        for (t, frame) in xs.chunks_exact(channels).enumerate() {
            for (c, &v) in frame.iter().enumerate() {
                w.time[c * n + offset + t] = v;
            }
        }
        w.forward(plan);
        for (f, o) in os.chunks_exact_mut(2 * channels).enumerate() {
            for (c, pair) in o.chunks_exact_mut(2).enumerate() {
                let z = w.freq[c * bins + f];
                pair[0] = z.re;
                pair[1] = z.im;
            }
        }
    }
    out
}

/// Inverse transform of spectra, keeping `len` samples from `start`.
#[allow(clippy::too_many_arguments)]
fn inverse_rows<T: Scalar>(
    plan: &Plan<T>,
    spec: &[T],
    batch: usize,
    channels: usize,
    start: usize,
    len: usize,
    out: &mut [T],
) {
    let (n, bins) = (plan.n, plan.bins);
    let mut w = Work::new(plan, channels);
    let scale = T::one() / T::from_usize(n).expect("transform length fits the scalar");
    let spec = &spec[..batch * bins * 2 * channels];
    for (ss, os) in spec.chunks_exact(bins * 2 * channels).zip(out.chunks_exact_mut(len * channels)) {
        for (f, s) in ss.chunks_exact(2 * channels).enumerate() {
            for (c, pair) in s.chunks_exact(2).enumerate() {
                w.freq[c * bins + f] = Complex::new(pair[0], pair[1]);
            }
        }
        w.inverse(plan);
        for (t, frame) in os.chunks_exact_mut(channels).enumerate() {
            for (c, v) in frame.iter_mut().enumerate() {
                *v = w.time[c * n + start + t] * scale;
            }
        }
    }
}

/// Real block matrices of conj(W(f)), `[bin][2cin][2cout]`.
fn weight_blocks<T: Scalar>(plan: &Plan<T>, w: &[T], kernel: usize, cin: usize, cout: usize) -> Vec<T> {
    let (n, bins) = (plan.n, plan.bins);
    let mut out = vec![T::zero(); bins * 4 * cin * cout];
    let mut work = Work::new(plan, cout);
    let row = 2 * cout;
    for ci in 0..cin {
        work.time.iter_mut().for_each(|v| *v = T::zero());
        for j in 0..kernel {
            for co in 0..cout {
                work.time[co * n + j] = w[(j * cin + ci) * cout + co];
            }
        }
        work.forward(plan);
        for (f, block) in out.chunks_exact_mut(4 * cin * cout).enumerate() {
            let (re_row, im_row) = block[2 * ci * row..(2 * ci + 2) * row].split_at_mut(row);
            for co in 0..cout {
                let z = work.freq[co * bins + f];
                re_row[2 * co] = z.re;
                re_row[2 * co + 1] = -z.im;
                im_row[2 * co] = z.im;
                im_row[2 * co + 1] = z.re;
            }
        }
    }
    out
}

pub(crate) struct SpectralCache<T> {
    x_spec: Vec<T>,
    w_blocks: Vec<T>,
}

pub(crate) struct Geometry {
    pub batch: usize,
    pub len: usize,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad_left: usize,
}

/// Convolution without bias; returns `[batch, len, cout]` data and the
/// state needed by [`backward`].
pub(crate) fn forward<T: Scalar>(plan: &Plan<T>, g: &Geometry, x: &[T], w: &[T]) -> (Vec<T>, SpectralCache<T>) {
    let (b, cin, cout) = (g.batch, g.cin, g.cout);
    let x_spec = spectra(plan, x, b, g.len, cin, g.pad_left);
    let w_blocks = weight_blocks(plan, w, g.kernel, cin, cout);
    let mut y_spec = vec![T::zero(); plan.bins * b * 2 * cout];
    for f in 0..plan.bins {
        gemm_strided(
            b,
            2 * cin,
            2 * cout,
            T::one(),
            MatView::strided(&x_spec, f * 2 * cin, plan.bins * 2 * cin, 1),
            MatView::strided(&w_blocks, f * 4 * cin * cout, 2 * cout, 1),
            T::zero(),
            &mut y_spec,
            f * 2 * cout,
            plan.bins * 2 * cout,
        );
    }
    let mut y = vec![T::zero(); b * g.len * cout];
    inverse_rows(plan, &y_spec, b, cout, 0, g.len, &mut y);
    (y, SpectralCache { x_spec, w_blocks })
}

/// Weight gradient (added into `w_grad`) and, if requested, input gradient.
pub(crate) fn backward<T: Scalar>(
    plan: &Plan<T>,
    g: &Geometry,
    cache: &SpectralCache<T>,
    dy: &[T],
    w_grad: Option<&mut [T]>,
    input_grad: bool,
) -> Option<Vec<T>> {
    let (b, cin, cout) = (g.batch, g.cin, g.cout);
    let g_spec = spectra(plan, dy, b, g.len, cout, 0);

    if let Some(w_grad) = w_grad {
        // P(f) = X(f)ᵀ·G(f) on interleaved parts; X·conj(G) is then
        // (P_rr + P_ii) + i(P_ir − P_ri).
        let mut p = vec![T::zero(); 4 * cin * cout];
        let mut dw_spec = vec![Complex::new(T::zero(), T::zero()); cin * cout * plan.bins];
        let row = 2 * cout;
        for f in 0..plan.bins {
            gemm(
                2 * cin,
                b,
                2 * cout,
                T::one(),
                MatView::strided(&cache.x_spec, f * 2 * cin, 1, plan.bins * 2 * cin),
                MatView::strided(&g_spec, f * 2 * cout, plan.bins * 2 * cout, 1),
                T::zero(),
                &mut p,
            );
            for ci in 0..cin {
                for co in 0..cout {
                    let rr = p[2 * ci * row + 2 * co];
                    let ri = p[2 * ci * row + 2 * co + 1];
                    let ir = p[(2 * ci + 1) * row + 2 * co];
                    let ii = p[(2 * ci + 1) * row + 2 * co + 1];
                    dw_spec[(ci * cout + co) * plan.bins + f] = Complex::new(rr + ii, ir - ri);
                }
            }
        }
        let mut work = Work::new(plan, cout);
        let scale = T::one() / T::from_usize(plan.n).expect("transform length fits the scalar");
        for ci in 0..cin {
            work.freq.copy_from_slice(&dw_spec[ci * cout * plan.bins..(ci + 1) * cout * plan.bins]);
            work.inverse(plan);
            for j in 0..g.kernel {
                for co in 0..cout {
                    w_grad[(j * cin + ci) * cout + co] += work.time[co * plan.n + j] * scale;
                }
            }
        }
    }

    if !input_grad {
        return None;
    }
    // The block matrix of W(f) needed here is the transpose of the forward
    // block matrix of conj(W(f)).
    let mut dx_spec = vec![T::zero(); plan.bins * b * 2 * cin];
    for f in 0..plan.bins {
        gemm_strided(
            b,
            2 * cout,
            2 * cin,
            T::one(),
            MatView::strided(&g_spec, f * 2 * cout, plan.bins * 2 * cout, 1),
            MatView::strided(&cache.w_blocks, f * 4 * cin * cout, 1, 2 * cout),
            T::zero(),
            &mut dx_spec,
            f * 2 * cin,
            plan.bins * 2 * cin,
        );
    }
    let mut dx = vec![T::zero(); b * g.len * cin];
    inverse_rows(plan, &dx_spec, b, cin, g.pad_left, g.len, &mut dx);
    Some(dx)
}
