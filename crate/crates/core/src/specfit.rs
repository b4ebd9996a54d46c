//! Signal-region power, sideband background and the chi-square(2) shape fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rfchain::Spectrum;
use crate::stats::{mean, sample_std};

/// Default sideband exclusion around f0, in bins.
pub const DEFAULT_EXCLUDE_BINS: usize = 10;
pub const MIN_SIDEBAND_BINS: usize = 100;
pub const MIN_FIT_VALUES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandStats {
    pub mean: f64,
    pub sigma: f64,
    pub n_bins: usize,
    /// Excluded frequency interval, Hz (closed, bin edges).
    pub excluded_region: (f64, f64),
}

/// Power in the single bin containing `f0_hz`.
pub fn signal_region_power(spec: &Spectrum, f0_hz: f64) -> Result<f64> {
    Ok(spec.bins[spec.bin_index(f0_hz)?])
}

pub fn sideband_stats(spec: &Spectrum, f0_hz: f64, exclude_halfwidth_hz: f64) -> Result<SidebandStats> {
    let center = spec.bin_index(f0_hz)?;
    let k = (exclude_halfwidth_hz / spec.bin_hz).round().max(0.0) as usize;
    let side: Vec<f64> = spec
        .bins
        .iter()
        .enumerate()
        .filter(|(i, _)| i.abs_diff(center) > k)
        .map(|(_, &p)| p)
        .collect();
    if side.len() < MIN_SIDEBAND_BINS {
        return Err(Error::InsufficientData {
            needed: MIN_SIDEBAND_BINS,
            got: side.len(),
        });
    }
    let lo = center.saturating_sub(k);
    let hi = (center + k).min(spec.len() - 1);
    Ok(SidebandStats {
        mean: mean(&side),
        sigma: sample_std(&side),
        n_bins: side.len(),
        excluded_region: (
            spec.f_start_hz + lo as f64 * spec.bin_hz,
            spec.f_start_hz + (hi + 1) as f64 * spec.bin_hz,
        ),
    })
}

/// Result of fitting `A · ½ · exp(−(x − x0)/2)` (support `x ≥ x0`) to the
/// histogram of `x = 2·P / mean(P)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Fit {
    /// Total entries the fitted density integrates to.
    pub amplitude: f64,
    pub x0: f64,
    /// Pearson chi-square per degree of freedom of the histogram fit.
    pub reduced_gof: f64,
    /// Mean power implied by the fitted shape, `mean(P) · (x0 + 2) / 2`.
    pub implied_mean: f64,
    pub n_hist_bins: usize,
}

struct Histogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
}

impl Histogram {
    fn build(xs: &[f64], lo: f64, hi: f64, nbins: usize) -> Self {
        let width = (hi - lo) / nbins as f64;
        let edges: Vec<f64> = (0..=nbins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0.0; nbins];
        for &x in xs {
            let i = (((x - lo) / width).floor() as usize).min(nbins - 1);
            counts[i] += 1.0;
        }
        Self { edges, counts }
    }
}

/// Survival function of the shifted chi-square(2) shape.
fn survival(t: f64, x0: f64) -> f64 {
    (-(t - x0).max(0.0) / 2.0).exp()
}

/// Per-cell probabilities: underflow, histogram bins, overflow.
fn cell_probs(h: &Histogram, x0: f64) -> Vec<f64> {
    let e = &h.edges;
    let mut p = Vec::with_capacity(e.len() + 1);
    p.push(1.0 - survival(e[0], x0));
    for w in e.windows(2) {
        p.push(survival(w[0], x0) - survival(w[1], x0));
    }
    p.push(survival(e[e.len() - 1], x0));
    p
}

fn observed_cells(h: &Histogram) -> Vec<f64> {
    let mut o = Vec::with_capacity(h.counts.len() + 2);
    o.push(0.0);
    o.extend_from_slice(&h.counts);
    o.push(0.0);
    o
}

/// Least-squares amplitude for fixed x0, and the residual sum of squares.
fn profile(obs: &[f64], probs: &[f64]) -> (f64, f64) {
    let spp: f64 = probs.iter().map(|p| p * p).sum();
    if spp == 0.0 {
        return (0.0, obs.iter().map(|o| o * o).sum());
    }
    let a = obs.iter().zip(probs).map(|(o, p)| o * p).sum::<f64>() / spp;
    let sse = obs.iter().zip(probs).map(|(o, p)| (o - a * p).powi(2)).sum();
    (a, sse)
}

pub fn fit_chi2_2dof(values: &[f64]) -> Result<Chi2Fit> {
    if values.len() < MIN_FIT_VALUES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_VALUES,
            got: values.len(),
        });
    }
    let m = mean(values);
    let sd = sample_std(values);
    if !(sd > 0.0) || !(m > 0.0) {
        return Err(Error::DegenerateFit(format!("mean {m:e}, standard deviation {sd:e}")));
    }
    let xs: Vec<f64> = values.iter().map(|v| 2.0 * v / m).collect();
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = x_min.min(0.0);
    let nbins = (values.len() as f64).sqrt().ceil() as usize;
    let hist = Histogram::build(&xs, lo, x_max, nbins);
    let obs = observed_cells(&hist);
    let sse_at = |x0: f64| profile(&obs, &cell_probs(&hist, x0)).1;

    // coarse scan, then golden-section refinement around the best grid point
    let (scan_lo, scan_hi) = (lo - 2.0, (lo + 4.0).min(x_max));
    let steps = 600;
    let step = (scan_hi - scan_lo) / steps as f64;
    let best = (0..=steps)
        .map(|i| scan_lo + i as f64 * step)
        .min_by(|a, b| sse_at(*a).total_cmp(&sse_at(*b)))
        .unwrap_or(lo);
    let (mut a, mut b) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    for _ in 0..80 {
        if sse_at(c) < sse_at(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let x0 = 0.5 * (a + b);
    let probs = cell_probs(&hist, x0);
    let (amplitude, _) = profile(&obs, &probs);
    if !(amplitude > 0.0) {
        return Err(Error::DegenerateFit("non-positive amplitude".into()));
    }

    // Pearson statistic over histogram bins; sparse tail bins are pooled until
    // the pooled expectation reaches 5.
    let mut chi2 = 0.0;
    let mut used = 0usize;
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (o, p) in obs[1..obs.len() - 1].iter().zip(&probs[1..probs.len() - 1]) {
        pool_o += o;
        pool_e += amplitude * p;
        if pool_e >= 5.0 {
            chi2 += (pool_o - pool_e).powi(2) / pool_e;
            used += 1;
            pool_o = 0.0;
            pool_e = 0.0;
        }
    }
    if pool_e > 0.0 {
        chi2 += (pool_o - pool_e).powi(2) / pool_e;
        used += 1;
    }
    let ndf = used.saturating_sub(2).max(1);
    Ok(Chi2Fit {
        amplitude,
        x0,
        reduced_gof: chi2 / ndf as f64,
        implied_mean: m * (x0 + 2.0) / 2.0,
        n_hist_bins: nbins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfchain::{noise_floor_psd, synthesize_spectrum, ChainConfig, ReferencePlane};
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Exp1};

    fn flat(value: f64, n: usize) -> Spectrum {
        Spectrum {
            f_start_hz: 0.0,
            bin_hz: 1e-3,
            rbw_hz: 1e-3,
            reference_plane: ReferencePlane::HemtInput,
            bins: vec![value; n],
        }
    }

    fn exp_draws(n: usize, m: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                m * e
            })
            .collect()
    }

    #[test]
    fn spike_value_returned() {
        let mut s = flat(0.0, 1000);
        s.bins[500] = 1e-20;
        assert_eq!(signal_region_power(&s, 0.5005).unwrap(), 1e-20);
        assert!(matches!(signal_region_power(&s, 2.0), Err(Error::Range(_))));
        assert!(signal_region_power(&s, -0.1).is_err());
    }

    #[test]
    fn constant_sidebands() {
        let st = sideband_stats(&flat(3.5, 1000), 0.5005, 0.010).unwrap();
        assert_eq!(st.mean, 3.5);
        assert_eq!(st.sigma, 0.0);
        assert_eq!(st.n_bins, 1000 - 21);
        assert!((st.excluded_region.0 - 0.490).abs() < 1e-12);
        assert!((st.excluded_region.1 - 0.511).abs() < 1e-12);
    }

    #[test]
    fn too_few_sideband_bins() {
        assert!(matches!(
            sideband_stats(&flat(1.0, 150), 0.075, 0.030),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn exponential_sidebands_unit_cv() {
        let mut s = flat(0.0, 100_000);
        s.bins = exp_draws(100_000, 2e-26, 3);
        let st = sideband_stats(&s, 50.0005, 0.010).unwrap();
        assert!((st.sigma / st.mean - 1.0).abs() < 0.02);
    }

    #[test]
    fn excluded_spike_does_not_move_stats() {
        let cfg = ChainConfig::default();
        let s = synthesize_spectrum(&cfg, 0, 0.0, 4).unwrap().spectrum;
        let mut spiked = s.clone();
        spiked.bins[cfg.center_bin()] += 1e-15;
        let a = sideband_stats(&s, cfg.f0_hz, 0.010).unwrap();
        let b = sideband_stats(&spiked, cfg.f0_hz, 0.010).unwrap();
        assert!((a.mean / b.mean - 1.0).abs() < 1e-3);
        assert!((a.sigma / b.sigma - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fit_recovers_exponential_shape() {
        let m = 8.3e-26;
        let fit = fit_chi2_2dof(&exp_draws(100_000, m, 10)).unwrap();
        assert!(fit.x0.abs() < 0.05, "{fit:?}");
        assert!((fit.implied_mean / m - 1.0).abs() < 0.03, "{fit:?}");
        assert!((fit.amplitude / 1e5 - 1.0).abs() < 0.02, "{fit:?}");
    }

    #[test]
    fn fit_degenerate_and_small_inputs() {
        assert!(matches!(fit_chi2_2dof(&[1.0; 600]), Err(Error::DegenerateFit(_))));
        assert!(matches!(
            fit_chi2_2dof(&[1.0; 10]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn single_spectrum_fit_quality() {
        let cfg = ChainConfig::default();
        let mut gof: Vec<f64> = (0..200)
            .map(|seed| {
                let s = synthesize_spectrum(&cfg, 0, 0.0, seed).unwrap().spectrum;
                let fit = fit_chi2_2dof(&s.bins).unwrap();
                assert_eq!(fit.n_hist_bins, 32);
                fit.reduced_gof
            })
            .collect();
        gof.sort_by(f64::total_cmp);
        let under = gof.iter().filter(|&&g| g < 2.0).count();
        assert!(under >= 190, "{under}/200 below 2");
        assert!((0.8..1.2).contains(&gof[100]), "median {}", gof[100]);
    }

    #[test]
    fn noise_only_signal_bin_is_exponential() {
        let cfg = ChainConfig::default();
        let m = noise_floor_psd(&cfg, ReferencePlane::SaInput) * cfg.rbw_data_hz;
        let ps: Vec<f64> = (0..10_000)
            .map(|seed| {
                let s = synthesize_spectrum(&cfg, 0, 0.0, seed).unwrap().spectrum;
                signal_region_power(&s, cfg.f0_hz).unwrap()
            })
            .collect();
        let ks = crate::stats::ks_test(&ps, crate::stats::exponential_cdf(m));
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sidebands_permutation_and_exclusion_invariant(seed: u64, junk in 0.0f64..1e-18) {
            let cfg = ChainConfig::default();
            let s = synthesize_spectrum(&cfg, 0, 0.0, seed).unwrap().spectrum;
            let base = sideband_stats(&s, cfg.f0_hz, 0.010).unwrap();
            let mut inside = s.clone();
            for i in cfg.center_bin() - 10..=cfg.center_bin() + 10 {
                inside.bins[i] += junk;
            }
            prop_assert_eq!(sideband_stats(&inside, cfg.f0_hz, 0.010).unwrap(), base);

            // permuting bins outside the exclusion window
            let c = cfg.center_bin();
            let mut perm = s.clone();
            let outside: Vec<usize> = (0..s.len()).filter(|i| i.abs_diff(c) > 10).collect();
            let mut rev: Vec<f64> = outside.iter().map(|&i| s.bins[i]).collect();
            rev.reverse();
            for (slot, v) in outside.iter().zip(rev) {
                perm.bins[*slot] = v;
            }
            let p = sideband_stats(&perm, cfg.f0_hz, 0.010).unwrap();
            prop_assert!((p.mean / base.mean - 1.0).abs() < 1e-12);
            prop_assert!((p.sigma / base.sigma - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fit_is_scale_equivariant(seed: u64, k in 1e-30f64..1e30) {
            let v = exp_draws(2000, 1.0, seed);
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let a = fit_chi2_2dof(&v).unwrap();
            let b = fit_chi2_2dof(&scaled).unwrap();
            prop_assert!((a.x0 - b.x0).abs() < 1e-6);
            prop_assert!((a.amplitude / b.amplitude - 1.0).abs() < 1e-6);
            prop_assert!((a.reduced_gof - b.reduced_gof).abs() < 1e-6);
        }
    }
}
