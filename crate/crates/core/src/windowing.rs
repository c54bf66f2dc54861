//! Sliding-window sums and means over an entropy series.
//!
//! Window starts are 1-based: window `i` covers tokens `i..=i+W-1`, for
//! `i = 1..=n-W+1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window length.
pub const DEFAULT_WINDOW: usize = 10;

/// Preset window lengths offered by the CLI.
pub const WINDOW_PRESETS: [usize; 3] = [5, 10, 20];

/// The rolling sum is rebuilt from scratch this often to stop drift.
pub const RESYNC_INTERVAL: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSeries {
    window_length: usize,
    sums: Vec<f64>,
    means: Vec<f64>,
}

impl WindowSeries {
    pub fn window_length(&self) -> usize {
        self.window_length
    }

    /// Window sums; element 0 is window start 1.
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// Window means; element 0 is window start 1.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Number of windows, `n - W + 1`.
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Length of the series the windows were taken over.
    pub fn series_len(&self) -> usize {
        self.means.len() + self.window_length - 1
    }

    /// Mean of the window starting at 1-based `start`.
    pub fn mean_at(&self, start: usize) -> f64 {
        self.means[start - 1]
    }
}

fn check_window(n: usize, w: usize) -> Result<()> {
    if w == 0 {
        return Err(Error::domain("window length W must be at least 1"));
    }
    if w > n {
        return Err(Error::domain(format!(
            "window length W = {w} exceeds series length n = {n}"
        )));
    }
    Ok(())
}

/// Window means in one pass using the running-sum recurrence
/// `S_i = S_{i-1} + h[i+W-1] - h[i-1]`.
///
/// The running sum is kept relative to the first value of the series, so a
/// constant series produces exactly that constant, and it is resynchronized
/// every [`RESYNC_INTERVAL`] windows.
pub fn window_means(values: &[f64], w: usize) -> Result<WindowSeries> {
    window_means_counted(values, w).map(|(ws, _)| ws)
}

/// [`window_means`] plus the number of series elements it read, for checking
/// that the work is linear in `n`.
#[doc(hidden)]
pub fn window_means_counted(values: &[f64], w: usize) -> Result<(WindowSeries, usize)> {
    let n = values.len();
    check_window(n, w)?;
    let count = n - w + 1;

    if w == 1 {
        // Each window holds exactly one value.
        return Ok((
            WindowSeries {
                window_length: 1,
                sums: values.to_vec(),
                means: values.to_vec(),
            },
            n,
        ));
    }

    let base = values[0];
    let wf = w as f64;
    let mut reads = 0usize;
    let deviation_sum = |from: usize, reads: &mut usize| -> f64 {
        *reads += w;
        values[from..from + w].iter().map(|v| v - base).sum()
    };

    let mut sums = Vec::with_capacity(count);
    let mut means = Vec::with_capacity(count);
    let mut dev = deviation_sum(0, &mut reads);
    for start in 0..count {
        if start > 0 {
            if start % RESYNC_INTERVAL == 0 {
                dev = deviation_sum(start, &mut reads);
            } else {
                reads += 2;
                dev += (values[start + w - 1] - base) - (values[start - 1] - base);
            }
        }
        let mean = base + dev / wf;
        sums.push(mean * wf);
        means.push(mean);
    }
    Ok((
        WindowSeries {
            window_length: w,
            sums,
            means,
        },
        reads,
    ))
}

/// Window means by direct summation of every window, O(nW). Test oracle.
pub fn window_means_naive(values: &[f64], w: usize) -> Result<WindowSeries> {
    check_window(values.len(), w)?;
    let sums: Vec<f64> = values.windows(w).map(|win| win.iter().sum()).collect();
    let means = sums.iter().map(|s| s / w as f64).collect();
    Ok(WindowSeries {
        window_length: w,
        sums,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_means() {
        let ws = window_means(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(ws.means(), &[1.5, 2.5, 3.5]);
        assert_eq!(ws.sums(), &[3.0, 5.0, 7.0]);
        assert_eq!(ws.series_len(), 4);
    }

    #[test]
    fn unit_window_is_identity() {
        let h = [0.3, 1.7, 0.0, 2.25, 0.1];
        let ws = window_means(&h, 1).unwrap();
        assert_eq!(ws.means(), &h);
    }

    #[test]
    fn naive_small_cases() {
        assert_eq!(window_means_naive(&[0.0, 0.0, 0.0], 3).unwrap().means(), &[0.0]);
        assert_eq!(window_means_naive(&[5.0], 1).unwrap().means(), &[5.0]);
    }

    #[test]
    fn domain_errors() {
        let e = window_means(&[1.0, 2.0], 3).unwrap_err().to_string();
        assert!(e.contains("W = 3") && e.contains("n = 2"), "{e}");
        assert!(window_means(&[1.0], 0).is_err());
        assert!(window_means_naive(&[1.0], 0).is_err());
        assert!(window_means_naive(&[1.0], 2).is_err());
    }

    #[test]
    fn matches_naive_on_long_uniform_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..4.0)).collect();
        let fast = window_means(&h, 10).unwrap();
        let slow = window_means_naive(&h, 10).unwrap();
        for (a, b) in fast.means().iter().zip(slow.means()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn resync_keeps_error_small_at_ten_thousand() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1e3)).collect();
        for w in [2, 7, 20, 5000] {
            let fast = window_means(&h, w).unwrap();
            let slow = window_means_naive(&h, w).unwrap();
            let worst = fast
                .means()
                .iter()
                .zip(slow.means())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-9, "w={w} worst={worst}");
        }
    }

    #[test]
    fn work_is_linear() {
        for n in [100usize, 1_000, 10_000, 100_000] {
            let h = vec![0.5; n];
            for w in [2, 10, 20] {
                let (_, reads) = window_means_counted(&h, w).unwrap();
                let resyncs = (n - w + 1) / RESYNC_INTERVAL + 1;
                assert!(reads <= 2 * n + resyncs * w, "n={n} w={w} reads={reads}");
            }
        }
    }

    proptest! {
        #[test]
        fn constant_series_is_exact(c in 0.0f64..8.0, n in 1usize..300, w_frac in 0.0f64..1.0) {
            let w = 1 + ((n - 1) as f64 * w_frac) as usize;
            let ws = window_means(&vec![c; n], w).unwrap();
            prop_assert!(ws.means().iter().all(|&a| a == c));
        }

        #[test]
        fn prepending_shifts_windows(h in proptest::collection::vec(0.0f64..4.0, 2..200), x in 0.0f64..4.0, w in 1usize..10) {
            prop_assume!(w <= h.len());
            let base = window_means_naive(&h, w).unwrap();
            let mut longer = vec![x];
            longer.extend_from_slice(&h);
            let shifted = window_means(&longer, w).unwrap();
            prop_assert_eq!(shifted.len(), base.len() + 1);
            for (a, b) in shifted.means()[1..].iter().zip(base.means()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn means_stay_in_range(h in proptest::collection::vec(0.0f64..4.0, 1..200), w in 1usize..30) {
            prop_assume!(w <= h.len());
            let max = h.iter().copied().fold(0.0, f64::max);
            let ws = window_means(&h, w).unwrap();
            for &a in ws.means() {
                prop_assert!(a >= -1e-12 && a <= max + 1e-12);
            }
        }
    }
}
