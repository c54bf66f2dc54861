//! Entropy hotspots for OCR transcripts.
//!
//! A vision-language model transcribes a page and reports the top-k
//! log-probabilities at every decoding step. This crate turns those into a
//! per-token truncated entropy series, averages it over sliding windows,
//! flags the highest-entropy windows as likely error sites and renders the
//! result as a heatmap.
//!
//! ```
//! use entroheat_core::{entropy, hotspot, windowing};
//!
//! let h = [0.1, 0.2, 2.5, 2.9, 2.2, 0.1, 0.0, 0.3];
//! let windows = windowing::window_means(&h, 3).unwrap();
//! let report = hotspot::select_top_m(&windows, 1, true).unwrap();
//! assert_eq!((report.hotspots[0].start, report.hotspots[0].end), (3, 5));
//! # let _ = entropy::truncated_entropy_from_probs(&[0.5, 0.5]);
//! ```

pub mod entropy;
pub mod error;
pub mod eval;
pub mod hotspot;
pub mod ocr_client;
pub mod render;
pub mod reprompt;
pub mod token_stream;
pub mod windowing;

pub use error::{Error, Result};
