//! Latency measurement at batch size 1.
//!
//! A run first executes `warmup` calls on the leading images (cycling if the
//! list is shorter) and throws their timings away, then times one call per
//! image. Each sample brackets exactly the runner call. Runs are strictly
//! sequential; a [`Bencher`] refuses to start a second run while one is in
//! progress.

use std::error::Error as StdError;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::ImageRef;
use crate::clock::{elapsed_ms, Clock};

pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no images to time")]
    EmptyImages,
    #[error("no samples to summarize")]
    EmptySamples,
    #[error("a timing run is already in progress on this bencher")]
    ConcurrentRun,
    #[error("image `{image_id}`: {source}")]
    Runner {
        image_id: String,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub image_id: String,
    pub elapsed_ms: f64,
    pub stage2_invoked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRun {
    pub samples: Vec<BenchSample>,
    pub warmup_discarded: usize,
}

impl TimedRun {
    pub fn summary(&self) -> Result<LatencySummary, BenchError> {
        let mut s = summarize(&self.samples)?;
        s.warmup_discarded = self.warmup_discarded;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub count: usize,
    pub warmup_discarded: usize,
    pub stage2_fraction: f64,
}

pub struct Bencher {
    clock: Arc<dyn Clock>,
    busy: AtomicBool,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

impl Bencher {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            busy: AtomicBool::new(false),
        }
    }

    /// Times `runner` over `images`. The runner reports whether the
    /// confirmation stage ran for that image.
    pub fn time_run<F, E>(
        &self,
        images: &[ImageRef],
        warmup: usize,
        mut runner: F,
    ) -> Result<TimedRun, BenchError>
    where
        F: FnMut(&ImageRef) -> Result<bool, E>,
        E: Into<Box<dyn StdError + Send + Sync>>,
    {
        if images.is_empty() {
            return Err(BenchError::EmptyImages);
        }
        if self
            .busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(BenchError::ConcurrentRun);
        }
        let _guard = BusyGuard(&self.busy);

        let fail = |image: &ImageRef, e: E| BenchError::Runner {
            image_id: image.id.clone(),
            source: e.into(),
        };
        for image in images.iter().cycle().take(warmup) {
            runner(image).map_err(|e| fail(image, e))?;
        }
        let mut samples = Vec::with_capacity(images.len());
        for image in images {
            let start = self.clock.now();
            let result = runner(image);
            let end = self.clock.now();
            let stage2_invoked = result.map_err(|e| fail(image, e))?;
            samples.push(BenchSample {
                image_id: image.id.clone(),
                elapsed_ms: elapsed_ms(start, end),
                stage2_invoked,
            });
        }
        Ok(TimedRun {
            samples,
            warmup_discarded: warmup,
        })
    }
}

pub fn summarize(samples: &[BenchSample]) -> Result<LatencySummary, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    let n = samples.len();
    let mean_ms = samples.iter().map(|s| s.elapsed_ms).sum::<f64>() / n as f64;
    let invoked = samples.iter().filter(|s| s.stage2_invoked).count();
    Ok(LatencySummary {
        mean_ms,
        count: n,
        warmup_discarded: 0,
        stage2_fraction: invoked as f64 / n as f64,
    })
}

/// Average cost of a cascade whose second stage runs on a `stage2_rate`
/// fraction of inputs. `full_ms` is the end-to-end cost including Stage 1.
pub fn expected_latency(stage1_ms: f64, full_ms: f64, stage2_rate: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&stage2_rate));
    (1.0 - stage2_rate) * stage1_ms + stage2_rate * full_ms
}
