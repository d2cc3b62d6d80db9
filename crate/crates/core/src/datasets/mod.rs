//! Synthetic Gaussian time series, stride subsampling and manifest I/O.

mod gaussian;
mod io;

pub use gaussian::{generate_gaussian_series, time_warp, GaussianScheduleConfig, Range};
pub use io::{load_dataset, load_series, write_dataset, write_series, Manifest};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Frames of one sequence with strictly increasing times (frame units).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    frames: Vec<ImageGrid>,
    times: Vec<f64>,
}

impl TimeSeries {
    pub fn new(frames: Vec<ImageGrid>, times: Vec<f64>) -> Result<Self> {
        if frames.len() != times.len() {
            return Err(Error::InvalidConfig(format!(
                "{} frames but {} times",
                frames.len(),
                times.len()
            )));
        }
        for i in 1..times.len() {
            if !(times[i] > times[i - 1]) {
                return Err(Error::NonIncreasingTimes(i));
            }
        }
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                if f.dims() != first.dims() {
                    return Err(Error::DimsMismatch {
                        expected: first.dims(),
                        found: f.dims(),
                    });
                }
            }
        }
        Ok(Self { frames, times })
    }

    pub fn frames(&self) -> &[ImageGrid] {
        &self.frames
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(ImageGrid::dims)
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            frames: idx.iter().map(|&i| self.frames[i].clone()).collect(),
            times: idx.iter().map(|&i| self.times[i]).collect(),
        }
    }
}

/// Indices kept for training (`0, stride, 2 stride, ...`) and the rest.
pub fn subsample_indices(len: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let stride = stride.max(1);
    (0..len).partition(|i| i % stride == 0)
}

/// Splits into the stride-subsampled training series and the held-out frames.
pub fn subsample(series: &TimeSeries, stride: usize) -> (TimeSeries, TimeSeries) {
    let (keep, rest) = subsample_indices(series.len(), stride);
    (series.select(&keep), series.select(&rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize) -> TimeSeries {
        let frames = (0..n).map(|i| ImageGrid::filled(2, 2, i as f64).unwrap()).collect();
        TimeSeries::new(frames, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn stride_five_of_thirty_one() {
        let (train, held) = subsample(&series(31), 5);
        assert_eq!(train.times(), &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(held.len(), 24);
        assert!(held.times().iter().all(|t| !(*t as usize).is_multiple_of(5)));
    }

    #[test]
    fn stride_one_holds_nothing_out() {
        let (train, held) = subsample(&series(7), 1);
        assert_eq!(train.len(), 7);
        assert!(held.is_empty());
    }

    #[test]
    fn stride_beyond_length_keeps_first_frame() {
        let (train, held) = subsample(&series(6), 10);
        assert_eq!(train.times(), &[0.0]);
        assert_eq!(held.len(), 5);
        let (train, _) = subsample(&series(6), 5);
        assert_eq!(train.times(), &[0.0, 5.0]);
    }

    #[test]
    fn invariants_are_enforced() {
        let f = || ImageGrid::zeros(2, 2);
        assert!(matches!(
            TimeSeries::new(vec![f(), f(), f()], vec![0.0, 1.0, 1.0]),
            Err(Error::NonIncreasingTimes(2))
        ));
        assert!(matches!(
            TimeSeries::new(vec![f(), ImageGrid::zeros(3, 2)], vec![0.0, 1.0]),
            Err(Error::DimsMismatch { .. })
        ));
    }
}
