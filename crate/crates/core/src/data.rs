//! Time-series loading and sliding-window datasets.
//!
//! Series are split on raw timesteps first (train / val / test segments)
//! and windows are cut inside each segment, so no window ever straddles a
//! split boundary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multichannel series, `timesteps × channels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub timesteps: usize,
    pub channels: usize,
    pub frequency_label: String,
}

impl RawSeries {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        channels: usize,
        frequency_label: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 || values.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {channels} channels",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("series contains non-finite values".into()));
        }
        Ok(Self {
            name: name.into(),
            timesteps: values.len() / channels,
            values,
            channels,
            frequency_label: frequency_label.into(),
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn channel(&self, m: usize) -> Vec<f64> {
        (0..self.timesteps)
            .map(|t| self.values[t * self.channels + m])
            .collect()
    }
}

/// Reads a comma-separated numeric series. The optional date column is
/// dropped; any other non-numeric cell is rejected with its 1-based file
/// line and column.
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    date_column: Option<usize>,
) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows + 1);
        let load_err = |col: usize, msg: String| Error::Load {
            path: path.to_path_buf(),
            row: line,
            col,
            msg,
        };
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(load_err(
                    record.len().min(w) + 1,
                    format!("expected {w} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == date_column {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| load_err(col + 1, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(load_err(col + 1, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    let channels = width - usize::from(date_column.is_some_and(|c| c < width));
    if rows < 2 || channels == 0 {
        return Err(Error::Load {
            path: path.to_path_buf(),
            row: rows,
            col: 0,
            msg: "need at least 2 data rows and 1 numeric column".into(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RawSeries::new(name, values, channels, "")
}

/// Seasonal period implied by a frequency label; 1 when unknown.
pub fn seasonal_period(frequency_label: &str) -> usize {
    match frequency_label.trim().to_ascii_lowercase().as_str() {
        "h" | "1h" | "hour" | "hourly" => 24,
        "15min" | "15t" | "15 min" => 96,
        "10min" | "10t" | "10 min" => 144,
        "d" | "day" | "daily" => 7,
        "m" | "month" | "monthly" => 12,
        "q" | "quarter" | "quarterly" => 4,
        _ => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> f64 {
        match self {
            Split::Train => 0.0,
            Split::Val => 1.0,
            Split::Test => 2.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split code {c}"))),
        }
    }
}

/// Train/val/test proportions of the raw timeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = Self { train, val, test };
        s.validate()?;
        Ok(s)
    }

    /// 6:2:2, used for the ETT and Wind style datasets.
    pub fn ett_wind() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0)) || ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }

    /// Segment lengths `(train, val, test)` for a series of `n` steps.
    pub fn segment_lengths(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train * n as f64 + 1e-9).floor() as usize;
        let val = (self.val * n as f64 + 1e-9).floor() as usize;
        (train, val, n - train - val)
    }
}

impl Default for SplitSpec {
    /// 7:1:2.
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Sliding windows over one split segment.
///
/// The segment is stored once; window `i` is the rows
/// `starts[i] .. starts[i] + L` (input) followed by the next `T` rows
/// (target).
#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    pub split: Split,
    pub input_length: usize,
    pub horizon: usize,
    pub channels: usize,
    pub stride: usize,
    /// Offset of the segment's first row in the source series.
    pub segment_offset: usize,
    pub frequency_label: String,
    segment: Vec<f64>,
    starts: Vec<usize>,
    channel_stats: Vec<(f64, f64)>,
}

impl WindowDataset {
    #[allow(clippy::too_many_arguments)]
    fn build(
        split: Split,
        segment: Vec<f64>,
        channels: usize,
        segment_offset: usize,
        input_length: usize,
        horizon: usize,
        stride: usize,
        frequency_label: String,
    ) -> Result<Self> {
        let len = segment.len() / channels;
        let span = input_length + horizon;
        if len < span {
            return Err(Error::InsufficientData(format!(
                "{split:?} segment has {len} timesteps, a window needs {span}"
            )));
        }
        let count = (len - span) / stride + 1;
        let starts: Vec<usize> = (0..count).map(|i| i * stride).collect();
        let mut ds = Self {
            split,
            input_length,
            horizon,
            channels,
            stride,
            segment_offset,
            frequency_label,
            segment,
            starts,
            channel_stats: Vec::new(),
        };
        ds.channel_stats = ds.compute_stats();
        Ok(ds)
    }

    fn compute_stats(&self) -> Vec<(f64, f64)> {
        let (l, m) = (self.input_length, self.channels);
        let mut stats = Vec::with_capacity(self.starts.len() * m);
        for i in 0..self.starts.len() {
            let input = self.input(i);
            for c in 0..m {
                let mean = (0..l).map(|t| input[t * m + c]).sum::<f64>() / l as f64;
                let var = (0..l)
                    .map(|t| (input[t * m + c] - mean).powi(2))
                    .sum::<f64>()
                    / l as f64;
                stats.push((mean, var.sqrt()));
            }
        }
        stats
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn segment_len(&self) -> usize {
        self.segment.len() / self.channels
    }

    /// Raw segment rows, `segment_len × channels`.
    pub fn segment(&self) -> &[f64] {
        &self.segment
    }

    /// First row of window `i`, relative to the segment.
    pub fn start(&self, i: usize) -> usize {
        self.starts[i]
    }

    /// Input rows of window `i`, `L × M` row-major.
    pub fn input(&self, i: usize) -> &[f64] {
        let s = self.starts[i];
        &self.segment[s * self.channels..(s + self.input_length) * self.channels]
    }

    /// Target rows of window `i`, `T × M` row-major.
    pub fn target(&self, i: usize) -> &[f64] {
        let s = self.starts[i] + self.input_length;
        &self.segment[s * self.channels..(s + self.horizon) * self.channels]
    }

    /// Cached `(mean, std)` of channel `c` over the input of window `i`
    /// (population statistics).
    pub fn channel_stats(&self, i: usize, c: usize) -> (f64, f64) {
        self.channel_stats[i * self.channels + c]
    }

    /// Stacks the listed windows into `([B, L, M], [B, T, M])` tensors.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let (l, t, m) = (self.input_length, self.horizon, self.channels);
        let mut x = Vec::with_capacity(indices.len() * l * m);
        let mut y = Vec::with_capacity(indices.len() * t * m);
        for &i in indices {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.target(i));
        }
        Ok((
            Tensor::new(vec![indices.len(), l, m], x)?,
            Tensor::new(vec![indices.len(), t, m], y)?,
        ))
    }

    /// Per-channel population standard deviation over the whole segment.
    pub fn segment_channel_std(&self) -> Vec<f64> {
        let (n, m) = (self.segment_len(), self.channels);
        (0..m)
            .map(|c| {
                let mean = (0..n).map(|t| self.segment[t * m + c]).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|t| (self.segment[t * m + c] - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                var.sqrt()
            })
            .collect()
    }

    fn rewindow(&self, segment: Vec<f64>) -> Result<Self> {
        Self::build(
            self.split,
            segment,
            self.channels,
            self.segment_offset,
            self.input_length,
            self.horizon,
            self.stride,
            self.frequency_label.clone(),
        )
    }
}

/// The three datasets cut from one series.
#[derive(Clone, Debug)]
pub struct SplitDatasets {
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

/// Splits `series` by `spec` on raw timesteps and windows each segment with
/// input length `input_length`, horizon `horizon` and the given stride.
pub fn make_windows(
    series: &RawSeries,
    spec: &SplitSpec,
    input_length: usize,
    horizon: usize,
    stride: usize,
) -> Result<SplitDatasets> {
    spec.validate()?;
    if input_length == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config(
            "input length, horizon and stride must be >= 1".into(),
        ));
    }
    let span = input_length + horizon;
    let (n_train, n_val, n_test) = spec.segment_lengths(series.timesteps);
    if n_train.min(n_val).min(n_test) < span {
        let minimum = (span..)
            .find(|&n| {
                let (a, b, c) = spec.segment_lengths(n);
                a.min(b).min(c) >= span
            })
            .unwrap_or(span);
        return Err(Error::Config(format!(
            "series has {} timesteps; at least {minimum} are required for L={input_length}, T={horizon} with split {:?}",
            series.timesteps,
            (spec.train, spec.val, spec.test)
        )));
    }
    let m = series.channels;
    let seg = |from: usize, len: usize| series.values[from * m..(from + len) * m].to_vec();
    let build = |split, from, len| {
        WindowDataset::build(
            split,
            seg(from, len),
            m,
            from,
            input_length,
            horizon,
            stride,
            series.frequency_label.clone(),
        )
    };
    Ok(SplitDatasets {
        train: build(Split::Train, 0, n_train)?,
        val: build(Split::Val, n_train, n_val)?,
        test: build(Split::Test, n_train + n_val, n_test)?,
    })
}

/// Adds relative Gaussian noise to a training segment: every value of
/// channel `c` gets `Normal(0, (eta · σ_c)²)` where `σ_c` is the segment's
/// standard deviation for that channel. Validation and test datasets are
/// returned unchanged.
pub fn inject_noise(dataset: &WindowDataset, eta: f64, seed: u64) -> Result<WindowDataset> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!(
            "noise level eta must be in [0, 1], got {eta}"
        )));
    }
    if eta == 0.0 || dataset.split != Split::Train {
        return Ok(dataset.clone());
    }
    let sigma = dataset.segment_channel_std();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let m = dataset.channels;
    let mut segment = dataset.segment.clone();
    for (i, v) in segment.iter_mut().enumerate() {
        let z: f64 = std_normal.sample(&mut rng);
        let scale = eta * sigma[i % m];
        if scale > 0.0 {
            *v += scale * z;
        }
    }
    dataset.rewindow(segment)
}

/// Keeps the first `ceil(fraction · len)` timesteps of a training segment
/// and re-windows them.
pub fn few_shot_subset(dataset: &WindowDataset, fraction: f64) -> Result<WindowDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "few-shot fraction must be in (0, 1], got {fraction}"
        )));
    }
    if dataset.split != Split::Train {
        return Err(Error::Usage(
            "few-shot subsetting applies to the training split".into(),
        ));
    }
    let len = dataset.segment_len();
    let keep = ((fraction * len as f64) - 1e-9).ceil().max(1.0) as usize;
    let keep = keep.min(len);
    let span = dataset.input_length + dataset.horizon;
    if keep < span {
        return Err(Error::InsufficientData(format!(
            "{keep} of {len} training timesteps kept; a window needs {span}"
        )));
    }
    dataset.rewindow(dataset.segment[..keep * dataset.channels].to_vec())
}

/// Deterministic synthetic series: `sin(2πt/period)` plus optional Gaussian
/// noise of standard deviation `noise`, one phase-shifted copy per channel.
pub fn synthetic_sine(
    length: usize,
    period: f64,
    noise: f64,
    channels: usize,
    seed: u64,
) -> Result<RawSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(length * channels);
    for t in 0..length {
        for c in 0..channels {
            let phase = c as f64 * std::f64::consts::PI / 4.0;
            let clean = (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin();
            let eps: f64 = normal.sample(&mut rng);
            values.push(clean + noise * eps);
        }
    }
    RawSeries::new("synthetic_sine", values, channels, "")
}

const CACHE_MAGIC: &[u8; 4] = b"SVQW";
const CACHE_VERSION: u32 = 1;

/// Writes a window dataset as `"SVQW"`, a `u32` version, a `u32` array
/// count, then arrays of `u32 ndim`, `u64` extents and little-endian `f64`
/// values: metadata, segment and window starts.
pub fn write_cache(dataset: &WindowDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    let meta = vec![
        dataset.split.code(),
        dataset.input_length as f64,
        dataset.horizon as f64,
        dataset.channels as f64,
        dataset.stride as f64,
        dataset.segment_offset as f64,
    ];
    let starts: Vec<f64> = dataset.starts.iter().map(|&s| s as f64).collect();
    let arrays: [(Vec<usize>, &[f64]); 3] = [
        (vec![meta.len()], &meta),
        (
            vec![dataset.segment_len(), dataset.channels],
            &dataset.segment,
        ),
        (vec![starts.len()], &starts),
    ];
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (shape, data) in arrays {
        write_array(&mut w, &shape, data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<WindowDataset> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let mut r = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format(format!(
            "{} is not a window cache",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!(
            "unsupported window cache version {version}"
        )));
    }
    let count = read_u32(&mut r)?;
    if count != 3 {
        return Err(Error::Format(format!("expected 3 arrays, found {count}")));
    }
    let (_, meta) = read_array(&mut r)?;
    let (seg_shape, segment) = read_array(&mut r)?;
    let (_, starts) = read_array(&mut r)?;
    if meta.len() != 6 || seg_shape.len() != 2 {
        return Err(Error::Format("malformed window cache header".into()));
    }
    let mut ds = WindowDataset {
        split: Split::from_code(meta[0])?,
        input_length: meta[1] as usize,
        horizon: meta[2] as usize,
        channels: meta[3] as usize,
        stride: meta[4] as usize,
        segment_offset: meta[5] as usize,
        frequency_label: String::new(),
        segment,
        starts: starts.iter().map(|&s| s as usize).collect(),
        channel_stats: Vec::new(),
    };
    let span = ds.input_length + ds.horizon;
    if ds.channels != seg_shape[1] || ds.starts.iter().any(|&s| s + span > ds.segment_len()) {
        return Err(Error::Format("window cache is inconsistent".into()));
    }
    ds.channel_stats = ds.compute_stats();
    Ok(ds)
}

pub(crate) fn write_array(w: &mut impl Write, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_array(r: &mut impl Read) -> Result<(Vec<usize>, Vec<f64>)> {
    let ndim = read_u32(r)? as usize;
    if ndim > 8 {
        return Err(Error::Format(format!("array rank {ndim} too large")));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut b8 = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut b8)?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok((shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, m: usize) -> RawSeries {
        let values = (0..n * m).map(|i| i as f64).collect();
        RawSeries::new("ramp", values, m, "").unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_plain_csv() {
        let f = write_tmp("1,2\n3,4\n5,6\n");
        let s = load_csv(f.path(), false, None).unwrap();
        assert_eq!(s.timesteps, 3);
        assert_eq!(s.channels, 2);
        assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn load_drops_date_column() {
        let f = write_tmp("date,a,b,c\n2020-01-01 00:00,1,2,3\n2020-01-01 01:00,4,5,6\n");
        let s = load_csv(f.path(), true, Some(0)).unwrap();
        assert_eq!(s.channels, 3);
        assert_eq!(s.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn load_reports_bad_cell() {
        let f = write_tmp("1,2\n3,abc\n5,6\n");
        match load_csv(f.path(), false, None) {
            Err(Error::Load { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_ragged_and_missing() {
        let f = write_tmp("1,2\n3\n5,6\n");
        assert!(matches!(
            load_csv(f.path(), false, None),
            Err(Error::Load { row: 2, .. })
        ));
        assert!(matches!(
            load_csv("/nonexistent/x.csv", false, None),
            Err(Error::Io(_))
        ));
        let f = write_tmp("1,2\n");
        assert!(load_csv(f.path(), false, None).is_err());
    }

    #[test]
    fn window_counts() {
        let s = ramp(100, 1);
        let d = make_windows(&s, &SplitSpec::ett_wind(), 10, 5, 1).unwrap();
        assert_eq!(d.train.len(), 46);
        assert_eq!(d.val.len(), 20 - 15 + 1);
        assert_eq!(d.test.len(), 6);
        assert_eq!(d.val.segment_offset, 60);

        // stride equal to the segment length leaves exactly one window
        let d = make_windows(&s, &SplitSpec::ett_wind(), 10, 5, 60).unwrap();
        assert_eq!(d.train.len(), 1);
    }

    #[test]
    fn window_too_long_for_test_segment() {
        let s = ramp(100, 1);
        let err = make_windows(&s, &SplitSpec::ett_wind(), 15, 10, 1).unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.contains("at least 125")),
            "{err}"
        );
    }

    #[test]
    fn windows_are_contiguous() {
        let s = ramp(100, 2);
        let d = make_windows(&s, &SplitSpec::ett_wind(), 10, 5, 3).unwrap();
        for i in 0..d.train.len() {
            let x = d.train.input(i);
            let y = d.train.target(i);
            assert_eq!(y[0] - x[x.len() - 2], 2.0);
        }
    }

    #[test]
    fn noise_edge_cases() {
        let s = ramp(100, 1);
        let d = make_windows(&s, &SplitSpec::ett_wind(), 10, 5, 1).unwrap();
        assert_eq!(inject_noise(&d.train, 0.0, 3).unwrap(), d.train);
        assert!(inject_noise(&d.train, 1.5, 3).is_err());
        assert!(inject_noise(&d.train, -0.1, 3).is_err());
        assert_eq!(inject_noise(&d.test, 0.1, 3).unwrap(), d.test);

        let c = RawSeries::new("c", vec![2.5; 100], 1, "").unwrap();
        let d = make_windows(&c, &SplitSpec::ett_wind(), 10, 5, 1).unwrap();
        assert_eq!(
            inject_noise(&d.train, 0.1, 3).unwrap().segment(),
            d.train.segment()
        );
    }

    #[test]
    fn few_shot_arithmetic() {
        let s = ramp(10_000, 1);
        // a train segment of exactly 10 000 steps
        let d = WindowDataset::build(
            Split::Train,
            s.values.clone(),
            1,
            0,
            512,
            96,
            1,
            String::new(),
        )
        .unwrap();
        assert!(matches!(
            few_shot_subset(&d, 0.05),
            Err(Error::InsufficientData(_))
        ));
        assert_eq!(few_shot_subset(&d, 0.10).unwrap().len(), 393);
        assert_eq!(few_shot_subset(&d, 1.0).unwrap(), d);
        assert!(few_shot_subset(&d, 0.0).is_err());
    }

    #[test]
    fn seasonal_periods() {
        assert_eq!(seasonal_period("hourly"), 24);
        assert_eq!(seasonal_period("15min"), 96);
        assert_eq!(seasonal_period(""), 1);
    }
}
