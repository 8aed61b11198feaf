//! Conditioning signals: sinusoidal exposure-interval encoding (primary,
//! alternative, and linear-ablation schemes), latent-frame interval
//! grouping, and the spatiotemporal position encoding.
//!
//! An interval group is the 2g-vector of start/end times of the g
//! physical frames mapped to one latent frame; the encoder applies the
//! sinusoidal feature map γ to each coordinate, concatenates in
//! coordinate order, and projects through a learned affine layer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blur::ExposureInterval;
use crate::error::{Error, Result};

/// Maximum frame count supported by the alternative scheme; used to
/// normalize its count coordinate into [0, 1].
pub const MAX_FRAME_COUNT: usize = 16;

/// Flattened start/end pairs of the g frames behind one latent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalGroup {
    values: Vec<f64>,
}

impl IntervalGroup {
    /// Validates length 2g, per-pair `end > start`, and non-decreasing
    /// pair starts (replicated input groups repeat the same pair).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "interval group must hold start/end pairs, got {} values",
                values.len()
            )));
        }
        for pair in values.chunks_exact(2) {
            if !pair[0].is_finite() || !pair[1].is_finite() || pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "invalid interval pair [{}, {}]",
                    pair[0], pair[1]
                )));
            }
        }
        for k in 1..values.len() / 2 {
            if values[2 * k] < values[2 * (k - 1)] - 1e-9 {
                return Err(Error::Config(format!(
                    "interval pairs out of time order at pair {k}"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn group_size(&self) -> usize {
        self.values.len() / 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Groups per-frame intervals g at a time, flattening start/end pairs in
/// frame order: group i = [T_{ig+1}[1], T_{ig+1}[2], …, T_{ig+g}[2]].
pub fn group_intervals(per_frame: &[ExposureInterval], g: usize) -> Result<Vec<IntervalGroup>> {
    if g == 0 {
        return Err(Error::Config("group size must be >= 1".into()));
    }
    if per_frame.is_empty() || !per_frame.len().is_multiple_of(g) {
        return Err(Error::Config(format!(
            "{} frames not divisible into groups of {g}",
            per_frame.len()
        )));
    }
    per_frame
        .chunks_exact(g)
        .map(|chunk| {
            let mut values = Vec::with_capacity(2 * g);
            for iv in chunk {
                values.push(iv.start);
                values.push(iv.end);
            }
            IntervalGroup::new(values)
        })
        .collect()
}

/// The input image's normalized interval [-0.5, 0.5] replicated g times.
pub fn replicate_input_interval(g: usize) -> IntervalGroup {
    let mut values = Vec::with_capacity(2 * g);
    for _ in 0..g.max(1) {
        values.push(-0.5);
        values.push(0.5);
    }
    IntervalGroup { values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingScheme {
    /// γ on every start/end coordinate of the group (the primary scheme).
    PerInterval,
    /// γ on (first start, last end, uniform duration, frame count).
    Alternative,
    /// Affine map on the raw 2g coordinates, no sinusoids.
    LinearAblation,
}

/// Sinusoidal feature and projection configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Encoding frequencies ν₁ < ν₂ < …, cycles per normalized time unit.
    pub frequencies: Vec<f64>,
    /// Output embedding width D̃.
    pub output_width: usize,
    pub scheme: EncodingScheme,
    /// Physical frames per latent frame.
    pub group_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frequencies: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            output_width: 64,
            scheme: EncodingScheme::PerInterval,
            group_size: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() {
            return Err(Error::Config("need at least one encoding frequency".into()));
        }
        for w in self.frequencies.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("frequencies must be strictly increasing".into()));
            }
        }
        if self.output_width == 0 || self.group_size == 0 {
            return Err(Error::Config("output width and group size must be >= 1".into()));
        }
        Ok(())
    }

    /// Projection input width for the configured scheme.
    pub fn input_width(&self) -> usize {
        let n2 = 2 * self.frequencies.len();
        match self.scheme {
            EncodingScheme::PerInterval => 2 * self.group_size * n2,
            EncodingScheme::Alternative => 4 * n2,
            EncodingScheme::LinearAblation => 2 * self.group_size,
        }
    }
}

/// Learned affine projection from concatenated features to D̃.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    /// (input width × D̃).
    pub matrix: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionWeights {
    pub fn new(matrix: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if matrix.ncols() != bias.len() {
            return Err(Error::Shape(format!(
                "projection matrix has {} outputs but bias has {}",
                matrix.ncols(),
                bias.len()
            )));
        }
        if matrix.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("projection weights must be finite".into()));
        }
        Ok(Self { matrix, bias })
    }

    /// Gaussian init with 1/sqrt(fan-in) scale; bias zero.
    pub fn init_random(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let din = config.input_width();
        let dout = config.output_width;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (din as f64).sqrt()).expect("valid std");
        let matrix = Array2::from_shape_fn((din, dout), |_| normal.sample(&mut rng));
        Ok(Self { matrix, bias: Array1::zeros(dout) })
    }

    pub fn matches(&self, config: &EncoderConfig) -> Result<()> {
        if self.matrix.nrows() != config.input_width()
            || self.matrix.ncols() != config.output_width
        {
            return Err(Error::Shape(format!(
                "projection is {}×{}, scheme expects {}×{}",
                self.matrix.nrows(),
                self.matrix.ncols(),
                config.input_width(),
                config.output_width
            )));
        }
        Ok(())
    }
}

/// γ(t) = [cos(2πν₁t), sin(2πν₁t), …, cos(2πν_N t), sin(2πν_N t)].
pub fn gamma(t: f64, frequencies: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies.len());
    for &nu in frequencies {
        let arg = std::f64::consts::TAU * nu * t;
        out.push(arg.cos());
        out.push(arg.sin());
    }
    out
}

/// Concatenated γ features of every coordinate of `group`, in coordinate
/// order. This is the projection input of the primary scheme.
pub fn gamma_features(group: &IntervalGroup, frequencies: &[f64]) -> Array1<f64> {
    let n2 = 2 * frequencies.len();
    let mut feats = Array1::zeros(group.values().len() * n2);
    for (i, &t) in group.values().iter().enumerate() {
        for (j, v) in gamma(t, frequencies).into_iter().enumerate() {
            feats[i * n2 + j] = v;
        }
    }
    feats
}

fn project(feats: ArrayView1<f64>, matrix: ArrayView2<f64>, bias: ArrayView1<f64>) -> Array1<f64> {
    feats.dot(&matrix) + bias
}

/// Primary scheme: γ per coordinate, concat, affine projection.
pub fn encode_group(
    group: &IntervalGroup,
    config: &EncoderConfig,
    weights: &ProjectionWeights,
) -> Result<Array1<f64>> {
    encode_group_with(group, config, weights.matrix.view(), weights.bias.view())
}

/// [`encode_group`] over borrowed weight views (the denoiser trains the
/// projection inside its own parameter store).
pub fn encode_group_with(
    group: &IntervalGroup,
    config: &EncoderConfig,
    matrix: ArrayView2<f64>,
    bias: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    config.validate()?;
    if config.scheme != EncodingScheme::PerInterval {
        return Err(Error::Config(format!(
            "encode_group requires the per-interval scheme, got {:?}",
            config.scheme
        )));
    }
    if group.group_size() != config.group_size {
        return Err(Error::Config(format!(
            "group size {} does not match config group size {}",
            group.group_size(),
            config.group_size
        )));
    }
    if matrix.nrows() != config.input_width() || matrix.ncols() != config.output_width {
        return Err(Error::Shape(format!(
            "projection is {}×{}, expected {}×{}",
            matrix.nrows(),
            matrix.ncols(),
            config.input_width(),
            config.output_width
        )));
    }
    let feats = gamma_features(group, &config.frequencies);
    Ok(project(feats.view(), matrix, bias))
}

/// Derives the alternative scheme's four scalars from a uniform-duration
/// target set.
pub fn alternative_descriptor(
    intervals: &[ExposureInterval],
) -> Result<(f64, f64, f64, usize)> {
    if intervals.is_empty() {
        return Err(Error::Config("need at least one interval".into()));
    }
    let d0 = intervals[0].duration();
    for iv in intervals {
        if (iv.duration() - d0).abs() > 1e-9 {
            return Err(Error::Unsupported(format!(
                "alternative scheme requires uniform durations, got {} and {d0}",
                iv.duration()
            )));
        }
    }
    Ok((
        intervals[0].start,
        intervals[intervals.len() - 1].end,
        d0,
        intervals.len(),
    ))
}

/// Alternative scheme: γ on (first start, last end, frame duration,
/// count/16), concat, affine projection.
pub fn encode_alternative(
    first_start: f64,
    last_end: f64,
    frame_duration: f64,
    frame_count: usize,
    config: &EncoderConfig,
    weights: &ProjectionWeights,
) -> Result<Array1<f64>> {
    config.validate()?;
    if config.scheme != EncodingScheme::Alternative {
        return Err(Error::Config(format!(
            "encode_alternative requires the alternative scheme, got {:?}",
            config.scheme
        )));
    }
    if frame_count == 0 {
        return Err(Error::Config("frame count must be >= 1".into()));
    }
    weights.matches(config)?;
    let scalars = [
        first_start,
        last_end,
        frame_duration,
        frame_count as f64 / MAX_FRAME_COUNT as f64,
    ];
    let n2 = 2 * config.frequencies.len();
    let mut feats = Array1::zeros(4 * n2);
    for (i, &t) in scalars.iter().enumerate() {
        for (j, v) in gamma(t, &config.frequencies).into_iter().enumerate() {
            feats[i * n2 + j] = v;
        }
    }
    Ok(project(feats.view(), weights.matrix.view(), weights.bias.view()))
}

/// Ablation: affine map of the raw 2g coordinates, no sinusoids.
pub fn encode_group_linear(
    group: &IntervalGroup,
    weights: &ProjectionWeights,
) -> Result<Array1<f64>> {
    if weights.matrix.nrows() != group.values().len() {
        return Err(Error::Shape(format!(
            "projection expects {} inputs, group has {}",
            weights.matrix.nrows(),
            group.values().len()
        )));
    }
    let feats = Array1::from(group.values().to_vec());
    Ok(project(feats.view(), weights.matrix.view(), weights.bias.view()))
}

// ---------------------------------------------------------------------
// Spatiotemporal position encoding
// ---------------------------------------------------------------------

/// Latent token grid: frame slots × patch rows × patch cols, and the
/// embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionGrid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
}

impl PositionGrid {
    /// Contiguous per-axis slice widths (frame, row, col); each even,
    /// summing to `width`.
    pub fn axis_widths(&self) -> Result<(usize, usize, usize)> {
        if self.width < 6 || !self.width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "position encoding width must be even and >= 6, got {}",
                self.width
            )));
        }
        let base = (self.width / 3) & !1;
        Ok((self.width - 2 * base, base, base))
    }
}

const POSITION_BASE: f64 = 10_000.0;

fn axis_code(pos: f64, out: &mut [f64]) {
    let pairs = out.len() / 2;
    for j in 0..pairs {
        let omega = POSITION_BASE.powf(-(j as f64) / pairs as f64);
        out[2 * j] = (pos * omega).cos();
        out[2 * j + 1] = (pos * omega).sin();
    }
}

/// Deterministic per-axis sinusoidal code over (frame, row, col); each
/// axis occupies a contiguous slice of the embedding.
pub fn position_encoding(
    frame: usize,
    row: usize,
    col: usize,
    grid: &PositionGrid,
) -> Result<Array1<f64>> {
    if frame >= grid.frames || row >= grid.rows || col >= grid.cols {
        return Err(Error::Domain(format!(
            "position ({frame}, {row}, {col}) outside grid {}×{}×{}",
            grid.frames, grid.rows, grid.cols
        )));
    }
    let (wf, wr, wc) = grid.axis_widths()?;
    let mut out = Array1::zeros(grid.width);
    let slice = out.as_slice_mut().expect("contiguous");
    axis_code(frame as f64, &mut slice[0..wf]);
    axis_code(row as f64, &mut slice[wf..wf + wr]);
    axis_code(col as f64, &mut slice[wf + wr..wf + wr + wc]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_groups(starts: &[f64], width: f64) -> Vec<ExposureInterval> {
        starts
            .iter()
            .map(|&s| ExposureInterval::new(s, s + width).unwrap())
            .collect()
    }

    #[test]
    fn gamma_at_zero_alternates_one_zero() {
        let g = gamma(0.0, &[1.0, 2.0, 4.0]);
        assert_eq!(g, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn gamma_quarter_period() {
        let g = gamma(0.25, &[1.0]);
        assert!(g[0].abs() < 1e-12);
        assert!((g[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let freqs = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(-3.0..3.0);
            for v in gamma(t, &freqs) {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn gamma_periodic_for_integer_frequencies() {
        let freqs = [1.0, 2.0, 4.0];
        for &t in &[-0.7, 0.0, 0.31, 1.2] {
            let a = gamma(t, &freqs);
            let b = gamma(t + 1.0, &freqs);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grouping_flattens_pairs_in_frame_order() {
        let ivs = unit_groups(&[0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875], 0.125);
        let groups = group_intervals(&ivs, 4).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(
            groups[0].values(),
            &[0.0, 0.125, 0.125, 0.25, 0.25, 0.375, 0.375, 0.5]
        );
    }

    #[test]
    fn group_size_one_is_identity() {
        let ivs = unit_groups(&[0.0, 0.5], 0.5);
        let groups = group_intervals(&ivs, 1).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].values(), &[0.0, 0.5]);
    }

    #[test]
    fn indivisible_count_rejected() {
        let ivs = unit_groups(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 0.1);
        assert!(group_intervals(&ivs, 4).is_err());
    }

    #[test]
    fn replication_repeats_unit_interval() {
        let g = replicate_input_interval(4);
        assert_eq!(g.values(), &[-0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5]);
        let g = replicate_input_interval(1);
        assert_eq!(g.values(), &[-0.5, 0.5]);
        // Pair validity holds by construction.
        IntervalGroup::new(g.values().to_vec()).unwrap();
    }

    #[test]
    fn zero_matrix_projects_to_bias() {
        let config = EncoderConfig { group_size: 2, ..EncoderConfig::default() };
        let din = config.input_width();
        let dout = config.output_width;
        let weights = ProjectionWeights::new(
            Array2::zeros((din, dout)),
            Array1::from_shape_fn(dout, |i| i as f64 * 0.1),
        )
        .unwrap();
        let group = IntervalGroup::new(vec![-0.5, 0.0, 0.0, 0.5]).unwrap();
        let out = encode_group(&group, &config, &weights).unwrap();
        for (i, &v) in out.iter().enumerate() {
            assert_eq!(v, i as f64 * 0.1);
        }
    }

    #[test]
    fn selector_weights_expose_concatenation_order() {
        // A permutation-like matrix selecting the γ block of one
        // coordinate shows the block order matches coordinate order.
        let config = EncoderConfig {
            frequencies: vec![1.0, 2.0],
            output_width: 4,
            scheme: EncodingScheme::PerInterval,
            group_size: 1,
        };
        let din = config.input_width(); // 2 coords × 4 features
        for coord in 0..2 {
            let mut m = Array2::zeros((din, 4));
            for j in 0..4 {
                m[[coord * 4 + j, j]] = 1.0;
            }
            let weights = ProjectionWeights::new(m, Array1::zeros(4)).unwrap();
            let group = IntervalGroup::new(vec![0.1, 0.3]).unwrap();
            let out = encode_group(&group, &config, &weights).unwrap();
            let expect = gamma(group.values()[coord], &config.frequencies);
            for (a, b) in out.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearby_groups_separate() {
        let config = EncoderConfig::default();
        let weights = ProjectionWeights::init_random(&config, 42).unwrap();
        let a = IntervalGroup::new(vec![-0.5, 0.0]).unwrap();
        let b = IntervalGroup::new(vec![-0.49, 0.0]).unwrap();
        let ea = encode_group(&a, &config, &weights).unwrap();
        let eb = encode_group(&b, &config, &weights).unwrap();
        let d = (&ea - &eb).mapv(|v| v * v).sum().sqrt();
        assert!(d > 0.0, "distinct groups must embed apart");
    }

    #[test]
    fn alternative_scheme_contracts() {
        let config = EncoderConfig {
            scheme: EncodingScheme::Alternative,
            ..EncoderConfig::default()
        };
        let weights = ProjectionWeights::init_random(&config, 7).unwrap();
        // Degenerate single frame spanning the whole exposure encodes.
        encode_alternative(-0.5, 0.5, 1.0, 1, &config, &weights).unwrap();
        // Zero weights -> bias.
        let zw = ProjectionWeights::new(
            Array2::zeros((config.input_width(), config.output_width)),
            Array1::from_elem(config.output_width, 0.25),
        )
        .unwrap();
        let out = encode_alternative(-0.5, 0.5, 0.25, 4, &config, &zw).unwrap();
        assert!(out.iter().all(|&v| v == 0.25));
        // Count-only differences still separate embeddings.
        let a = encode_alternative(-0.5, 0.5, 0.125, 8, &config, &weights).unwrap();
        let b = encode_alternative(-0.5, 0.5, 0.125, 4, &config, &weights).unwrap();
        assert!((&a - &b).mapv(|v| v * v).sum() > 0.0);
        // Non-uniform targets are unsupported.
        let ivs = vec![
            ExposureInterval::new(-0.5, 0.0).unwrap(),
            ExposureInterval::new(0.0, 0.25).unwrap(),
        ];
        assert!(matches!(
            alternative_descriptor(&ivs),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn linear_ablation_is_affine() {
        let g = IntervalGroup::new(vec![-0.25, 0.25]).unwrap();
        let scaled = IntervalGroup::new(vec![-0.5, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0));
        let w = ProjectionWeights::new(m, bias.clone()).unwrap();
        let e1 = encode_group_linear(&g, &w).unwrap();
        let e2 = encode_group_linear(&scaled, &w).unwrap();
        // encode(2x) - bias = 2 (encode(x) - bias).
        for i in 0..3 {
            assert!(((e2[i] - bias[i]) - 2.0 * (e1[i] - bias[i])).abs() < 1e-12);
        }
        let zw = ProjectionWeights::new(Array2::zeros((2, 3)), bias.clone()).unwrap();
        let e = encode_group_linear(&g, &zw).unwrap();
        for i in 0..3 {
            assert_eq!(e[i], bias[i]);
        }
    }

    #[test]
    fn position_origin_is_cos_one_sin_zero() {
        let grid = PositionGrid { frames: 4, rows: 8, cols: 8, width: 32 };
        let code = position_encoding(0, 0, 0, &grid).unwrap();
        for (i, &v) in code.iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(v, 1.0, "cos slot {i}");
            } else {
                assert_eq!(v, 0.0, "sin slot {i}");
            }
        }
    }

    #[test]
    fn position_out_of_grid_rejected() {
        let grid = PositionGrid { frames: 4, rows: 8, cols: 8, width: 32 };
        assert!(position_encoding(4, 0, 0, &grid).is_err());
        assert!(position_encoding(0, 8, 0, &grid).is_err());
    }

    #[test]
    fn positions_distinct_over_grid() {
        let grid = PositionGrid { frames: 4, rows: 16, cols: 16, width: 32 };
        let mut codes = Vec::new();
        for f in 0..grid.frames {
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    codes.push(position_encoding(f, r, c, &grid).unwrap());
                }
            }
        }
        // Exhaustive pairwise distinctness.
        for i in 0..codes.len() {
            for j in (i + 1)..codes.len() {
                let d = (&codes[i] - &codes[j]).mapv(|v| v * v).sum();
                assert!(d > 1e-12, "positions {i} and {j} collide");
            }
        }
    }
}
