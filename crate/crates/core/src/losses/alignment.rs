use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::features::BLANK_ID;

/// Group index per audio frame: starts at 1 and increments at every change
/// of the frame-level phoneme prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsecutiveIndexVector(Vec<u32>);

impl ConsecutiveIndexVector {
    pub fn new(indices: Vec<u32>) -> Result<Self> {
        match indices.first() {
            None => return Err(KwsError::invalid("consecutive index vector is empty")),
            Some(&first) if first != 1 => {
                return Err(KwsError::invalid("consecutive index must start at 1"))
            }
            _ => {}
        }
        if indices.windows(2).any(|w| w[1] != w[0] && w[1] != w[0] + 1) {
            return Err(KwsError::invalid("consecutive index steps must be 0 or 1"));
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn groups(&self) -> u32 {
        *self.0.last().expect("non-empty by construction")
    }
}

/// How CTC blank frames enter the grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlankPolicy {
    /// Blanks are ordinary predictions and form their own groups.
    #[default]
    Keep,
    /// Blank frames join the group of the preceding non-blank frame
    /// (leading blanks join the first non-blank group).
    Merge,
}

impl BlankPolicy {
    pub fn apply(self, predictions: &[u32]) -> Vec<u32> {
        match self {
            BlankPolicy::Keep => predictions.to_vec(),
            BlankPolicy::Merge => {
                let first = predictions.iter().copied().find(|&p| p != BLANK_ID);
                let mut last = first.unwrap_or(BLANK_ID);
                predictions
                    .iter()
                    .map(|&p| {
                        if p != BLANK_ID {
                            last = p;
                        }
                        last
                    })
                    .collect()
            }
        }
    }
}

pub fn consecutive_index(predictions: &[u32], policy: BlankPolicy) -> Result<ConsecutiveIndexVector> {
    if predictions.is_empty() {
        return Err(KwsError::invalid("phoneme prediction vector is empty"));
    }
    let p = policy.apply(predictions);
    let mut c = Vec::with_capacity(p.len());
    c.push(1u32);
    for i in 1..p.len() {
        let prev = c[i - 1];
        c.push(if p[i] == p[i - 1] { prev } else { prev + 1 });
    }
    ConsecutiveIndexVector::new(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Affinity,
    Duration,
    Noise,
    Monotonic,
}

/// Audio x text matrix, row-major (`rows = T_a`, `cols = T_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    role: MatrixRole,
}

impl AlignmentMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, role: MatrixRole) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(KwsError::invalid("alignment matrix must be non-empty"));
        }
        if data.len() != rows * cols {
            return Err(KwsError::Shape(format!(
                "{} values for a {rows}x{cols} alignment matrix",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            role,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|j| self.column(j).iter().sum()).collect()
    }

    /// Row index of each column's largest entry (first on ties).
    pub fn column_argmax(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|j| {
                let col = self.column(j);
                let mut best = 0;
                for (i, &v) in col.iter().enumerate() {
                    if v > col[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Softmax of each column of a row-major score matrix over the row axis.
pub fn column_softmax(rows: usize, cols: usize, scores: &mut [f64]) {
    for j in 0..cols {
        let max = (0..rows).map(|i| scores[i * cols + j]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..rows {
            let e = (scores[i * cols + j] - max).exp();
            scores[i * cols + j] = e;
            sum += e;
        }
        for i in 0..rows {
            scores[i * cols + j] /= sum;
        }
    }
}

fn gaussian_target(c: &[u32], text_len: usize, sharpness: f64, role: MatrixRole) -> Result<AlignmentMatrix> {
    if text_len == 0 {
        return Err(KwsError::invalid("text length must be positive"));
    }
    if sharpness <= 0.0 || !sharpness.is_finite() {
        return Err(KwsError::invalid("sharpness g must be positive"));
    }
    let rows = c.len();
    let tt = text_len as f64;
    let mut scores = Vec::with_capacity(rows * text_len);
    for &ci in c {
        for j in 1..=text_len {
            let d = j as f64 - ci as f64;
            scores.push(-(d / tt).powi(2) / (2.0 * sharpness * sharpness));
        }
    }
    column_softmax(rows, text_len, &mut scores);
    AlignmentMatrix::new(rows, text_len, scores, role)
}

/// Target built from frame-level duration groups: a Gaussian in `j - c_i`
/// scaled by the text length, normalized over the audio axis.
pub fn duration_target_matrix(c: &ConsecutiveIndexVector, text_len: usize, sharpness: f64) -> Result<AlignmentMatrix> {
    gaussian_target(c.as_slice(), text_len, sharpness, MatrixRole::Duration)
}

/// Duration-free linear index `c_i = 1 + floor((i-1) * T_t / T_a)`.
pub fn monotonic_index(audio_len: usize, text_len: usize) -> Vec<u32> {
    (0..audio_len)
        .map(|i| 1 + (i * text_len / audio_len) as u32)
        .collect()
}

pub fn monotonic_target_matrix(audio_len: usize, text_len: usize, sharpness: f64) -> Result<AlignmentMatrix> {
    if audio_len == 0 {
        return Err(KwsError::invalid("audio length must be positive"));
    }
    gaussian_target(&monotonic_index(audio_len, text_len), text_len, sharpness, MatrixRole::Monotonic)
}

/// I.i.d. standard-normal scores pushed through the same column softmax.
pub fn noise_target_matrix<R: Rng + ?Sized>(audio_len: usize, text_len: usize, rng: &mut R) -> AlignmentMatrix {
    let mut scores: Vec<f64> = (0..audio_len * text_len).map(|_| rng.sample(StandardNormal)).collect();
    column_softmax(audio_len, text_len, &mut scores);
    AlignmentMatrix::new(audio_len.max(1), text_len.max(1), scores, MatrixRole::Noise)
        .expect("noise target with positive shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // run-length grouping written independently of the recurrence
    fn run_length_oracle(p: &[u32]) -> Vec<u32> {
        let mut out = Vec::new();
        let mut group = 0u32;
        let mut i = 0;
        while i < p.len() {
            group += 1;
            let mut j = i;
            while j < p.len() && p[j] == p[i] {
                out.push(group);
                j += 1;
            }
            i = j;
        }
        out
    }

    #[test]
    fn worked_example() {
        let c = consecutive_index(&[1, 1, 2, 2, 2, 3], BlankPolicy::Keep).unwrap();
        assert_eq!(c.as_slice(), &[1, 1, 2, 2, 2, 3]);
        assert_eq!(c.groups(), 3);
        // letters A,A,B,B,B,C with arbitrary ids
        let c = consecutive_index(&[7, 7, 3, 3, 3, 9], BlankPolicy::Keep).unwrap();
        assert_eq!(c.as_slice(), &[1, 1, 2, 2, 2, 3]);
    }

    #[test]
    fn constant_and_all_distinct() {
        assert_eq!(consecutive_index(&[4; 6], BlankPolicy::Keep).unwrap().as_slice(), &[1; 6]);
        let distinct: Vec<u32> = (0..6).collect();
        assert_eq!(
            consecutive_index(&distinct, BlankPolicy::Keep).unwrap().as_slice(),
            &[1, 2, 3, 4, 5, 6]
        );
        assert!(consecutive_index(&[], BlankPolicy::Keep).is_err());
    }

    #[test]
    fn blank_policies() {
        let p = [0, 3, 0, 0, 3, 5, 0];
        assert_eq!(consecutive_index(&p, BlankPolicy::Keep).unwrap().as_slice(), &[1, 2, 3, 3, 4, 5, 6]);
        // merge: 3 3 3 3 3 5 5
        assert_eq!(consecutive_index(&p, BlankPolicy::Merge).unwrap().as_slice(), &[1, 1, 1, 1, 1, 2, 2]);
        assert_eq!(BlankPolicy::Merge.apply(&[0, 0]), vec![0, 0]);
    }

    #[test]
    fn duration_target_worked_values() {
        // expected values from a standalone scalar evaluation of the target formula
        let c = ConsecutiveIndexVector::new(vec![1, 1, 2]).unwrap();
        let t = duration_target_matrix(&c, 2, 0.1).unwrap();
        let col1 = [0.49999906833844293, 0.49999906833844293, 1.8633231140598418e-06];
        let col2 = [3.7266253963979685e-06, 3.7266253963979685e-06, 0.9999925467492072];
        for i in 0..3 {
            assert!((t.get(i, 0) - col1[i]).abs() < 1e-12);
            assert!((t.get(i, 1) - col2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_scores_split_evenly() {
        let c = ConsecutiveIndexVector::new(vec![1, 1]).unwrap();
        let t = duration_target_matrix(&c, 1, 0.1).unwrap();
        assert_eq!(t.column(0), vec![0.5, 0.5]);
    }

    #[test]
    fn invalid_target_arguments() {
        let c = ConsecutiveIndexVector::new(vec![1]).unwrap();
        assert!(duration_target_matrix(&c, 0, 0.1).is_err());
        assert!(duration_target_matrix(&c, 1, 0.0).is_err());
        assert!(ConsecutiveIndexVector::new(vec![1, 3]).is_err());
        assert!(ConsecutiveIndexVector::new(vec![2]).is_err());
    }

    #[test]
    fn monotonic_diagonal_when_lengths_match() {
        let m = monotonic_target_matrix(5, 5, 0.1).unwrap();
        assert_eq!(m.column_argmax(), vec![0, 1, 2, 3, 4]);
        assert_eq!(monotonic_index(6, 3), vec![1, 1, 2, 2, 3, 3]);
        assert_eq!(m.role(), MatrixRole::Monotonic);
    }

    #[test]
    fn noise_target_seeded() {
        let a = noise_target_matrix(4, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = noise_target_matrix(4, 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for s in a.column_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_target_cells_average_to_uniform() {
        let (ta, tt, n) = (4usize, 2usize, 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut sum = vec![0.0; ta * tt];
        let mut sq = vec![0.0; ta * tt];
        for _ in 0..n {
            let m = noise_target_matrix(ta, tt, &mut rng);
            for (k, v) in m.data().iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        for k in 0..ta * tt {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - 1.0 / ta as f64).abs() < 3.0 * se, "cell {k}: {mean}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn matches_run_length_oracle(p in prop::collection::vec(0u32..4, 1..40)) {
            let c = consecutive_index(&p, BlankPolicy::Keep).unwrap();
            let expected = run_length_oracle(&p);
            prop_assert_eq!(c.as_slice(), expected.as_slice());
        }

        #[test]
        fn targets_are_column_stochastic(p in prop::collection::vec(0u32..5, 1..30), tt in 1usize..8) {
            let c = consecutive_index(&p, BlankPolicy::Keep).unwrap();
            let t = duration_target_matrix(&c, tt, 0.1).unwrap();
            for s in t.column_sums() {
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
            prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let m = monotonic_target_matrix(p.len(), tt, 0.1).unwrap();
            for s in m.column_sums() {
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn relabeling_predictions_keeps_target(p in prop::collection::vec(1u32..5, 1..30), shift in 1u32..20) {
            // an injective relabeling preserves equality of neighbours
            let relabeled: Vec<u32> = p.iter().map(|x| x * 7 + shift).collect();
            let a = duration_target_matrix(&consecutive_index(&p, BlankPolicy::Keep).unwrap(), 3, 0.1).unwrap();
            let b = duration_target_matrix(&consecutive_index(&relabeled, BlankPolicy::Keep).unwrap(), 3, 0.1).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn constant_predictions_depend_only_on_text_position(n in 1usize..20, tt in 1usize..6) {
            let preds = vec![2; n];
            let c = consecutive_index(&preds, BlankPolicy::Keep).unwrap();
            let t = duration_target_matrix(&c, tt, 0.1).unwrap();
            // every row has c_i = 1, so each column is uniform over audio frames
            for j in 0..tt {
                for i in 0..n {
                    prop_assert!((t.get(i, j) - 1.0 / n as f64).abs() < 1e-12);
                }
            }
        }
    }
}
