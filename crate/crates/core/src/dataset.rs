//! Telemonitoring CSV ingestion, design matrices, standardization, splits and
//! the sequence tensor fed to the recurrent network.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};

/// The 16 voice measurements, in file order.
pub const VOICE_FEATURES: [&str; 16] = [
    "Jitter(%)",
    "Jitter(Abs)",
    "Jitter:RAP",
    "Jitter:PPQ5",
    "Jitter:DDP",
    "Shimmer",
    "Shimmer(dB)",
    "Shimmer:APQ3",
    "Shimmer:APQ5",
    "Shimmer:APQ11",
    "Shimmer:DDA",
    "NHR",
    "HNR",
    "RPDE",
    "DFA",
    "PPE",
];

pub const SUBJECT: &str = "subject#";
pub const AGE: &str = "age";
pub const SEX: &str = "sex";
pub const TEST_TIME: &str = "test_time";
pub const MOTOR_UPDRS: &str = "motor_UPDRS";
pub const TOTAL_UPDRS: &str = "total_UPDRS";

/// Full header of the UCI telemonitoring file, in canonical order.
pub fn canonical_header() -> Vec<&'static str> {
    let mut h = vec![SUBJECT, AGE, SEX, TEST_TIME, MOTOR_UPDRS, TOTAL_UPDRS];
    h.extend_from_slice(&VOICE_FEATURES);
    h
}

/// Default regressors: the 16 voice features plus age, sex, test_time and
/// motor_UPDRS.
pub fn default_regressors() -> Vec<String> {
    VOICE_FEATURES
        .iter()
        .chain([AGE, SEX, TEST_TIME, MOTOR_UPDRS].iter())
        .map(|s| s.to_string())
        .collect()
}

pub fn voice_regressors() -> Vec<String> {
    VOICE_FEATURES.iter().map(|s| s.to_string()).collect()
}

/// One recording (one CSV row).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiceRecord {
    pub subject_id: u32,
    pub age: f64,
    pub sex: u8,
    pub test_time: f64,
    pub motor_updrs: f64,
    pub total_updrs: f64,
    pub voice_features: [f64; 16],
}

impl VoiceRecord {
    /// Value of a named numeric column. `subject#` is not a regressor.
    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            AGE => Some(self.age),
            SEX => Some(self.sex as f64),
            TEST_TIME => Some(self.test_time),
            MOTOR_UPDRS => Some(self.motor_updrs),
            TOTAL_UPDRS => Some(self.total_updrs),
            _ => VOICE_FEATURES
                .iter()
                .position(|&n| n == column)
                .map(|i| self.voice_features[i]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Total,
    Motor,
}

impl Target {
    pub fn column(self) -> &'static str {
        match self {
            Target::Total => TOTAL_UPDRS,
            Target::Motor => MOTOR_UPDRS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<VoiceRecord>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<VoiceRecord>) -> Self {
        Dataset {
            records,
            feature_names: canonical_header().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subject_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.subject_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.subject_id).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Reads the telemonitoring CSV. Columns are matched by header name.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::EmptyInput(format!("no header row ({e})")))?
        .clone();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyInput("file has no header row".into()));
    }
    let pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let header = canonical_header();
    let mut cols = Vec::with_capacity(header.len());
    for name in &header {
        cols.push(*pos.get(name).ok_or_else(|| Error::Schema(name.to_string()))?);
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // data row numbers are 1-based, header excluded
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            column: String::new(),
            value: e.to_string(),
        })?;
        let cell = |k: usize| -> Result<f64> {
            let raw = row.get(cols[k]).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: row_no,
                    column: header[k].to_string(),
                    value: raw.to_string(),
                })
        };
        let subject = cell(0)?;
        let sex = cell(2)?;
        if subject.fract() != 0.0 || subject < 0.0 {
            return Err(Error::Parse {
                row: row_no,
                column: SUBJECT.into(),
                value: subject.to_string(),
            });
        }
        if sex != 0.0 && sex != 1.0 {
            return Err(Error::Parse {
                row: row_no,
                column: SEX.into(),
                value: sex.to_string(),
            });
        }
        let mut voice = [0.0; 16];
        for (j, v) in voice.iter_mut().enumerate() {
            *v = cell(6 + j)?;
        }
        records.push(VoiceRecord {
            subject_id: subject as u32,
            age: cell(1)?,
            sex: sex as u8,
            test_time: cell(3)?,
            motor_updrs: cell(4)?,
            total_updrs: cell(5)?,
            voice_features: voice,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("header present but no data rows".into()));
    }
    Ok(Dataset::new(records))
}

/// Writes records in the canonical UCI layout.
pub fn write_csv<W: std::io::Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", canonical_header().join(","))?;
    for r in &dataset.records {
        let mut fields = vec![
            r.subject_id.to_string(),
            r.age.to_string(),
            r.sex.to_string(),
            r.test_time.to_string(),
            r.motor_updrs.to_string(),
            r.total_updrs.to_string(),
        ];
        fields.extend(r.voice_features.iter().map(|v| v.to_string()));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Design matrix (one row per record, dataset order) and target vector.
pub fn build_design(
    dataset: &Dataset,
    target: Target,
    regressors: &[String],
) -> Result<(Matrix, Vec<f64>)> {
    if regressors.is_empty() {
        return Err(Error::Config("regressor list is empty".into()));
    }
    let probe = VoiceRecord {
        subject_id: 0,
        age: 0.0,
        sex: 0,
        test_time: 0.0,
        motor_updrs: 0.0,
        total_updrs: 0.0,
        voice_features: [0.0; 16],
    };
    let mut seen = BTreeSet::new();
    for name in regressors {
        if name == target.column() {
            return Err(Error::Config(format!(
                "target `{name}` cannot also be a regressor"
            )));
        }
        if probe.get(name).is_none() {
            return Err(Error::Config(format!("unknown regressor `{name}`")));
        }
        if !seen.insert(name) {
            return Err(Error::Config(format!("regressor `{name}` listed twice")));
        }
    }
    let mut data = Vec::with_capacity(dataset.len() * regressors.len());
    for r in &dataset.records {
        data.extend(regressors.iter().map(|n| r.get(n).unwrap()));
    }
    let x = Matrix::from_vec(dataset.len(), regressors.len(), data)?;
    let y = dataset
        .records
        .iter()
        .map(|r| r.get(target.column()).unwrap())
        .collect();
    Ok((x, y))
}

/// Per-column mean and population standard deviation of the fitting data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Fits column statistics. Constant columns are rejected; `names`, when
    /// given, label the offending column in the error.
    pub fn fit(x: &Matrix, names: Option<&[String]>) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::EmptyInput("cannot standardize an empty matrix".into()));
        }
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        for (j, (&s, &m)) in std.iter().zip(&mean).enumerate() {
            if !(s > 1e-12 * m.abs().max(1e-300)) {
                let label = names
                    .and_then(|n| n.get(j).cloned())
                    .unwrap_or_else(|| format!("#{j}"));
                return Err(Error::DegenerateColumn(label));
            }
        }
        Ok(StandardizationStats { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                z.cols()
            )));
        }
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn select(&self, cols: &[usize]) -> StandardizationStats {
        StandardizationStats {
            mean: cols.iter().map(|&c| self.mean[c]).collect(),
            std: cols.iter().map(|&c| self.std[c]).collect(),
        }
    }
}

pub fn fit_standardizer(x: &Matrix) -> Result<StandardizationStats> {
    StandardizationStats::fit(x, None)
}

pub fn apply_standardizer(stats: &StandardizationStats, x: &Matrix) -> Result<Matrix> {
    stats.apply(x)
}

/// One cross-validation fold: sorted training and validation indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    Ok(())
}

fn folds_from_assignment(n: usize, k: usize, fold_of: &[usize]) -> Vec<Fold> {
    (0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == f);
            Fold { train, val }
        })
        .collect()
}

/// Shuffled k-fold split of `0..n`; validation sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, rng: &mut RandomSource) -> Result<Vec<Fold>> {
    check_k(n, k)?;
    let perm = rng.permutation(n);
    let mut fold_of = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = f;
        }
        pos += size;
    }
    Ok(folds_from_assignment(n, k, &fold_of))
}

/// k-fold split that keeps every group (subject) inside a single fold.
/// Groups are shuffled and assigned greedily to the currently smallest fold.
pub fn kfold_split_grouped(groups: &[u32], k: usize, rng: &mut RandomSource) -> Result<Vec<Fold>> {
    let n = groups.len();
    let mut members: Vec<(u32, Vec<usize>)> = {
        let mut map: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &g) in groups.iter().enumerate() {
            map.entry(g).or_default().push(i);
        }
        map.into_iter().collect()
    };
    check_k(members.len(), k)?;
    rng.shuffle(&mut members);
    let mut sizes = vec![0usize; k];
    let mut fold_of = vec![0; n];
    for (_, idx) in &members {
        let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[f] += idx.len();
        for &i in idx {
            fold_of[i] = f;
        }
    }
    Ok(folds_from_assignment(n, k, &fold_of))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdout {
    pub trainval: Vec<usize>,
    pub test: Vec<usize>,
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction must lie in (0, 1), got {f}"
        )));
    }
    Ok(())
}

/// Random holdout with `|test| = round(n * test_fraction)`.
pub fn holdout_split(n: usize, test_fraction: f64, rng: &mut RandomSource) -> Result<Holdout> {
    check_fraction(test_fraction)?;
    let n_test = (n as f64 * test_fraction).round() as usize;
    let perm = rng.permutation(n);
    let mut test = perm[..n_test].to_vec();
    let mut trainval = perm[n_test..].to_vec();
    test.sort_unstable();
    trainval.sort_unstable();
    Ok(Holdout { trainval, test })
}

/// Subject-grouped holdout: whole groups move to the test side until it
/// holds at least `round(n * test_fraction)` rows.
pub fn holdout_split_grouped(
    groups: &[u32],
    test_fraction: f64,
    rng: &mut RandomSource,
) -> Result<Holdout> {
    check_fraction(test_fraction)?;
    let n = groups.len();
    let target = (n as f64 * test_fraction).round() as usize;
    let mut ids: Vec<u32> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    rng.shuffle(&mut ids);
    let mut in_test = BTreeSet::new();
    let mut count = 0;
    for g in ids {
        if count >= target {
            break;
        }
        count += groups.iter().filter(|&&x| x == g).count();
        in_test.insert(g);
    }
    let (test, trainval) = (0..n).partition(|&i| in_test.contains(&groups[i]));
    Ok(Holdout { trainval, test })
}

/// N×T×d tensor, row-major over (sample, step, feature).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceTensor {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl SequenceTensor {
    pub fn new(n: usize, t: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * t * d {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {n}x{t}x{d} tensor",
                data.len()
            )));
        }
        Ok(SequenceTensor { n, t, d, data })
    }

    /// Sample `i` as a `t × d` slice (row-major).
    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.t * self.d;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn select(&self, idx: &[usize]) -> SequenceTensor {
        let mut data = Vec::with_capacity(idx.len() * self.t * self.d);
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        SequenceTensor {
            n: idx.len(),
            t: self.t,
            d: self.d,
            data,
        }
    }

    /// Inverse of [`to_sequences`]: an N × (T·d) matrix.
    pub fn flatten(&self) -> Matrix {
        Matrix::from_vec(self.n, self.t * self.d, self.data.clone()).unwrap()
    }
}

/// Each row's features become a pseudo-sequence: T = columns, d = 1.
pub fn to_sequences(x: &Matrix) -> Result<SequenceTensor> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("cannot build sequences from an empty matrix".into()));
    }
    SequenceTensor::new(x.rows(), x.cols(), 1, x.as_slice().to_vec())
}

/// Longitudinal alternative: sample i is the window of the `window` most
/// recent recordings of the same subject ending at record i (ordered by
/// test_time, ties by row order), each step carrying all columns of `x`.
/// Subjects with fewer earlier recordings are left-padded by repeating their
/// earliest one.
pub fn to_subject_windows(
    x: &Matrix,
    subject_ids: &[u32],
    test_time: &[f64],
    window: usize,
) -> Result<SequenceTensor> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("cannot build sequences from an empty matrix".into()));
    }
    if subject_ids.len() != x.rows() || test_time.len() != x.rows() {
        return Err(Error::Shape("subject/time vectors must match row count".into()));
    }
    if window == 0 {
        return Err(Error::Parameter("window length must be >= 1".into()));
    }
    let mut by_subject: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, &s) in subject_ids.iter().enumerate() {
        by_subject.entry(s).or_default().push(i);
    }
    let mut rank = vec![0usize; x.rows()];
    for rows in by_subject.values_mut() {
        rows.sort_by(|&a, &b| test_time[a].total_cmp(&test_time[b]).then(a.cmp(&b)));
        for (r, &i) in rows.iter().enumerate() {
            rank[i] = r;
        }
    }
    let d = x.cols();
    let mut data = Vec::with_capacity(x.rows() * window * d);
    for i in 0..x.rows() {
        let rows = &by_subject[&subject_ids[i]];
        let end = rank[i];
        for step in 0..window {
            let back = window - 1 - step;
            let j = rows[end.saturating_sub(back)];
            data.extend_from_slice(x.row(j));
        }
    }
    SequenceTensor::new(x.rows(), window, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        canonical_header().join(",")
    }

    fn row(subject: u32, total: f64) -> String {
        let mut f = vec![
            subject.to_string(),
            "60".into(),
            "1".into(),
            "5.5".into(),
            "20.1".into(),
            total.to_string(),
        ];
        f.extend((0..16).map(|j| format!("0.{j}1")));
        f.join(",")
    }

    #[test]
    fn parses_rows_by_header_name() {
        let text = format!("{}\n{}\n{}\n", header(), row(1, 30.0), row(2, 31.5));
        let ds = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.subject_count(), 2);
        assert_eq!(ds.records[1].total_updrs, 31.5);
        assert_eq!(ds.records[0].voice_features[1], 0.11);
    }

    #[test]
    fn reordered_columns_still_map() {
        let mut cols = canonical_header();
        cols.reverse();
        let mut vals: Vec<String> = row(3, 40.0).split(',').map(String::from).collect();
        vals.reverse();
        let text = format!("{}\n{}\n", cols.join(","), vals.join(","));
        let ds = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.records[0].subject_id, 3);
        assert_eq!(ds.records[0].total_updrs, 40.0);
    }

    #[test]
    fn header_only_is_empty_input() {
        let err = read_csv(format!("{}\n", header()).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)), "{err}");
        assert!(matches!(read_csv("".as_bytes()).unwrap_err(), Error::EmptyInput(_)));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = header().replace("total_UPDRS", "totalUPDRS");
        let err = read_csv(format!("{text}\n{}\n", row(1, 3.0)).as_bytes()).unwrap_err();
        match err {
            Error::Schema(c) => assert_eq!(c, "total_UPDRS"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_cell_reports_row() {
        let bad = row(1, 3.0).replacen("60", "sixty", 1);
        let text = format!("{}\n{}\n{}\n", header(), row(1, 3.0), bad);
        match read_csv(text.as_bytes()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            e => panic!("unexpected {e}"),
        }
    }

    fn tiny_dataset(n: usize) -> Dataset {
        let text: String = std::iter::once(header())
            .chain((0..n).map(|i| row(i as u32 % 3, i as f64)))
            .collect::<Vec<_>>()
            .join("\n");
        read_csv(text.as_bytes()).unwrap()
    }

    #[test]
    fn design_shapes() {
        let ds = tiny_dataset(4);
        let (x, y) = build_design(&ds, Target::Total, &default_regressors()).unwrap();
        assert_eq!(x.shape(), (4, 20));
        assert_eq!(y, vec![0.0, 1.0, 2.0, 3.0]);
        let (x, _) = build_design(&ds, Target::Total, &voice_regressors()).unwrap();
        assert_eq!(x.shape(), (4, 16));
    }

    #[test]
    fn design_rejects_target_and_unknown_names() {
        let ds = tiny_dataset(2);
        let mut regs = voice_regressors();
        regs.push(TOTAL_UPDRS.into());
        assert!(matches!(
            build_design(&ds, Target::Total, &regs),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_design(&ds, Target::Total, &["nope".to_string()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let x = Matrix::from_rows(&[[1.0, 10.0], [2.0, 30.0], [6.0, 20.0]]).unwrap();
        let stats = fit_standardizer(&x).unwrap();
        let z = apply_standardizer(&stats, &x).unwrap();
        for c in 0..2 {
            let col = z.column(c);
            let m = col.iter().sum::<f64>() / 3.0;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-10);
        }
        let mean_row = Matrix::from_rows(std::slice::from_ref(&stats.mean)).unwrap();
        assert!(stats.apply(&mean_row).unwrap().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0]]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        match StandardizationStats::fit(&x, Some(&names)).unwrap_err() {
            Error::DegenerateColumn(c) => assert_eq!(c, "b"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn kfold_exact_and_remainder() {
        let mut rng = RandomSource::new(1);
        let folds = kfold_split(10, 5, &mut rng).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.val.len() == 2 && f.train.len() == 8));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let folds = kfold_split(11, 5, &mut rng).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.val.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn kfold_parameter_errors_and_determinism() {
        let mut rng = RandomSource::new(1);
        assert!(kfold_split(10, 1, &mut rng).is_err());
        assert!(kfold_split(3, 4, &mut rng).is_err());
        let a = kfold_split(50, 5, &mut RandomSource::new(9)).unwrap();
        let b = kfold_split(50, 5, &mut RandomSource::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grouped_folds_keep_subjects_together() {
        let groups: Vec<u32> = (0..60).map(|i| i % 7).collect();
        let folds = kfold_split_grouped(&groups, 3, &mut RandomSource::new(4)).unwrap();
        for f in &folds {
            let val: BTreeSet<u32> = f.val.iter().map(|&i| groups[i]).collect();
            let train: BTreeSet<u32> = f.train.iter().map(|&i| groups[i]).collect();
            assert!(val.is_disjoint(&train));
        }
    }

    #[test]
    fn holdout_sizes() {
        let h = holdout_split(100, 0.2, &mut RandomSource::new(3)).unwrap();
        assert_eq!((h.trainval.len(), h.test.len()), (80, 20));
        let h = holdout_split(5875, 0.2, &mut RandomSource::new(3)).unwrap();
        assert_eq!(h.test.len(), 1175);
        assert!(holdout_split(10, 1.0, &mut RandomSource::new(3)).is_err());
        assert!(holdout_split(10, 0.0, &mut RandomSource::new(3)).is_err());
        assert_eq!(
            holdout_split(40, 0.25, &mut RandomSource::new(8)).unwrap(),
            holdout_split(40, 0.25, &mut RandomSource::new(8)).unwrap()
        );
    }

    #[test]
    fn grouped_holdout_is_disjoint_by_subject() {
        let groups: Vec<u32> = (0..100).map(|i| i % 10).collect();
        let h = holdout_split_grouped(&groups, 0.2, &mut RandomSource::new(2)).unwrap();
        assert!(h.test.len() >= 20);
        let t: BTreeSet<u32> = h.test.iter().map(|&i| groups[i]).collect();
        assert!(h.trainval.iter().all(|&i| !t.contains(&groups[i])));
    }

    #[test]
    fn sequences_reshape() {
        let x = Matrix::from_vec(3, 10, (0..30).map(f64::from).collect()).unwrap();
        let s = to_sequences(&x).unwrap();
        assert_eq!((s.n, s.t, s.d), (3, 10, 1));
        assert_eq!(s.flatten(), x);
        let one = to_sequences(&Matrix::from_rows(&[[4.0]]).unwrap()).unwrap();
        assert_eq!((one.n, one.t, one.d), (1, 1, 1));
        assert!(to_sequences(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn subject_windows_pad_and_order() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [10.0]]).unwrap();
        let ids = [5, 5, 5, 6];
        let times = [2.0, 0.0, 1.0, 0.0];
        let s = to_subject_windows(&x, &ids, &times, 2).unwrap();
        assert_eq!(s.sample(0), &[3.0, 1.0]);
        assert_eq!(s.sample(1), &[2.0, 2.0]);
        assert_eq!(s.sample(2), &[2.0, 3.0]);
        assert_eq!(s.sample(3), &[10.0, 10.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kfold_partitions(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
                prop_assume!(k <= n);
                let folds = kfold_split(n, k, &mut RandomSource::new(seed)).unwrap();
                let mut all: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                let sizes: Vec<usize> = folds.iter().map(|f| f.val.len()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                for f in &folds {
                    prop_assert_eq!(f.train.len() + f.val.len(), n);
                }
            }

            #[test]
            fn standardize_roundtrip(rows in proptest::collection::vec(
                proptest::collection::vec(-1e3f64..1e3, 3), 3..20)) {
                let x = Matrix::from_rows(&rows).unwrap();
                if let Ok(stats) = fit_standardizer(&x) {
                    let back = stats.invert(&stats.apply(&x).unwrap()).unwrap();
                    for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
                        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
                    }
                }
            }

            #[test]
            fn sequences_flatten_identity(r in 1usize..8, c in 1usize..8, seed in any::<u64>()) {
                let mut rng = RandomSource::new(seed);
                let x = Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform()).collect()).unwrap();
                prop_assert_eq!(to_sequences(&x).unwrap().flatten(), x);
            }
        }
    }
}
