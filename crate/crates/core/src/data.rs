//! Feature-vector datasets: CSV ingestion, deterministic splits and batches,
//! and a synthetic covariate-shift generator.
//!
//! CSV layout is `f0,...,f{d-1}[,gender][,age]`, numeric only, header
//! mandatory. Gender is written as exactly `0` or `1`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};
use crate::numcore::{Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub features: Matrix,
    pub gender: Option<Vec<u8>>,
    /// Ages in months.
    pub ages: Option<Vec<f64>>,
    pub domain: Domain,
}

impl FeatureDataset {
    pub fn new(features: Matrix, gender: Option<Vec<u8>>, ages: Option<Vec<f64>>, domain: Domain) -> Result<Self> {
        let n = features.rows();
        if let Some(g) = &gender {
            if g.len() != n {
                return Err(ArlError::shape("dataset gender", format!("{n} rows"), format!("{} entries", g.len())));
            }
            if let Some(bad) = g.iter().find(|&&v| v > 1) {
                return Err(ArlError::Domain(format!("gender entries must be 0 or 1, got {bad}")));
            }
        }
        if let Some(a) = &ages {
            if a.len() != n {
                return Err(ArlError::shape("dataset ages", format!("{n} rows"), format!("{} entries", a.len())));
            }
            if let Some((i, v)) = a.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
                return Err(ArlError::Domain(format!("age at row {i} must be positive and finite, got {v}")));
            }
        }
        Ok(Self {
            features,
            gender,
            ages,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    /// Always false; a dataset holds at least one row.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Feature width.
    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// Gender as reals, the form the model consumes.
    pub fn gender_f64(&self) -> Option<Vec<f64>> {
        self.gender.as_ref().map(|g| g.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn without_ages(&self) -> Self {
        Self {
            ages: None,
            ..self.clone()
        }
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(idx)?,
            gender: self.gender.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
            ages: self.ages.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
            domain: self.domain,
        })
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> ArlError {
    ArlError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_csv(path: impl AsRef<Path>, domain: Domain) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ArlError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let mut d = 0;
    while d < names.len() && names[d] == format!("f{d}") {
        d += 1;
    }
    let rest = &names[d..];
    let (has_gender, has_age) = match rest {
        [] => (false, false),
        ["gender"] => (true, false),
        ["age"] => (false, true),
        ["gender", "age"] => (true, true),
        _ => {
            return Err(parse_err(
                path,
                1,
                format!("header must be f0..f{{d-1}} then optional gender and age, got {}", names.join(",")),
            ))
        }
    };
    if d == 0 {
        return Err(parse_err(path, 1, "header has no feature columns"));
    }
    let width = names.len();

    let mut data = Vec::new();
    let mut gender = Vec::new();
    let mut ages = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, found {}", record.len())));
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("column f{j}: not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column f{j}: non-finite value")));
            }
            data.push(v);
        }
        if has_gender {
            match &record[d] {
                "0" => gender.push(0),
                "1" => gender.push(1),
                other => return Err(parse_err(path, line, format!("gender must be 0 or 1, got {other:?}"))),
            }
        }
        if has_age {
            let field = &record[width - 1];
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("age: not a number: {field:?}")))?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(ArlError::Domain(format!("{}:{line}: age must be positive, got {v}", path.display())));
            }
            ages.push(v);
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(parse_err(path, 2, "no data rows"));
    }
    FeatureDataset::new(
        Matrix::new(n, d, data)?,
        has_gender.then_some(gender),
        has_age.then_some(ages),
        domain,
    )
}

/// Writes the dataset in the layout `load_csv` reads. Reals use the shortest
/// representation that parses back to the same value.
pub fn save_csv(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let mut header: Vec<String> = (0..ds.d()).map(|j| format!("f{j}")).collect();
    if ds.gender.is_some() {
        header.push("gender".into());
    }
    if ds.ages.is_some() {
        header.push("age".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.len() {
        let mut fields: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(g) = &ds.gender {
            fields.push(g[i].to_string());
        }
        if let Some(a) = &ds.ages {
            fields.push(a[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| ArlError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| ArlError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_tr: usize,
    pub n_te: usize,
    pub d: usize,
    /// Latent dimension.
    pub k: usize,
    /// Displacement of the test feature mean along a fixed unit vector.
    pub shift: f64,
    /// Displacement of the test latent mean along the first latent axis.
    pub label_shift: f64,
    pub noise_feat: f64,
    pub noise_age: f64,
    /// Age is `age_scale * softplus(w.z + age_offset) + noise`.
    pub age_scale: f64,
    pub age_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tr: 2000,
            n_te: 500,
            d: 1000,
            k: 8,
            shift: 2.0,
            label_shift: -0.5,
            noise_feat: 0.5,
            noise_age: 0.5,
            age_scale: 4.0,
            age_offset: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ArlError::Config(m));
        if self.n_tr == 0 || self.n_te == 0 || self.d == 0 || self.k == 0 {
            return bad("n_tr, n_te, d and k must be positive".into());
        }
        if self.k > self.d {
            return bad(format!("latent dim k={} exceeds feature dim d={}", self.k, self.d));
        }
        let finite = [self.shift, self.label_shift, self.noise_feat, self.noise_age, self.age_scale, self.age_offset];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("synthetic parameters must be finite".into());
        }
        if self.shift < 0.0 || self.noise_feat < 0.0 || self.noise_age < 0.0 {
            return bad("shift and noise levels must be non-negative".into());
        }
        if self.age_scale <= 0.0 {
            return bad(format!("age_scale must be positive, got {}", self.age_scale));
        }
        Ok(())
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn normals(rng: &mut RngState, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * rng.standard_normal()).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Train and test sets sharing one linear-latent labelling function; only
/// the latent and feature distributions differ between them.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    cfg.validate()?;
    let root = RngState::new(cfg.seed);
    let (d, k) = (cfg.d, cfg.k);
    // Loadings scaled so each feature has unit latent variance.
    let a = Matrix::new(d, k, normals(&mut root.split("loadings"), d * k, 1.0 / (k as f64).sqrt()))?;
    let b_train = normals(&mut root.split("offset"), d, 1.0);
    let u = unit(normals(&mut root.split("shift_direction"), d, 1.0));
    let mut w = normals(&mut root.split("age_weights"), k, 0.5);
    w[0] = 1.0;
    let w = unit(w);
    let b_test: Vec<f64> = b_train.iter().zip(&u).map(|(b, u)| b + cfg.shift * u).collect();

    let draw = |label: &str, n: usize, latent_shift: f64, offset: &[f64], domain: Domain| -> Result<FeatureDataset> {
        let mut rng = root.split(label);
        let mut z = Matrix::new(n, k, normals(&mut rng, n * k, 1.0))?;
        for i in 0..n {
            z.set(i, 0, z.get(i, 0) + latent_shift);
        }
        let noise = Matrix::new(n, d, normals(&mut rng, n * d, cfg.noise_feat))?;
        let x = z.matmul_transb(&a)?.add_row_vector(offset)?.add(&noise)?;
        let ages = (0..n)
            .map(|i| {
                let s: f64 = z.row(i).iter().zip(&w).map(|(z, w)| z * w).sum();
                (cfg.age_scale * softplus(s + cfg.age_offset) + cfg.noise_age * rng.standard_normal()).max(1.0)
            })
            .collect();
        let gender = (0..n).map(|_| u8::from(rng.next_f64() < 0.5)).collect();
        FeatureDataset::new(x, Some(gender), Some(ages), domain)
    };
    let train = draw("train", cfg.n_tr, 0.0, &b_train, Domain::Train)?;
    let test = draw("test", cfg.n_te, cfg.label_shift, &b_test, Domain::Test)?;
    Ok((train, test))
}

/// Deterministic permuted split into consecutive parts of the given
/// fractions. Part boundaries are the rounded cumulative fractions.
pub fn split(ds: &FeatureDataset, fractions: &[f64], seed: u64) -> Result<Vec<FeatureDataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(ArlError::Config(format!("split fractions must be positive, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ArlError::Config(format!("split fractions must sum to 1, got {total}")));
    }
    let n = ds.len();
    let perm = RngState::new(seed).split("split").permutation(n);
    let mut parts = Vec::with_capacity(fractions.len());
    let (mut start, mut cum) = (0, 0.0);
    for (j, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if j + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).min(n)
        };
        if end <= start {
            return Err(ArlError::Config(format!("split part {j} of {n} rows would be empty")));
        }
        parts.push(ds.select(&perm[start..end])?);
        start = end;
    }
    Ok(parts)
}

/// Shuffled partition of the dataset's row indices into batches; the last
/// batch may be short.
pub fn batches(ds: &FeatureDataset, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    batch_indices(ds.len(), batch_size, rng)
}

pub fn batch_indices(n: usize, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    rng.permutation(n).chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::mean_embed_dist;
    use std::fs;

    fn small() -> SynthConfig {
        SynthConfig {
            n_tr: 200,
            n_te: 100,
            d: 12,
            k: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn loads_two_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "f0,f1,gender,age\n1.5,-2,1,10.5\n0,3e-2,0,7\n").unwrap();
        let ds = load_csv(&p, Domain::Train).unwrap();
        assert_eq!((ds.len(), ds.d()), (2, 2));
        assert_eq!(ds.features.data(), &[1.5, -2.0, 0.0, 0.03]);
        assert_eq!(ds.gender, Some(vec![1, 0]));
        assert_eq!(ds.ages, Some(vec![10.5, 7.0]));
    }

    #[test]
    fn missing_age_column_means_unlabelled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "f0,f1,f2,gender\n1,2,3,0\n").unwrap();
        let ds = load_csv(&p, Domain::Test).unwrap();
        assert!(ds.ages.is_none());
        assert_eq!(ds.d(), 3);
        fs::write(&p, "f0\n4\n5\n").unwrap();
        let ds = load_csv(&p, Domain::Test).unwrap();
        assert!(ds.gender.is_none() && ds.ages.is_none());
    }

    #[test]
    fn malformed_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "f0,f1,age\n1,2,3\n1,x,3\n").unwrap();
        match load_csv(&p, Domain::Train) {
            Err(ArlError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "f0,f1,age\n1,2,3\n1,2\n").unwrap();
        match load_csv(&p, Domain::Train) {
            Err(ArlError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "f0,f2\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, Domain::Train), Err(ArlError::Parse { line: 1, .. })));
        fs::write(&p, "f0,gender\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, Domain::Train), Err(ArlError::Parse { line: 2, .. })));
    }

    #[test]
    fn nonpositive_age_is_domain_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("age.csv");
        fs::write(&p, "f0,age\n1,0\n").unwrap();
        assert!(matches!(load_csv(&p, Domain::Train), Err(ArlError::Domain(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_csv("/nonexistent/x.csv", Domain::Train), Err(ArlError::Io { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (train, test) = synth_generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for ds in [train, test.without_ages()] {
            let p = dir.path().join("rt.csv");
            save_csv(&ds, &p).unwrap();
            let back = load_csv(&p, ds.domain).unwrap();
            assert_eq!(back, ds);
            let p2 = dir.path().join("rt2.csv");
            save_csv(&back, &p2).unwrap();
            assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn generator_is_deterministic_and_clamped() {
        let (a, b) = synth_generate(&small()).unwrap();
        let (c, d) = synth_generate(&small()).unwrap();
        assert_eq!((a.clone(), b.clone()), (c, d));
        assert_eq!((a.len(), b.len(), a.d()), (200, 100, 12));
        for ds in [&a, &b] {
            assert!(ds.ages.as_ref().unwrap().iter().all(|&y| y >= 1.0));
        }
    }

    #[test]
    fn generator_rejects_bad_configs() {
        for cfg in [
            SynthConfig { k: 20, ..small() },
            SynthConfig { shift: -1.0, ..small() },
            SynthConfig { noise_age: -0.1, ..small() },
            SynthConfig { n_te: 0, ..small() },
        ] {
            assert!(matches!(synth_generate(&cfg), Err(ArlError::Config(_))));
        }
    }

    #[test]
    fn shift_changes_only_the_test_offset() {
        let base = SynthConfig { label_shift: 0.0, ..small() };
        let (tr0, te0) = synth_generate(&SynthConfig { shift: 0.0, ..base.clone() }).unwrap();
        let (tr2, te2) = synth_generate(&SynthConfig { shift: 2.0, ..base }).unwrap();
        assert_eq!(tr0, tr2);
        // Same latents and noise, so the test sets differ by a constant
        // row vector of norm 2 and ages are unchanged.
        assert_eq!(te0.ages, te2.ages);
        let diff = te2.features.sub(&te0.features).unwrap();
        let first = diff.row(0).to_vec();
        let norm = first.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-12);
        for i in 1..diff.rows() {
            for (a, b) in diff.row(i).iter().zip(&first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unshifted_distance_sits_in_the_null() {
        let cfg = SynthConfig {
            shift: 0.0,
            label_shift: 0.0,
            ..small()
        };
        let (tr, te) = synth_generate(&cfg).unwrap();
        let observed = mean_embed_dist(&tr.features, &te.features).unwrap();
        // Null distribution: distances between random splits of the pooled rows.
        let pooled = tr.features.vstack(&te.features).unwrap();
        let mut rng = RngState::new(99);
        let null: Vec<f64> = (0..200)
            .map(|_| {
                let p = rng.permutation(pooled.rows());
                let a = pooled.select_rows(&p[..tr.len()]).unwrap();
                let b = pooled.select_rows(&p[tr.len()..]).unwrap();
                mean_embed_dist(&a, &b).unwrap()
            })
            .collect();
        let mean = null.iter().sum::<f64>() / null.len() as f64;
        let sd = (null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64).sqrt();
        assert!(observed < mean + 3.0 * sd, "observed {observed}, null {mean} ± {sd}");

        let shifted = synth_generate(&SynthConfig { shift: 2.0, ..cfg }).unwrap();
        assert!(mean_embed_dist(&shifted.0.features, &shifted.1.features).unwrap() > observed);
    }

    #[test]
    fn split_sizes_and_partition() {
        let (ds, _) = synth_generate(&SynthConfig { n_tr: 100, ..small() }).unwrap();
        let one = split(&ds, &[1.0], 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 100);
        let parts = split(&ds, &[0.9, 0.1], 3).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (90, 10));
        let mut all: Vec<Vec<u64>> = parts
            .iter()
            .flat_map(|p| (0..p.len()).map(|i| p.features.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect();
        let mut orig: Vec<Vec<u64>> = (0..ds.len()).map(|i| ds.features.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(parts, split(&ds, &[0.9, 0.1], 3).unwrap());
        assert!(split(&ds, &[0.5, 0.4], 3).is_err());
        assert!(split(&ds, &[1.2, -0.2], 3).is_err());
    }

    #[test]
    fn batches_partition_each_epoch() {
        let sizes: Vec<usize> = batch_indices(5, 2, &mut RngState::new(1)).iter().map(Vec::len).collect();
        assert_eq!(sizes, [2, 2, 1]);
        let a = batch_indices(37, 8, &mut RngState::new(4));
        assert_eq!(a, batch_indices(37, 8, &mut RngState::new(4)));
        let mut seen: Vec<usize> = a.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
    }
}
