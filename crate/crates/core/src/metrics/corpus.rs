use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dsp::wav::load_wav;
use crate::dsp::MelFilterbank;
use crate::error::{Result, VnetError};
use crate::trainer::dataset::find_wavs;

use super::{evaluate_pair, FileMetrics};

pub const COLUMNS: [&str; 9] = [
    "kind",
    "subset",
    "file",
    "m_stft",
    "mcd",
    "periodicity",
    "vuv_f1",
    "n_mcd",
    "n_periodicity",
];

/// Means of one group of files; optional metrics average only the files
/// where they are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub m_stft: f64,
    pub mcd: Option<f64>,
    pub periodicity: Option<f64>,
    pub vuv_f1: f64,
    pub n_mcd: usize,
    pub n_periodicity: usize,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let v: Vec<f64> = values.flatten().collect();
    let n = v.len();
    ((n > 0).then(|| v.iter().sum::<f64>() / n as f64), n)
}

impl Summary {
    pub fn of_files(files: &[&FileMetrics]) -> Self {
        let n = files.len().max(1) as f64;
        let (mcd, n_mcd) = mean_opt(files.iter().map(|f| f.mcd));
        let (periodicity, n_periodicity) = mean_opt(files.iter().map(|f| f.periodicity));
        Summary {
            m_stft: files.iter().map(|f| f.m_stft).sum::<f64>() / n,
            mcd,
            periodicity,
            vuv_f1: files.iter().map(|f| f.vuv_f1).sum::<f64>() / n,
            n_mcd,
            n_periodicity,
        }
    }

    /// Unweighted mean of subset summaries.
    pub fn macro_average(subsets: &[&Summary]) -> Self {
        let n = subsets.len().max(1) as f64;
        let (mcd, _) = mean_opt(subsets.iter().map(|s| s.mcd));
        let (periodicity, _) = mean_opt(subsets.iter().map(|s| s.periodicity));
        Summary {
            m_stft: subsets.iter().map(|s| s.m_stft).sum::<f64>() / n,
            mcd,
            periodicity,
            vuv_f1: subsets.iter().map(|s| s.vuv_f1).sum::<f64>() / n,
            n_mcd: subsets.iter().map(|s| s.n_mcd).sum(),
            n_periodicity: subsets.iter().map(|s| s.n_periodicity).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FileRow {
    pub subset: String,
    pub file: String,
    pub metrics: FileMetrics,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub files: Vec<FileRow>,
    pub subsets: BTreeMap<String, Summary>,
    pub overall: Summary,
    /// Files present on one side only, with the side they were found on.
    pub unpaired: Vec<(String, &'static str)>,
}

fn relative_names(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for p in find_wavs(root)? {
        let rel = p.strip_prefix(root).unwrap_or(&p);
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.insert(key, p);
    }
    Ok(out)
}

/// Subset of a relative path: its first directory, or `.` at the top level.
pub fn subset_of(rel: &str) -> String {
    match rel.split_once('/') {
        Some((dir, _)) => dir.to_string(),
        None => ".".to_string(),
    }
}

/// Compares same-named files under the two roots.
pub fn corpus_eval(real_dir: &Path, gen_dir: &Path) -> Result<MetricReport> {
    let real = relative_names(real_dir)?;
    let gen = relative_names(gen_dir)?;
    if real.is_empty() && gen.is_empty() {
        return Err(VnetError::Input(format!(
            "no .wav files under {} or {}",
            real_dir.display(),
            gen_dir.display()
        )));
    }
    let fb = MelFilterbank::standard();
    let mut files = Vec::new();
    let mut unpaired = Vec::new();
    for (name, path) in &real {
        let Some(gpath) = gen.get(name) else {
            unpaired.push((name.clone(), "real"));
            continue;
        };
        let x = load_wav(path)?;
        let y = load_wav(gpath)?;
        files.push(FileRow {
            subset: subset_of(name),
            file: name.clone(),
            metrics: evaluate_pair(&x.samples, &y.samples, &fb)
                .map_err(|e| VnetError::Input(format!("{name}: {e}")))?,
        });
    }
    unpaired.extend(gen.keys().filter(|k| !real.contains_key(*k)).map(|k| (k.clone(), "generated")));
    if files.is_empty() {
        return Err(VnetError::Input("no file names are shared between the two directories".into()));
    }
    let mut groups: BTreeMap<String, Vec<&FileMetrics>> = BTreeMap::new();
    for f in &files {
        groups.entry(f.subset.clone()).or_default().push(&f.metrics);
    }
    let subsets: BTreeMap<String, Summary> = groups.into_iter().map(|(k, v)| (k, Summary::of_files(&v))).collect();
    let overall = Summary::macro_average(&subsets.values().collect::<Vec<_>>());
    Ok(MetricReport {
        files,
        subsets,
        overall,
        unpaired,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl MetricReport {
    /// Tab-separated table: header, one `file` row per pair, one `subset`
    /// row per subset, one `macro` row, then `#` comments for unpaired files.
    pub fn to_tsv(&self) -> String {
        let mut s = COLUMNS.join("\t");
        s.push('\n');
        for f in &self.files {
            let m = &f.metrics;
            let _ = writeln!(
                s,
                "file\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                f.subset,
                f.file,
                m.m_stft,
                opt(m.mcd),
                opt(m.periodicity),
                m.vuv_f1,
                m.mcd.is_some() as usize,
                m.periodicity.is_some() as usize
            );
        }
        let summary = |s: &mut String, kind: &str, subset: &str, v: &Summary| {
            let _ = writeln!(
                s,
                "{kind}\t{subset}\t*\t{}\t{}\t{}\t{}\t{}\t{}",
                v.m_stft,
                opt(v.mcd),
                opt(v.periodicity),
                v.vuv_f1,
                v.n_mcd,
                v.n_periodicity
            );
        };
        for (name, v) in &self.subsets {
            summary(&mut s, "subset", name, v);
        }
        summary(&mut s, "macro", "*", &self.overall);
        for (name, side) in &self.unpaired {
            let _ = writeln!(s, "# unpaired: {name} (only in {side})");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(m: f64) -> FileMetrics {
        FileMetrics {
            m_stft: m,
            mcd: None,
            periodicity: Some(m),
            vuv_f1: 1.0,
        }
    }

    #[test]
    fn macro_average_is_unweighted() {
        let a = Summary::of_files(&[&fm(0.2)]);
        let b = Summary::of_files(&[&fm(0.4), &fm(0.4), &fm(0.4)]);
        let m = Summary::macro_average(&[&a, &b]);
        assert!((m.m_stft - 0.3).abs() < 1e-12);
        assert_eq!(m.mcd, None);
        assert_eq!(m.n_periodicity, 4);
    }

    #[test]
    fn subset_is_first_directory() {
        assert_eq!(subset_of("a/b/c.wav"), "a");
        assert_eq!(subset_of("c.wav"), ".");
    }
}
