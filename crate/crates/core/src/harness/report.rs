//! CSV artifacts and the method comparison report.
//!
//! Every CSV starts with one `#` metadata line (tool version, config hash,
//! seed, timestamp, command-line overrides) followed by a header row.

use super::stats::{
    bonferroni, bootstrap_ci, boxplot_stats, kruskal_wallis, mann_whitney_u_with, mean, median,
    Alternative, BoxStats, KruskalWallis, PMethod,
};
use super::HarnessError;
use crate::config::ExperimentConfig;
use crate::curriculum::{Normalized, SelectorState};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Default Bonferroni correction factor.
pub const CORRECTION_FACTOR: usize = 5;
pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const CI_LEVEL: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub config_hash: String,
    pub seed: u64,
    pub overrides: Vec<(String, String)>,
}

impl ArtifactHeader {
    pub fn new(config: &ExperimentConfig, overrides: &[(String, String)]) -> Self {
        Self {
            config_hash: config.hash(),
            seed: config.seed,
            overrides: overrides.to_vec(),
        }
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "# {} config_hash={} seed={} timestamp={}",
            crate::TOOL_VERSION,
            self.config_hash,
            self.seed,
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        );
        if !self.overrides.is_empty() {
            let pairs: Vec<String> = self.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = write!(s, " overrides={}", pairs.join(","));
        }
        s
    }
}

/// Parses `key=value` tokens out of a metadata line.
pub fn parse_header_line(line: &str) -> Vec<(String, String)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn create(path: &Path, header: &ArtifactHeader) -> Result<BufWriter<File>, HarnessError> {
    let mut f = BufWriter::new(File::create(path).map_err(HarnessError::io("creating", path))?);
    writeln!(f, "{}", header.line()).map_err(HarnessError::io("writing", path))?;
    Ok(f)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::format(path, e.to_string())
}

fn write_rows<T: Serialize>(
    path: &Path,
    header: &ArtifactHeader,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), HarnessError> {
    let f = create(path, header)?;
    let mut w = csv::Writer::from_writer(f);
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(HarnessError::io("writing", path))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f = File::open(path).map_err(HarnessError::io("opening", path))?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(f)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(csv_err(path))
}

/// The metadata line of an artifact, if present.
pub fn read_header(path: &Path) -> Result<Option<String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io("reading", path))?;
    Ok(text.lines().next().filter(|l| l.starts_with('#')).map(str::to_string))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub replication: usize,
    pub generation: u64,
    pub cum_steps: u64,
    pub parent_score: f64,
    pub offspring_mean: f64,
    pub offspring_max: f64,
}

impl GenerationRow {
    /// The score used for learning curves: the parent score, or the mean
    /// offspring score when the parent is not evaluated.
    pub fn curve_score(&self) -> f64 {
        if self.parent_score.is_nan() {
            self.offspring_mean
        } else {
            self.parent_score
        }
    }
}

pub const GENERATIONS_HEADER: &str =
    "replication,generation,cum_steps,parent_score,offspring_mean,offspring_max";

/// Appendable per-replication generation log.
pub struct GenerationLogWriter {
    inner: BufWriter<File>,
    path: std::path::PathBuf,
}

impl GenerationLogWriter {
    /// Starts a fresh log.
    pub fn create(path: &Path, header: &ArtifactHeader) -> Result<Self, HarnessError> {
        let mut inner = create(path, header)?;
        writeln!(inner, "{GENERATIONS_HEADER}").map_err(HarnessError::io("writing", path))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    /// Reopens an existing log, dropping rows past `generation`.
    pub fn reopen_at(path: &Path, generation: u64) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io("reading", path))?;
        let mut kept = String::new();
        for line in text.lines() {
            let keep = match line.split(',').nth(1).map(str::parse::<u64>) {
                Some(Ok(g)) => g <= generation,
                _ => true,
            };
            if keep {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        std::fs::write(path, kept).map_err(HarnessError::io("rewriting", path))?;
        let f = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(HarnessError::io("opening", path))?;
        Ok(Self {
            inner: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, r: &GenerationRow) -> Result<(), HarnessError> {
        writeln!(
            self.inner,
            "{},{},{},{},{},{}",
            r.replication, r.generation, r.cum_steps, r.parent_score, r.offspring_mean, r.offspring_max
        )
        .map_err(HarnessError::io("writing", &self.path))
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        self.inner.flush().map_err(HarnessError::io("writing", &self.path))
    }
}

pub fn write_generations(
    path: &Path,
    header: &ArtifactHeader,
    rows: &[GenerationRow],
) -> Result<(), HarnessError> {
    write_rows(path, header, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cum_steps: u64,
    pub replications: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Mean score across replications on an even grid of cumulative steps,
/// with a percentile bootstrap interval. Each replication contributes the
/// score of its last generation at or before the grid point.
pub fn learning_curve(
    rows: &[GenerationRow],
    budget: u64,
    points: usize,
    seed: u64,
) -> Vec<CurvePoint> {
    let mut reps: Vec<usize> = rows.iter().map(|r| r.replication).collect();
    reps.sort_unstable();
    reps.dedup();
    let by_rep: Vec<Vec<&GenerationRow>> = reps
        .iter()
        .map(|&rep| {
            let mut v: Vec<_> = rows.iter().filter(|r| r.replication == rep).collect();
            v.sort_by_key(|r| r.cum_steps);
            v
        })
        .collect();
    (1..=points)
        .map(|k| {
            let x = (budget as u128 * k as u128 / points as u128) as u64;
            let values: Vec<f64> = by_rep
                .iter()
                .filter_map(|rs| {
                    let idx = rs.partition_point(|r| r.cum_steps <= x);
                    (idx > 0).then(|| rs[idx - 1].curve_score())
                })
                .collect();
            let (mean_v, (lo, hi)) = match values.len() {
                0 => (f64::NAN, (f64::NAN, f64::NAN)),
                1 => (values[0], (f64::NAN, f64::NAN)),
                _ => (
                    mean(&values),
                    bootstrap_ci(&values, CI_LEVEL, BOOTSTRAP_RESAMPLES, seed ^ k as u64)
                        .unwrap_or((f64::NAN, f64::NAN)),
                ),
            };
            CurvePoint {
                cum_steps: x,
                replications: values.len(),
                mean: mean_v,
                ci_lo: lo,
                ci_hi: hi,
            }
        })
        .collect()
}

pub fn write_learning_curve(
    path: &Path,
    header: &ArtifactHeader,
    curve: &[CurvePoint],
) -> Result<(), HarnessError> {
    write_rows(path, header, curve)
}

/// Post-evaluation of one replication's agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PostEvalRecord {
    pub replication: usize,
    pub method: String,
    pub mean_fitness: f64,
    pub episodes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PostEvalCsvRow {
    record: String,
    replication: usize,
    method: String,
    episodes: Option<usize>,
    mean_fitness: Option<f64>,
    episode: Option<usize>,
    fitness: Option<f64>,
}

/// One `summary` row per replication followed by its `episode` rows.
pub fn write_posteval(
    path: &Path,
    header: &ArtifactHeader,
    records: &[PostEvalRecord],
) -> Result<(), HarnessError> {
    let rows = records.iter().flat_map(|r| {
        std::iter::once(PostEvalCsvRow {
            record: "summary".into(),
            replication: r.replication,
            method: r.method.clone(),
            episodes: Some(r.episodes.len()),
            mean_fitness: Some(r.mean_fitness),
            episode: None,
            fitness: None,
        })
        .chain(r.episodes.iter().enumerate().map(|(e, &f)| PostEvalCsvRow {
            record: "episode".into(),
            replication: r.replication,
            method: r.method.clone(),
            episodes: None,
            mean_fitness: None,
            episode: Some(e),
            fitness: Some(f),
        }))
    });
    write_rows(path, header, rows)
}

pub fn read_posteval(path: &Path) -> Result<Vec<PostEvalRecord>, HarnessError> {
    let rows: Vec<PostEvalCsvRow> = read_rows(path)?;
    let mut out: Vec<PostEvalRecord> = Vec::new();
    for row in rows {
        match row.record.as_str() {
            "summary" => out.push(PostEvalRecord {
                replication: row.replication,
                method: row.method,
                mean_fitness: row
                    .mean_fitness
                    .ok_or_else(|| HarnessError::format(path, "summary row without mean_fitness"))?,
                episodes: Vec::with_capacity(row.episodes.unwrap_or(0)),
            }),
            "episode" => {
                let rec = out
                    .iter_mut()
                    .rev()
                    .find(|r| r.replication == row.replication && r.method == row.method)
                    .ok_or_else(|| HarnessError::format(path, "episode row before its summary"))?;
                rec.episodes.push(
                    row.fitness
                        .ok_or_else(|| HarnessError::format(path, "episode row without fitness"))?,
                );
            }
            other => {
                return Err(HarnessError::format(path, format!("unknown record kind `{other}`")))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub method: String,
    pub checkpoint_index: usize,
    pub condition_id: u32,
    pub fitness: f64,
}

/// Writes a `[condition][checkpoint]` matrix in long form.
pub fn write_heatmap(
    path: &Path,
    header: &ArtifactHeader,
    method: &str,
    matrix: &[Vec<f64>],
) -> Result<(), HarnessError> {
    let k = matrix.first().map_or(0, Vec::len);
    let rows = (0..k).flat_map(|c| {
        matrix.iter().enumerate().map(move |(id, row)| HeatmapRow {
            method: method.to_string(),
            checkpoint_index: c,
            condition_id: id as u32,
            fitness: row[c],
        })
    });
    write_rows(path, header, rows)
}

/// Reads a heatmap back into `(method, [condition][checkpoint])`.
pub fn read_heatmap(path: &Path) -> Result<(String, Vec<Vec<f64>>), HarnessError> {
    let rows: Vec<HeatmapRow> = read_rows(path)?;
    let method = rows.first().map(|r| r.method.clone()).unwrap_or_default();
    let n = rows.iter().map(|r| r.condition_id as usize + 1).max().unwrap_or(0);
    let k = rows.iter().map(|r| r.checkpoint_index + 1).max().unwrap_or(0);
    let mut m = vec![vec![f64::NAN; k]; n];
    for r in &rows {
        m[r.condition_id as usize][r.checkpoint_index] = r.fitness;
    }
    if rows.len() != n * k {
        return Err(HarnessError::format(path, "heatmap is not a complete grid"));
    }
    Ok((method, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorStatsRow {
    pub condition_id: u32,
    pub n_obs: u64,
    pub rho: f64,
    /// Empty when normalization is degenerate.
    pub rho_hat: Option<f64>,
}

pub fn selector_stats(state: &SelectorState) -> Vec<SelectorStatsRow> {
    let norm = state.normalize_performance();
    state
        .observed()
        .map(|(id, s)| SelectorStatsRow {
            condition_id: id.0,
            n_obs: s.n_obs(),
            rho: s.rho().unwrap_or(f64::NAN),
            rho_hat: match &norm {
                Normalized::Values(v) => Some(v[id.0 as usize]),
                _ => None,
            },
        })
        .collect()
}

pub fn write_selector_stats(
    path: &Path,
    header: &ArtifactHeader,
    rows: &[SelectorStatsRow],
) -> Result<(), HarnessError> {
    write_rows(path, header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub boxplot: BoxStats,
    pub ci90: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub u: f64,
    pub p: f64,
    pub p_corrected: f64,
    /// One-sided p for "a is greater than b".
    pub p_a_greater: f64,
    pub p_a_less: f64,
    pub method: PMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub tool: String,
    pub correction_factor: usize,
    pub groups: Vec<GroupSummary>,
    pub kruskal_wallis: KruskalWallis,
    pub pairwise: Vec<PairwiseTest>,
}

/// Kruskal-Wallis across all groups plus every pairwise Mann-Whitney test,
/// Bonferroni-corrected by `correction_factor`.
pub fn compare(
    groups: &[(String, Vec<f64>)],
    correction_factor: usize,
    seed: u64,
) -> Result<StatsReport, HarnessError> {
    if groups.len() < 2 {
        return Err(HarnessError::Invalid(format!(
            "comparison needs at least two groups, got {}",
            groups.len()
        )));
    }
    let mut summaries = Vec::new();
    for (label, samples) in groups {
        summaries.push(GroupSummary {
            label: label.clone(),
            n: samples.len(),
            samples: samples.clone(),
            mean: mean(samples),
            median: median(samples),
            boxplot: boxplot_stats(samples)?,
            ci90: bootstrap_ci(samples, CI_LEVEL, BOOTSTRAP_RESAMPLES, seed)?,
        });
    }
    let kw = kruskal_wallis(&groups.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>())?;
    let mut pairwise = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (&groups[i], &groups[j]);
            let two = mann_whitney_u_with(&a.1, &b.1, Alternative::TwoSided)?;
            let greater = mann_whitney_u_with(&a.1, &b.1, Alternative::Greater)?;
            let less = mann_whitney_u_with(&a.1, &b.1, Alternative::Less)?;
            pairwise.push(PairwiseTest {
                a: a.0.clone(),
                b: b.0.clone(),
                u: two.u,
                p: two.p,
                p_corrected: bonferroni(two.p, correction_factor),
                p_a_greater: greater.p,
                p_a_less: less.p,
                method: two.method,
            });
        }
    }
    Ok(StatsReport {
        tool: crate::TOOL_VERSION.to_string(),
        correction_factor,
        groups: summaries,
        kruskal_wallis: kw,
        pairwise,
    })
}

impl StatsReport {
    /// Fixed-width plain-text rendering.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>3} {:>10} {:>10} {:>10} {:>10} {:>21}",
            "group", "n", "median", "mean", "q1", "q3", "90% CI of mean"
        );
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{:<24} {:>3} {:>10.2} {:>10.2} {:>10.2} {:>10.2}   [{:>8.2}, {:>8.2}]",
                g.label, g.n, g.median, g.mean, g.boxplot.q1, g.boxplot.q3, g.ci90.0, g.ci90.1
            );
        }
        let kw = &self.kruskal_wallis;
        let _ = writeln!(s, "\nKruskal-Wallis: H = {:.4}, df = {}, p = {:.4e}", kw.h, kw.df, kw.p);
        let _ = writeln!(
            s,
            "\n{:<24} {:<24} {:>8} {:>10} {:>10} {:>10} {:>10}",
            "a", "b", "U", "p", "p x m", "p(a>b)", "p(a<b)"
        );
        for t in &self.pairwise {
            let _ = writeln!(
                s,
                "{:<24} {:<24} {:>8.1} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                t.a, t.b, t.u, t.p, t.p_corrected, t.p_a_greater, t.p_a_less
            );
        }
        let _ = writeln!(s, "(m = {})", self.correction_factor);
        s
    }
}

/// Loads the per-replication post-evaluation means from each file, one
/// group per (argument, method). Labels are the method names, qualified with
/// the file name when two groups would otherwise share one.
pub fn load_posteval_groups(paths: &[&Path]) -> Result<Vec<(String, Vec<f64>)>, HarnessError> {
    let mut raw: Vec<(usize, String, String, Vec<f64>)> = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let records = read_posteval(path)?;
        if records.is_empty() {
            return Err(HarnessError::format(path, "no summary rows"));
        }
        let file = path.display().to_string();
        for rec in records {
            match raw.iter_mut().find(|g| g.0 == i && g.2 == rec.method) {
                Some(g) => g.3.push(rec.mean_fitness),
                None => raw.push((i, file.clone(), rec.method, vec![rec.mean_fitness])),
            }
        }
    }
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (_, file, method, samples) in &raw {
        let shared = raw.iter().filter(|g| g.2 == *method).count() > 1;
        let mut label = if shared {
            format!("{method} ({file})")
        } else {
            method.clone()
        };
        let mut k = 2;
        while out.iter().any(|(l, _)| *l == label) {
            label = format!("{method} ({file}) #{k}");
            k += 1;
        }
        out.push((label, samples.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> ArtifactHeader {
        ArtifactHeader {
            config_hash: "abc".into(),
            seed: 7,
            overrides: vec![("es.sigma".into(), "0.05".into())],
        }
    }

    #[test]
    fn header_line_is_parseable() {
        let kv = parse_header_line(&header().line());
        let get = |k: &str| kv.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        assert_eq!(get("config_hash").as_deref(), Some("abc"));
        assert_eq!(get("seed").as_deref(), Some("7"));
        assert_eq!(get("overrides").as_deref(), Some("es.sigma=0.05"));
        assert!(get("timestamp").is_some());
    }

    #[test]
    fn posteval_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let recs = vec![
            PostEvalRecord {
                replication: 0,
                method: "power:3".into(),
                mean_fitness: 2.0 / 3.0,
                episodes: vec![1.0, 0.0, 1.0],
            },
            PostEvalRecord {
                replication: 1,
                method: "power:3".into(),
                mean_fitness: 0.1,
                episodes: vec![0.1],
            },
        ];
        write_posteval(&path, &header(), &recs).unwrap();
        assert_eq!(read_posteval(&path).unwrap(), recs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().starts_with("# "));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "record,replication,method,episodes,mean_fitness,episode,fitness"
        );
    }

    #[test]
    fn heatmap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let m = vec![vec![1.0, 2.0], vec![3.0, 4.5], vec![0.0, 1000.0]];
        write_heatmap(&path, &header(), "linear", &m).unwrap();
        assert_eq!(read_heatmap(&path).unwrap(), ("linear".to_string(), m));
    }

    #[test]
    fn generation_log_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let mut w = GenerationLogWriter::create(&path, &header()).unwrap();
        for g in 1..=5 {
            w.append(&GenerationRow {
                replication: 0,
                generation: g,
                cum_steps: g * 10,
                parent_score: g as f64 / 3.0,
                offspring_mean: f64::NAN,
                offspring_max: 1.0,
            })
            .unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let rows: Vec<GenerationRow> = read_rows(&path).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[2].parent_score, 1.0);
        assert!(rows[0].offspring_mean.is_nan());

        let mut w = GenerationLogWriter::reopen_at(&path, 3).unwrap();
        w.append(&GenerationRow { generation: 4, ..rows[3] }).unwrap();
        w.flush().unwrap();
        let again: Vec<GenerationRow> = read_rows(&path).unwrap();
        assert_eq!(again.iter().map(|r| r.generation).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn identical_groups_compare_to_one() {
        let s = vec![500.0, 612.0, 480.5, 700.0, 655.0];
        let groups = vec![("standard (a)".to_string(), s.clone()), ("standard (b)".to_string(), s)];
        let r = compare(&groups, CORRECTION_FACTOR, 1).unwrap();
        assert_eq!(r.pairwise.len(), 1);
        assert_eq!(r.pairwise[0].p_corrected, 1.0);
        assert!(r.kruskal_wallis.h.abs() < 1e-12);
        assert!(r.table().contains("Kruskal-Wallis"));
        let json = serde_json::to_string(&r).unwrap();
        let back: StatsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pairwise, r.pairwise);
    }

    #[test]
    fn learning_curve_uses_last_row_before_grid_point() {
        let row = |rep, g, steps, score| GenerationRow {
            replication: rep,
            generation: g,
            cum_steps: steps,
            parent_score: score,
            offspring_mean: 0.0,
            offspring_max: 0.0,
        };
        let rows = vec![
            row(0, 1, 40, 1.0),
            row(0, 2, 90, 2.0),
            row(1, 1, 60, 3.0),
            row(1, 2, 100, 5.0),
        ];
        let c = learning_curve(&rows, 100, 2, 0);
        assert_eq!(c[0].cum_steps, 50);
        assert_eq!((c[0].replications, c[0].mean), (1, 1.0));
        assert_eq!((c[1].replications, c[1].mean), (2, 3.5));
        assert!(c[1].ci_lo <= 3.5 && 3.5 <= c[1].ci_hi);
    }
}
