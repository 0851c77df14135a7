//! CSV ingestion and the test report.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::data::{DataMatrix, GroupedSamples};
use crate::error::{KbqdError, Result};
use crate::kernel::{gram_matrix, Bandwidth, Centering};
use crate::resampling::{
    energy_test_with_distances, kbqd_test_with_gram, mmd_test_with_gram, ResamplingMethod, ResamplingPlan,
};
use crate::simulation::Statistic;
use crate::tuning::{select_h, AlternativeFamily, AlternativeKind, DEFAULT_POWER_REPETITIONS};

/// Observations with one categorical label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    pub labels: Vec<String>,
    pub column_names: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Reads `path`, keeping `features` (all numeric columns other than the
/// group column when empty). Cells that are empty or `NA` are missing.
pub fn load_csv(path: &Path, group_col: &str, features: &[String], drop_incomplete: bool) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| KbqdError::Input(format!("cannot open {}: {e}", path.display())))?;
    load_csv_from_reader(file, group_col, features, drop_incomplete)
}

pub fn load_csv_from_reader<R: Read>(
    reader: R,
    group_col: &str,
    features: &[String],
    drop_incomplete: bool,
) -> Result<LabeledDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| KbqdError::Input(format!("column '{name}' not found (columns: {})", header.join(", "))))
    };
    let gcol = find(group_col)?;
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    let fcols: Vec<usize> = if features.is_empty() {
        (0..header.len())
            .filter(|&j| j != gcol)
            .filter(|&j| {
                records.iter().all(|r| r.get(j).is_some_and(|c| is_missing(c) || c.trim().parse::<f64>().is_ok()))
            })
            .collect()
    } else {
        features.iter().map(|f| find(f)).collect::<Result<_>>()?
    };
    if fcols.is_empty() {
        return Err(KbqdError::Input("no numeric feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    'rows: for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        let label = rec.get(gcol).unwrap_or("");
        let mut row = Vec::with_capacity(fcols.len());
        if is_missing(label) {
            if drop_incomplete {
                continue;
            }
            return Err(KbqdError::Input(format!("line {line}: missing group label")));
        }
        for &j in &fcols {
            let cell = rec.get(j).unwrap_or("");
            if is_missing(cell) {
                if drop_incomplete {
                    continue 'rows;
                }
                return Err(KbqdError::Input(format!("line {line}: missing value in column '{}'", header[j])));
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                KbqdError::Input(format!("line {line}: cannot parse '{cell}' in column '{}' as a number", header[j]))
            })?;
            row.push(v);
        }
        values.extend(row);
        labels.push(label.trim().to_owned());
    }
    let data = DataMatrix::from_row_major(labels.len(), fcols.len(), values)?;
    data.check_finite()?;
    let ds = LabeledDataset { data, labels, column_names: fcols.iter().map(|&j| header[j].clone()).collect() };
    let groups = ds.group_names();
    if groups.len() < 2 {
        return Err(KbqdError::Input(format!("need at least 2 groups in '{group_col}', found {}", groups.len())));
    }
    Ok(ds)
}

impl LabeledDataset {
    /// Distinct labels in order of first appearance.
    pub fn group_names(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for l in &self.labels {
            if !seen.contains(l) {
                seen.push(l.clone());
            }
        }
        seen
    }

    /// Rows whose label is in `keep`, preserving row order.
    pub fn filter_groups(&self, keep: &[String]) -> Result<Self> {
        for k in keep {
            if !self.labels.contains(k) {
                return Err(KbqdError::Input(format!("group '{k}' not present")));
            }
        }
        let idx: Vec<usize> = (0..self.labels.len()).filter(|&i| keep.contains(&self.labels[i])).collect();
        Ok(Self {
            data: self.data.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            column_names: self.column_names.clone(),
        })
    }

    /// Each column centered and scaled by its sample standard deviation.
    pub fn standardized(&self) -> Result<Self> {
        let mean = self.data.mean();
        let sd = self.data.std_dev();
        if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
            return Err(KbqdError::Input(format!("column '{}' is constant; cannot standardize", self.column_names[j])));
        }
        let d = self.data.ncols();
        let values = self.data.as_slice().iter().enumerate().map(|(p, v)| (v - mean[p % d]) / sd[p % d]).collect();
        Ok(Self {
            data: DataMatrix::from_row_major(self.data.nrows(), d, values)?,
            labels: self.labels.clone(),
            column_names: self.column_names.clone(),
        })
    }

    /// Samples grouped by label, in order of first appearance.
    pub fn to_groups(&self) -> Result<(GroupedSamples, Vec<String>)> {
        let names = self.group_names();
        let samples = names
            .iter()
            .map(|name| {
                let idx: Vec<usize> = (0..self.labels.len()).filter(|&i| &self.labels[i] == name).collect();
                self.data.select_rows(&idx)
            })
            .collect();
        Ok((GroupedSamples::new(samples)?, names))
    }
}

/// Settings of one `test` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub statistics: Vec<Statistic>,
    /// `None` selects `h` by simulated power.
    pub h: Option<f64>,
    pub centering: Centering,
    pub methods: Vec<ResamplingMethod>,
    pub replications: usize,
    pub subsample: f64,
    pub alpha: f64,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ResamplingPlan::default();
        Self {
            statistics: vec![Statistic::Tn],
            h: None,
            centering: Centering::Nonparametric,
            methods: vec![p.method],
            replications: p.replications,
            subsample: p.subsample,
            alpha: p.alpha,
            seed: p.seed,
            standardize: false,
        }
    }
}

impl RunConfig {
    pub fn plan(&self, method: ResamplingMethod) -> ResamplingPlan {
        ResamplingPlan {
            method,
            replications: self.replications,
            subsample: self.subsample,
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

/// One line of the report. Kernel rows also carry the statistic and
/// critical value divided by the square root of the estimated null variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub test: String,
    pub h: Option<f64>,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub standardized_statistic: Option<f64>,
    pub standardized_critical_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub groups: Vec<String>,
    pub sizes: Vec<usize>,
    pub h: Option<f64>,
    pub rows: Vec<ReportRow>,
}

fn method_label(m: ResamplingMethod) -> &'static str {
    match m {
        ResamplingMethod::Bootstrap => "Boot",
        ResamplingMethod::Permutation => "Perm",
        ResamplingMethod::Subsampling => "Sub",
    }
}

/// Runs the configured tests on `dataset`.
pub fn run_test(dataset: &LabeledDataset, cfg: &RunConfig) -> Result<TestReport> {
    if cfg.methods.is_empty() || cfg.statistics.is_empty() {
        return Err(KbqdError::InvalidParameter("at least one method and one statistic are required".into()));
    }
    let ds = if cfg.standardize { dataset.standardized()? } else { dataset.clone() };
    let (groups, names) = ds.to_groups()?;
    if cfg.statistics.contains(&Statistic::Mmd) && groups.k() != 2 {
        return Err(KbqdError::InvalidParameter("the mmd statistic compares exactly two groups".into()));
    }
    for &m in &cfg.methods {
        cfg.plan(m).validate()?;
    }
    let kernel_wanted = cfg.statistics.iter().any(|s| *s != Statistic::Energy);
    let h = match (cfg.h, kernel_wanted) {
        (Some(h), _) => Some(Bandwidth::new(h)?),
        (None, true) => {
            let fam = AlternativeFamily::new(AlternativeKind::Location);
            Some(select_h(&groups, &fam, &cfg.plan(cfg.methods[0]), DEFAULT_POWER_REPETITIONS)?.h_star)
        }
        (None, false) => None,
    };
    let gram = h.map(|h| gram_matrix(groups.pooled(), h)).transpose()?;
    let dist = cfg.statistics.contains(&Statistic::Energy).then(|| crate::baselines::distance_matrix(groups.pooled()));

    let mut rows = Vec::new();
    for &stat in &cfg.statistics {
        for &method in &cfg.methods {
            let plan = cfg.plan(method);
            let label = format!("{} {}", if stat == Statistic::Trace { "Trace" } else { "Tn" }, method_label(method));
            match stat {
                Statistic::Tn | Statistic::Trace => {
                    let (g, h) = (gram.as_ref().unwrap(), h.unwrap());
                    let r = kbqd_test_with_gram(&groups, g, h, cfg.centering, &plan)?;
                    let (dec, std) =
                        if stat == Statistic::Tn { (r.tn(), r.standardized_tn()) } else { (r.trace(), r.standardized_trace()) };
                    rows.push(ReportRow {
                        test: label,
                        h: Some(h.get()),
                        statistic: dec.statistic,
                        critical_value: dec.critical,
                        p_value: dec.pvalue,
                        reject: dec.reject,
                        standardized_statistic: std.map(|s| s.0),
                        standardized_critical_value: std.map(|s| s.1),
                    });
                }
                Statistic::Mmd => {
                    let dec = mmd_test_with_gram(&groups, gram.as_ref().unwrap(), &plan)?;
                    rows.push(ReportRow {
                        test: format!("MMD {}", method_label(method)),
                        h: h.map(Bandwidth::get),
                        statistic: dec.statistic,
                        critical_value: dec.critical,
                        p_value: dec.pvalue,
                        reject: dec.reject,
                        standardized_statistic: None,
                        standardized_critical_value: None,
                    });
                }
                Statistic::Energy => {
                    let dec = energy_test_with_distances(&groups, dist.as_ref().unwrap(), &plan)?;
                    rows.push(ReportRow {
                        test: format!("energy {}", method_label(method)),
                        h: None,
                        statistic: dec.statistic,
                        critical_value: dec.critical,
                        p_value: dec.pvalue,
                        reject: dec.reject,
                        standardized_statistic: None,
                        standardized_critical_value: None,
                    });
                }
            }
        }
    }
    Ok(TestReport { groups: names, sizes: groups.sizes().to_vec(), h: h.map(Bandwidth::get), rows })
}

pub const REPORT_HEADER: &str =
    "test,h,statistic,critical_value,p_value,reject,standardized_statistic,standardized_critical_value";

impl TestReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(REPORT_HEADER.split(','))?;
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let groups: Vec<String> = self.groups.iter().zip(&self.sizes).map(|(g, n)| format!("{g} (n={n})")).collect();
        writeln!(w, "groups: {}", groups.join(", "))?;
        let opt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.7}"));
        let table: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.test.clone(),
                    r.h.map_or("-".to_owned(), |h| format!("{h}")),
                    format!("{:.7}", r.statistic),
                    format!("{:.7}", r.critical_value),
                    format!("{:.4}", r.p_value),
                    if r.reject { "TRUE" } else { "FALSE" }.to_owned(),
                    opt(r.standardized_statistic),
                    opt(r.standardized_critical_value),
                ]
            })
            .collect();
        let head = ["test", "h", "statistic", "critical value", "p-value", "reject H0", "std. statistic", "std. critical"];
        let mut widths = head.map(str::len);
        for row in &table {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| {
            cells.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        writeln!(w, "{}", line(head.to_vec()))?;
        for row in &table {
            writeln!(w, "{}", line(row.iter().map(String::as_str).collect()))?;
        }
        Ok(())
    }

    pub fn to_string(&self, csv: bool) -> Result<String> {
        let mut buf = Vec::new();
        if csv {
            self.write_csv(&mut buf)?;
        } else {
            self.write_text(&mut buf)?;
        }
        String::from_utf8(buf).map_err(|e| KbqdError::Input(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "g,x,y,note\na,1,2,u\na,2,3,v\nb,3,,w\nb,4,5,NA\nb,6,1,z\nc,NA,1,q\n";

    #[test]
    fn drops_incomplete_rows() {
        let ds = load_csv_from_reader(SMALL.as_bytes(), "g", &[], true).unwrap();
        assert_eq!(ds.column_names, vec!["x", "y"]);
        assert_eq!(ds.data.nrows(), 4);
        assert_eq!(ds.group_names(), vec!["a", "b"]);
        assert_eq!(ds.data.row(2), &[4.0, 5.0]);
    }

    #[test]
    fn missing_value_is_an_error_when_kept() {
        assert!(load_csv_from_reader(SMALL.as_bytes(), "g", &[], false).is_err());
    }

    #[test]
    fn input_errors() {
        let one = "g,x\na,1\na,2\n";
        assert!(load_csv_from_reader(one.as_bytes(), "g", &[], true).is_err());
        assert!(load_csv_from_reader(SMALL.as_bytes(), "missing", &[], true).is_err());
        assert!(load_csv_from_reader(SMALL.as_bytes(), "g", &["note".into()], true).is_err());
        let e = load_csv_from_reader(SMALL.as_bytes(), "g", &["zzz".into()], true).unwrap_err();
        assert!(e.is_input_error());
    }

    #[test]
    fn standardized_columns() {
        let ds = load_csv_from_reader(SMALL.as_bytes(), "g", &[], true).unwrap().standardized().unwrap();
        for m in ds.data.mean() {
            assert!(m.abs() < 1e-12);
        }
        for s in ds.data.std_dev() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_groups_give_a_finite_decision() {
        let csv = "g,x\na,0.1\na,0.5\na,0.9\nb,0.1\nb,0.5\nb,0.9\n";
        let ds = load_csv_from_reader(csv.as_bytes(), "g", &[], true).unwrap();
        let cfg = RunConfig {
            h: Some(1.0),
            replications: 30,
            statistics: vec![Statistic::Tn, Statistic::Energy],
            ..Default::default()
        };
        let r = run_test(&ds, &cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.statistic.is_finite()));
        assert!(r.to_string(true).unwrap().starts_with(REPORT_HEADER));
        assert!(r.to_string(false).unwrap().contains("Tn Sub"));
    }
}
