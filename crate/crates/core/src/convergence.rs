use crate::stats::{fit_log_log, RateFit};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub scale: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// Scale-indexed diagnostics, one row per `(scale, metric)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTable {
    pub records: Vec<ConvergenceRecord>,
}

impl ConvergenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, scale: f64, metric: &str, value: f64, stderr: Option<f64>) {
        self.records.push(ConvergenceRecord {
            scale,
            metric: metric.to_string(),
            value,
            stderr,
        });
    }

    /// `(scale, value)` pairs of one metric, in insertion order.
    pub fn series(&self, metric: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.scale, r.value))
            .collect()
    }

    /// Least-squares slope of `log value` against `log scale`.
    pub fn fit(&self, metric: &str) -> Option<RateFit> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self.series(metric).into_iter().unzip();
        fit_log_log(&xs, &ys)
    }

    /// CSV with columns `scale,metric,value` (plus `stderr` when asked).
    pub fn to_csv(&self, scale_header: &str, with_stderr: bool) -> String {
        let mut out = String::new();
        out.push_str(scale_header);
        out.push_str(if with_stderr { ",metric,value,stderr\n" } else { ",metric,value\n" });
        for r in &self.records {
            out.push_str(&format!("{:e},{},{:e}", r.scale, r.metric, r.value));
            if with_stderr {
                match r.stderr {
                    Some(se) => out.push_str(&format!(",{se:e}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_and_csv() {
        let mut t = ConvergenceTable::new();
        for k in 1..5 {
            let h = 2f64.powi(-k);
            t.push(h, "err", 3.0 * h, None);
            t.push(h, "other", 1.0, Some(0.1));
        }
        assert!((t.fit("err").unwrap().rate - 1.0).abs() < 1e-12);
        let csv = t.to_csv("mesh", true);
        assert!(csv.starts_with("mesh,metric,value,stderr\n5e-1,err,1.5e0,\n5e-1,other,1e0,1e-1\n"));
    }
}
