use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::ResultsReport;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EmitFormat {
    Json,
    CsvBundle,
}

pub const REPORT_FILE: &str = "results.json";

/// Writes the requested files into `out_dir` and returns their paths.
pub fn emit(
    report: &ResultsReport,
    formats: &[EmitFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if formats.contains(&EmitFormat::Json) {
        let path = out_dir.join(REPORT_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, report)?;
        w.write_all(b"\n")?;
        w.flush()?;
        written.push(path);
    }
    if formats.contains(&EmitFormat::CsvBundle) {
        for (name, writer) in [
            (
                "convergence.csv",
                write_convergence as fn(&ResultsReport, &mut dyn Write) -> Result<()>,
            ),
            ("observer.csv", write_observer),
            ("outputs.csv", write_outputs),
        ] {
            let path = out_dir.join(name);
            let mut w = BufWriter::new(File::create(&path)?);
            writer(report, &mut w)?;
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Loads a JSON report and checks its stored gaps.
pub fn load_report(path: &Path) -> Result<ResultsReport> {
    let text = std::fs::read_to_string(path)?;
    let report: ResultsReport = serde_json::from_str(&text)?;
    report.verify()?;
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

/// `k, p_gap_1, …` with `‖P_{i,k} − P_i*‖_F`; blank once an agent has stopped.
pub fn write_convergence(report: &ResultsReport, w: &mut dyn Write) -> Result<()> {
    let mut header = vec!["k".to_string()];
    header.extend(report.agents.iter().map(|a| format!("p_gap_{}", a.index)));
    writeln!(w, "{}", header.join(","))?;
    let rows = report
        .agents
        .iter()
        .map(|a| a.policy.history.len())
        .max()
        .unwrap_or(0);
    for k in 0..rows {
        let mut line = vec![k.to_string()];
        line.extend(
            report
                .agents
                .iter()
                .map(|a| cell(a.policy.history.get(k).and_then(|h| h.reference_gap))),
        );
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// `t, eta_error_sum, tracking_error_sum`.
pub fn write_observer(report: &ResultsReport, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "t,eta_error_sum,tracking_error_sum")?;
    let o = &report.observer;
    for ((t, a), b) in o
        .time
        .iter()
        .zip(&o.eta_error_sum)
        .zip(&o.tracking_error_sum)
    {
        writeln!(w, "{t},{a:e},{b:e}")?;
    }
    Ok(())
}

/// `t, y_i_k, yref_i_k, …` over the closed-loop rerun.
pub fn write_outputs(report: &ResultsReport, w: &mut dyn Write) -> Result<()> {
    let p = &report.post;
    let mut header = vec!["t".to_string()];
    for (i, (ys, rs)) in p.outputs.iter().zip(&p.references).enumerate() {
        let dim = ys.first().or(rs.first()).map_or(0, Vec::len);
        for k in 1..=dim {
            header.push(format!("y_{}_{k}", i + 1));
            header.push(format!("yref_{}_{k}", i + 1));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (s, t) in p.time.iter().enumerate() {
        let mut line = vec![t.to_string()];
        for (ys, rs) in p.outputs.iter().zip(&p.references) {
            for (y, r) in ys[s].iter().zip(&rs[s]) {
                line.push(format!("{y:e}"));
                line.push(format!("{r:e}"));
            }
        }
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
