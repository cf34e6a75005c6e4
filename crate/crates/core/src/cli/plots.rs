use std::fs;
use std::path::Path;

use serde_json::Value;

use super::rundir::REPORT_FORMAT;
use crate::{Error, Result};

/// Writes `plots/score_vs_step.csv` (step, mean30_return) and
/// `plots/score_vs_fps.csv` (run, score, fps) for whatever `run` holds.
pub fn export_plots(run: &Path) -> Result<()> {
    let out = run.join("plots");
    let mut wrote = false;

    let log = ["trace.jsonl", "log.jsonl"].iter().map(|f| run.join(f)).find(|p| p.is_file());
    if let Some(log) = log {
        let text = fs::read_to_string(&log).map_err(|e| Error::io(&log, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            // A crashed run may end on a partial line.
            let Ok(v) = serde_json::from_str::<Value>(line) else {
                if i + 1 == text.lines().count() {
                    break;
                }
                return Err(Error::format(&log, format!("line {} is not JSON", i + 1)));
            };
            if let (Some(step), Some(r)) = (v["step"].as_u64(), v["episode_return_mean30"].as_f64()) {
                rows.push((step, r));
            }
        }
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let p = out.join("score_vs_step.csv");
        let mut w = csv::Writer::from_path(&p).map_err(|e| Error::format(&p, e))?;
        w.write_record(["step", "mean30_return"]).map_err(|e| Error::format(&p, e))?;
        for (s, r) in rows {
            w.write_record([s.to_string(), r.to_string()]).map_err(|e| Error::format(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        wrote = true;
    }

    let mut points: Vec<(String, f64, f64)> = Vec::new();
    let pareto = run.join("pareto.csv");
    if pareto.is_file() {
        let mut r = csv::Reader::from_path(&pareto).map_err(|e| Error::format(&pareto, e))?;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(&pareto, e))?;
            let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
            points.push((format!("lambda={}/seed={}", &rec[0], &rec[1]), num(2), num(3)));
        }
    } else if let Ok(text) = fs::read_to_string(run.join("report.json")) {
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::format(run.join("report.json"), e))?;
        if v["format"] == REPORT_FORMAT && v["kind"] == "search" {
            let name = run.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
            points.push((name, v["score"].as_f64().unwrap_or(f64::NAN), v["fps"].as_f64().unwrap_or(f64::NAN)));
        }
    }
    if !points.is_empty() {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let p = out.join("score_vs_fps.csv");
        let mut w = csv::Writer::from_path(&p).map_err(|e| Error::format(&p, e))?;
        w.write_record(["run", "score", "fps"]).map_err(|e| Error::format(&p, e))?;
        for (n, s, f) in points {
            w.write_record([n, s.to_string(), f.to_string()]).map_err(|e| Error::format(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        wrote = true;
    }
    if !wrote {
        return Err(Error::format(run, "no trace, log, pareto table or search report to export"));
    }
    Ok(())
}
