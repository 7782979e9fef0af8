use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{format_cell, mean_std, RunResult};
use crate::backbones::Family;
use crate::error::{Error, Result};
use crate::pretrain::Method;
use crate::splits::Scenario;

pub const RESULT_FILE: &str = "result.json";

/// Every `result.json` below `root`, sorted by run id.
pub fn load_results(root: &Path) -> Result<Vec<RunResult>> {
    let mut files = Vec::new();
    collect(root, &mut files)?;
    let mut out: Vec<RunResult> = files.iter().map(|f| crate::fsutil::read_json(f)).collect::<Result<_>>()?;
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == RESULT_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// One CSV row per run.
pub fn write_rollup_csv(results: &[RunResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record([
        "run_id", "fold", "leftout", "method", "family", "scenario", "frozen", "seed", "macro_f1", "accuracy",
        "best_epoch", "step_ms",
    ])
    .map_err(err)?;
    for r in results {
        w.write_record([
            r.run_id.clone(),
            r.fold_id.clone(),
            r.leftout_dataset.clone(),
            r.method.to_string(),
            r.family.to_string(),
            r.scenario.to_string(),
            r.frozen.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.test_macro_f1),
            format!("{:.6}", r.test_accuracy),
            r.best_epoch.to_string(),
            format!("{:.3}", r.step_ms_median),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    crate::fsutil::atomic_write(path, &bytes)
}

type Group = (Family, bool, Scenario);

fn mode(frozen: bool) -> &'static str {
    if frozen {
        "frozen"
    } else {
        "unfrozen"
    }
}

/// Markdown tables: one per (family, mode, scenario), methods as rows and
/// folds as columns, cells `mean ± std` of test macro F1 in percent.
pub fn render_markdown(results: &[RunResult]) -> String {
    let mut groups: BTreeMap<Group, BTreeMap<(Method, String), Vec<f64>>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.family, r.frozen, r.scenario))
            .or_default()
            .entry((r.method, r.fold_id.clone()))
            .or_default()
            .push(r.test_macro_f1);
    }
    let mut s = String::from("# Results\n\nTest macro F1 (%) as mean ± sample std over seeds.\n");
    for ((family, frozen, scenario), cells) in &groups {
        let folds: BTreeSet<&String> = cells.keys().map(|(_, f)| f).collect();
        let methods: BTreeSet<Method> = cells.keys().map(|(m, _)| *m).collect();
        let scen = match scenario {
            Scenario::Full => "all labels".to_string(),
            Scenario::PerClass(n) => format!("{n} per class"),
        };
        let _ = writeln!(s, "\n## {family}, {}, {scen}\n", mode(*frozen));
        let _ = writeln!(s, "| method | {} |", folds.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(folds.len()));
        for m in methods {
            let row: Vec<String> = folds
                .iter()
                .map(|f| match cells.get(&(m, (*f).clone())) {
                    Some(v) if v.len() >= 2 => {
                        let (mean, std) = mean_std(v);
                        format_cell(mean, std)
                    }
                    Some(v) => format!("{:.2}", 100.0 * v[0]),
                    None => "-".into(),
                })
                .collect();
            let _ = writeln!(s, "| {m} | {} |", row.join(" | "));
        }
    }
    s
}

const PALETTE: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// Line plot of mean test macro F1 against labeled windows per class
/// (log axis), one line per method.
pub fn render_svg(results: &[RunResult], family: Family, frozen: bool) -> String {
    let mut series: BTreeMap<Method, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.family == family && r.frozen == frozen) {
        if let Scenario::PerClass(n) = r.scenario {
            series.entry(r.method).or_default().entry(n).or_default().push(r.test_macro_f1);
        }
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let xs: BTreeSet<usize> = series.values().flat_map(|m| m.keys().copied()).collect();
    let (lo, hi) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if b > a => ((a as f64).ln(), (b as f64).ln()),
        (Some(&a), _) => ((a as f64).ln() - 1.0, (a as f64).ln() + 1.0),
        _ => (0.0, 1.0),
    };
    let px = |n: usize| pad + ((n as f64).ln() - lo) / (hi - lo) * (w - 2.0 * pad);
    let py = |f: f64| h - pad - f * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{family}, {}</text>"#,
        w / 2.0,
        mode(frozen)
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{:.0}</text>"#,
            pad - 4.0,
            py(tick) + 3.0,
            tick * 100.0
        );
    }
    for &n in &xs {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{n}</text>"#,
            px(n),
            h - pad + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">labeled windows per class</text>"#,
        w / 2.0,
        h - 12.0
    );
    for (i, (method, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|(&n, v)| format!("{:.1},{:.1}", px(n), py(v.iter().sum::<f64>() / v.len() as f64)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{method}</text>"#,
            w - pad - 70.0,
            pad + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write `report.md`, `rollup.csv` and one plot per (family, mode) with
/// scarce-scenario results. Returns the written paths.
pub fn write_report(results: &[RunResult], out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let md = out.join("report.md");
    crate::fsutil::atomic_write(&md, render_markdown(results).as_bytes())?;
    written.push(md);
    let csv = out.join("rollup.csv");
    write_rollup_csv(results, &csv)?;
    written.push(csv);
    let plots: BTreeSet<(Family, bool)> =
        results.iter().filter(|r| r.scenario.is_scarce()).map(|r| (r.family, r.frozen)).collect();
    for (family, frozen) in plots {
        let p = out.join(format!("f1_vs_samples_{}_{}.svg", family.short(), mode(frozen)));
        crate::fsutil::atomic_write(&p, render_svg(results, family, frozen).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::result;

    #[test]
    fn report_files() {
        let mut rs = Vec::new();
        for (i, n) in [1usize, 10, 100].iter().enumerate() {
            for seed in 0..2 {
                let mut r = result("A", 0.5 + 0.1 * i as f64 + 0.01 * seed as f64, seed);
                r.scenario = Scenario::PerClass(*n);
                r.run_id = format!("{n}-{seed}");
                rs.push(r);
            }
        }
        let md = render_markdown(&rs);
        assert!(md.contains("| mae | 50.50 ± 0.71 |"), "{md}");
        let dir = tempfile::tempdir().unwrap();
        for r in &rs {
            crate::fsutil::write_json(&dir.path().join("runs").join(&r.run_id).join(RESULT_FILE), r).unwrap();
        }
        let loaded = load_results(dir.path()).unwrap();
        assert_eq!(loaded.len(), 6);
        let files = write_report(&loaded, &dir.path().join("report")).unwrap();
        assert_eq!(files.len(), 3);
        let svg = std::fs::read_to_string(&files[2]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        let csv = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }
}
