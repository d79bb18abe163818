//! The acceptance matrix: criteria 1 to 12, one configuration file each
//! (some shared), evaluated at their stated tolerances.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Overrides};
use crate::run::{run, Fit, KernelFault, Results, RunOptions};

/// Configuration files and the criteria that read them.
pub const REQUIRED: &[(&str, &[u32])] = &[
    ("hitting.toml", &[1]),
    ("kernel_rows.toml", &[2]),
    ("cross_construction.toml", &[3]),
    ("pi_k1.5.toml", &[4, 6]),
    ("excursions_k1.5.toml", &[5, 6, 8]),
    ("quenched_means.toml", &[5]),
    ("excursions_k2.toml", &[6]),
    ("excursions_k3.toml", &[6, 8]),
    ("y_max_k1.5.toml", &[6]),
    ("y_max_k3.toml", &[6]),
    ("identity_in_law.toml", &[7]),
    ("appendix_k1.5.toml", &[9]),
    ("appendix_k3.toml", &[9]),
    ("sum_bound.toml", &[10]),
    ("trajectory_k3.toml", &[11]),
    ("trajectory_k1.5.toml", &[11]),
    ("determinism.toml", &[12]),
];

pub const TITLES: [&str; 12] = [
    "exact-formula oracle equivalence",
    "kernel normalization",
    "cross-construction agreement",
    "stationarity",
    "mean identities",
    "tail exponents",
    "identity in law",
    "f(eps) slope",
    "appendix numerics",
    "sum of i.i.d. tail bound",
    "favorite-site phase transition",
    "determinism",
];

#[derive(Clone, Debug, Default)]
pub struct AcceptanceOpts {
    /// Criteria to run; all when `None`.
    pub only: Option<Vec<u32>>,
    pub fault: Option<KernelFault>,
    /// Per-configuration artifacts and the report go here when set.
    pub out: Option<PathBuf>,
    pub overrides: Overrides,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub pass: bool,
    pub criteria: Vec<Criterion>,
    pub wall_time_s: BTreeMap<String, f64>,
}

impl AcceptanceReport {
    pub fn criterion(&self, id: u32) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    /// One line per criterion followed by its indented checks.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.criteria {
            let _ = writeln!(s, "criterion {:>2} {}: {}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.title);
            for k in &c.checks {
                let _ = writeln!(s, "    [{}] {}: {}", if k.pass { "ok" } else { "FAIL" }, k.name, k.detail);
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut s = String::from("criterion,check,pass,detail\n");
        for c in &self.criteria {
            for k in &c.checks {
                let _ = writeln!(s, "{},{},{},\"{}\"", c.id, k.name, k.pass, k.detail.replace('"', "'"));
            }
        }
        std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
    }
}

fn selected(opts: &AcceptanceOpts) -> Vec<u32> {
    match &opts.only {
        Some(v) => {
            let mut v = v.clone();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => (1..=12).collect(),
    }
}

/// Files needed for `criteria` that are absent from `dir`.
pub fn missing_configs(dir: &Path, criteria: &[u32]) -> Vec<&'static str> {
    REQUIRED
        .iter()
        .filter(|(_, cs)| cs.iter().any(|c| criteria.contains(c)))
        .map(|(f, _)| *f)
        .filter(|f| !dir.join(f).is_file())
        .collect()
}

struct Runner<'a> {
    dir: &'a Path,
    opts: &'a AcceptanceOpts,
    cache: BTreeMap<&'static str, Result<Results, String>>,
    times: BTreeMap<String, f64>,
}

impl Runner<'_> {
    fn load(&self, file: &str) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.dir.join(file))?;
        cfg.apply(&self.opts.overrides);
        cfg.out = self.opts.out.as_ref().map(|o| o.join(file.trim_end_matches(".toml")));
        Ok(cfg)
    }

    fn get(&mut self, file: &'static str) -> Result<&Results, String> {
        if !self.cache.contains_key(file) {
            let t = Instant::now();
            let fault = if file == "kernel_rows.toml" { self.opts.fault } else { None };
            let r = self
                .load(file)
                .and_then(|cfg| run(&cfg, &RunOptions { fault }))
                .map(|o| o.results)
                .map_err(|e| format!("{file}: {e:#}"));
            self.times.insert(file.to_string(), t.elapsed().as_secs_f64());
            self.cache.insert(file, r);
        }
        self.cache[file].as_ref().map_err(Clone::clone)
    }
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn failed(name: &str, why: impl std::fmt::Display) -> Check {
    check(name, false, why.to_string())
}

fn band(name: &str, fit: Option<&Fit>, target: f64, tol: f64) -> Check {
    match fit {
        Some(Fit::Ok(t)) => check(
            name,
            t.within(target, tol),
            format!(
                "{:.4} +- {:.4} (target {target} +- {tol}, window [{}, {}], {} in window)",
                t.exponent, t.stderr, t.window.0, t.window.1, t.n_window
            ),
        ),
        Some(Fit::Error(e)) => failed(name, e),
        None => failed(name, "not run"),
    }
}

fn range(name: &str, fit: Option<&Fit>, lo: f64, hi: f64) -> Check {
    match fit {
        Some(Fit::Ok(t)) => check(
            name,
            lo <= t.exponent && t.exponent <= hi,
            format!("{:.4} +- {:.4} (target in [{lo}, {hi}])", t.exponent, t.stderr),
        ),
        Some(Fit::Error(e)) => failed(name, e),
        None => failed(name, "not run"),
    }
}

macro_rules! expect {
    ($checks:ident, $name:expr, $res:expr, $pat:pat => $body:expr) => {
        match $res {
            Ok($pat) => $body,
            Ok(_) => $checks.push(failed($name, "configuration has the wrong experiment kind")),
            Err(e) => $checks.push(failed($name, e)),
        }
    };
}

/// Run the selected criteria on the configurations in `dir`.
pub fn acceptance(dir: &Path, opts: &AcceptanceOpts) -> anyhow::Result<AcceptanceReport> {
    let ids = selected(opts);
    if let Some(bad) = ids.iter().find(|&&c| !(1..=12).contains(&c)) {
        bail!("no acceptance criterion {bad}; criteria are numbered 1 to 12");
    }
    let missing = missing_configs(dir, &ids);
    if !missing.is_empty() {
        bail!("{} is missing acceptance configurations: {}", dir.display(), missing.join(", "));
    }
    if let Some(o) = &opts.out {
        std::fs::create_dir_all(o)?;
    }
    let mut r = Runner {
        dir,
        opts,
        cache: BTreeMap::new(),
        times: BTreeMap::new(),
    };
    let mut criteria = Vec::new();
    for id in ids {
        let mut c = Vec::new();
        match id {
            1 => expect!(c, "hitting", r.get("hitting.toml"), Results::OracleSuite(o) => match &o.hitting {
                Some(h) => {
                    c.push(check("max relative error", h.max_rel_err < 1e-10, format!("{:.3e} over {} paths (< 1e-10)", h.max_rel_err, h.paths)));
                    c.push(check("runtime", h.elapsed_s < 1.0, format!("{:.3} s (< 1 s)", h.elapsed_s)));
                }
                None => c.push(failed("hitting", "section missing")),
            }),
            2 => expect!(c, "rows", r.get("kernel_rows.toml"), Results::SpineChecks(s) => match &s.rows {
                Some(rows) => {
                    c.push(check(
                        "row sums",
                        rows.i_max >= 50 && rows.max_abs_defect <= 1e-6,
                        format!("max |sum - 1| = {:.3e} at row {} over i <= {} (<= 1e-6)", rows.max_abs_defect, rows.worst_row, rows.i_max),
                    ));
                    c.push(check("runtime", rows.elapsed_s < 10.0, format!("{:.2} s (< 10 s)", rows.elapsed_s)));
                }
                None => c.push(failed("rows", "section missing")),
            }),
            3 => expect!(c, "cross construction", r.get("cross_construction.toml"), Results::SpineChecks(s) => match &s.cross_construction {
                Some(x) => {
                    c.push(check(
                        "excursion maxima",
                        x.max_rule.pass,
                        format!("median p {:.3}, {} of {} below 0.01, n = {}", x.max_rule.median_p, x.max_rule.below_001, x.max_rule.p_values.len(), x.n),
                    ));
                    c.push(check("truncation", x.truncated == 0, format!("{} truncated excursions", x.truncated)));
                }
                None => c.push(failed("cross construction", "section missing")),
            }),
            4 => expect!(c, "pi", r.get("pi_k1.5.toml"), Results::PiEstimate(p) => {
                let worst = p
                    .residuals
                    .iter()
                    .map(|x| (x.j, (x.residual.abs() - x.trunc_bound) / x.se))
                    .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
                let ok = p.residuals.len() >= 20 && p.residuals.iter().all(|x| x.residual.abs() - x.trunc_bound <= 3.0 * x.se);
                c.push(check("stationarity residuals", ok, format!("worst j = {} at {:.2} SE (<= 3) over j <= {}", worst.0, worst.1, p.residuals.len())));
                // an allowance for rounding, since the standard error can be tiny
                let dev = (p.total - 1.0).abs();
                c.push(check(
                    "total mass",
                    dev <= 3.0 * p.total_se + 1e-12,
                    format!("|sum - 1| = {dev:.3e}, SE {:.3e}", p.total_se),
                ));
            }),
            5 => {
                expect!(c, "E #Z_1", r.get("excursions_k1.5.toml"), Results::ExcursionTails(e) => {
                    c.push(check(
                        "E #Z_1",
                        (e.z1_mean - 1.0).abs() <= 0.01,
                        format!("{:.4} +- {:.4} over {} excursions, {} truncated (1 +- 0.01)", e.z1_mean, e.z1_se, e.n, e.truncated),
                    ));
                });
                expect!(c, "quenched means", r.get("quenched_means.toml"), Results::OracleSuite(o) => {
                    match &o.quenched_means {
                        Some(q) => c.push(check(
                            "E_w L(x) = exp(-U(x))",
                            q.points.len() >= 100 && q.outside_3se == 0,
                            format!("{} of {} vertices outside 3 SE, max |z| = {:.2}", q.outside_3se, q.points.len(), q.max_abs_z),
                        )),
                        None => c.push(failed("quenched means", "section missing")),
                    }
                    match &o.martingale {
                        Some(m) => c.push(check(
                            "E W_n",
                            (m.mean - 1.0).abs() <= 3.0 * m.se,
                            format!("{:.4} +- {:.4} at n = {} (1 +- 3 SE)", m.mean, m.se, m.depth),
                        )),
                        None => c.push(failed("E W_n", "section missing")),
                    }
                });
            }
            6 => {
                expect!(c, "k=1.5 excursions", r.get("excursions_k1.5.toml"), Results::ExcursionTails(e) => {
                    c.push(band("max edge local time, k=1.5", e.max_edge_lt.as_ref(), -1.0, 0.15));
                    c.push(band("#Z_1, k=1.5", e.z1.as_ref(), -1.5, 0.2));
                    c.push(band("max below Z_1, k=1.5", e.max_below_z1.as_ref(), -1.5, 0.2));
                });
                expect!(c, "k=3 excursions", r.get("excursions_k3.toml"), Results::ExcursionTails(e) => {
                    c.push(band("max edge local time, k=3", e.max_edge_lt.as_ref(), -1.5, 0.2));
                });
                expect!(c, "k=2 excursions", r.get("excursions_k2.toml"), Results::ExcursionTails(e) => {
                    c.push(range("max edge local time, k=2", e.max_edge_lt.as_ref(), -1.25, -0.95));
                });
                expect!(c, "Y max k=1.5", r.get("y_max_k1.5.toml"), Results::SpineChecks(s) => {
                    c.push(band("Y-excursion max, k=1.5", s.y_max.as_ref().map(|y| &y.excursion_max), -0.5, 0.1));
                });
                expect!(c, "Y max k=3", r.get("y_max_k3.toml"), Results::SpineChecks(s) => {
                    c.push(band("Y-excursion max, k=3", s.y_max.as_ref().map(|y| &y.excursion_max), -2.0, 0.25));
                });
                expect!(c, "pi", r.get("pi_k1.5.toml"), Results::PiEstimate(p) => {
                    c.push(band("perpetuity, k=1.5", Some(&p.perpetuity), -0.5, 0.1));
                    c.push(check(
                        "pi_i, k=1.5",
                        (p.slope + 1.5).abs() <= 0.2,
                        format!("{:.4} +- {:.4} over i in [{}, {}] (target -1.5 +- 0.2)", p.slope, p.slope_se, p.slope_window.0, p.slope_window.1),
                    ));
                });
            }
            7 => expect!(c, "identity in law", r.get("identity_in_law.toml"), Results::ExcursionTails(e) => match &e.identity_in_law {
                Some(id) => c.push(check(
                    "direct vs composed",
                    id.rule.pass,
                    format!(
                        "k = {}, n = {}: median p {:.3}, {} of {} below 0.01",
                        id.k, id.n, id.rule.median_p, id.rule.below_001, id.rule.p_values.len()
                    ),
                )),
                None => c.push(failed("identity in law", "section missing")),
            }),
            8 => {
                for (file, target, label) in [("excursions_k1.5.toml", 1.5, "k=1.5"), ("excursions_k3.toml", 2.0, "k=3")] {
                    expect!(c, label, r.get(file), Results::ExcursionTails(e) => match &e.f_eps {
                        Some(f) => c.push(check(
                            &format!("f(eps) slope, {label}"),
                            (f.slope - target).abs() <= 0.2,
                            format!("{:.4} +- {:.4} (target {target} +- 0.2)", f.slope, f.stderr),
                        )),
                        None => c.push(failed(label, "no sample")),
                    });
                }
            }
            9 => {
                let mut total = 0.0;
                for (file, label) in [("appendix_k1.5.toml", "k=1.5"), ("appendix_k3.toml", "k=3")] {
                    expect!(c, label, r.get(file), Results::AppendixChecks(a) => {
                        total += a.elapsed_s;
                        if a.supermartingale.is_empty() {
                            c.push(failed(label, "no supermartingale case"));
                        }
                        for s in &a.supermartingale {
                            let name = format!("supermartingale, {label}, gamma = {}", s.gamma);
                            match &s.report {
                                Ok(rep) => c.push(check(
                                    &name,
                                    rep.i0.is_some(),
                                    match rep.i0 {
                                        Some(i0) => format!("i0 = {i0}, no violation above it over {} tested states", rep.points.len()),
                                        None => "violated at the largest tested state".into(),
                                    },
                                )),
                                Err(e) => c.push(failed(&name, e)),
                            }
                        }
                        if let Some(h) = &a.hypergeometric {
                            c.push(check(
                                "hypergeometric identity",
                                h.failures == 0,
                                format!("{} cases, max relative error {:.3e}, {} at or above 1e-8", h.checks.len(), h.max_rel_err, h.failures),
                            ));
                        }
                    });
                }
                c.push(check("runtime", total < 60.0, format!("{total:.1} s (< 60 s)")));
            }
            10 => expect!(c, "bound", r.get("sum_bound.toml"), Results::OracleSuite(o) => match &o.sum_bound {
                Some(l) => c.push(check(
                    "empirical tail <= bound",
                    l.violations == 0,
                    format!("{} violations over {} points, {} draws each, max ratio {:.3e}", l.violations, l.points.len(), l.draws, l.max_ratio),
                )),
                None => c.push(failed("bound", "section missing")),
            }),
            11 => {
                expect!(c, "k=3", r.get("trajectory_k3.toml"), Results::FavoriteTrajectory(t) => {
                    c.push(check(
                        "k=3 favorites in minimum set, at most 3",
                        t.fraction_both >= 0.95,
                        format!(
                            "{:.3} of post-burn-in checkpoints over {} replicas (>= 0.95); in set {:.3}, at most 3 {:.3}",
                            t.fraction_both, t.replicas.len(), t.fraction_in_minima, t.fraction_at_most_three
                        ),
                    ));
                });
                expect!(c, "k=1.5", r.get("trajectory_k1.5.toml"), Results::FavoriteTrajectory(t) => {
                    c.push(check(
                        "k=1.5 favorites escape beyond depth 10",
                        t.fraction_far >= 0.5,
                        format!(
                            "{:.2} of {} replicas (>= 0.5); by horizon: {}",
                            t.fraction_far,
                            t.replicas.len(),
                            t.growth
                                .iter()
                                .map(|h| format!("n {:.0e}: {:.2}, median depth {}", h.n_max as f64, h.fraction_far, h.median_max_min_depth))
                                .collect::<Vec<_>>()
                                .join("; ")
                        ),
                    ));
                    c.push(check(
                        "k=1.5 favorites return within depth 5",
                        t.fraction_near >= 0.5,
                        format!("{:.2} of {} replicas (>= 0.5)", t.fraction_near, t.replicas.len()),
                    ));
                });
            }
            12 => {
                let t = Instant::now();
                c.push(match determinism(&r.load("determinism.toml")?) {
                    Ok(detail) => check("workers 1 vs 8", true, detail),
                    Err(e) => failed("workers 1 vs 8", format!("{e:#}")),
                });
                r.times.insert("determinism.toml".into(), t.elapsed().as_secs_f64());
            }
            _ => unreachable!(),
        }
        criteria.push(Criterion {
            id,
            title: TITLES[id as usize - 1].to_string(),
            pass: !c.is_empty() && c.iter().all(|k| k.pass),
            checks: c,
        });
    }
    let report = AcceptanceReport {
        pass: criteria.iter().all(|c| c.pass),
        criteria,
        wall_time_s: r.times,
    };
    if let Some(o) = &opts.out {
        std::fs::write(o.join("acceptance.json"), serde_json::to_string_pretty(&report)?)?;
        report.write_csv(&o.join("acceptance.csv"))?;
    }
    Ok(report)
}

/// Run `cfg` with one and with eight workers and compare every CSV file and
/// the results block of the summary.
pub fn determinism(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    let tmp = tempfile::tempdir()?;
    let mut outs = Vec::new();
    for w in [1, 8] {
        let mut c = cfg.clone();
        c.workers = w;
        let dir = tmp.path().join(format!("workers{w}"));
        c.out = Some(dir.clone());
        outs.push((run(&c, &RunOptions::default())?, dir));
    }
    let (a, da) = &outs[0];
    let (b, db) = &outs[1];
    if a.summary.results != b.summary.results {
        bail!("summary results differ");
    }
    if a.summary.config_hash != b.summary.config_hash {
        bail!("config hashes differ");
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(da)? {
        let name = entry?.file_name();
        if !name.to_string_lossy().ends_with(".csv") {
            continue;
        }
        let x = std::fs::read(da.join(&name))?;
        let y = std::fs::read(db.join(&name)).with_context(|| format!("{} missing for 8 workers", name.to_string_lossy()))?;
        if x != y {
            bail!("{} differs", name.to_string_lossy());
        }
        files.push(format!("{} ({} rows)", name.to_string_lossy(), x.iter().filter(|&&c| c == b'\n').count().saturating_sub(1)));
    }
    if files.is_empty() {
        bail!("the run wrote no per-replica records");
    }
    files.sort();
    Ok(format!("identical: {}", files.join(", ")))
}
