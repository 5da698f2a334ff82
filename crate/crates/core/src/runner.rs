//! Executes manifests and writes report directories.
//!
//! Each run writes to `<root>/<kind>-<hash16>/`, where `hash16` is the
//! first 16 hex digits of the manifest hash. Files that already exist are
//! left untouched, so re-running a manifest never overwrites anything.
//! Every file carries the manifest hash and the seed (or seed list) it
//! was produced from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::accounting::{communication_breakdown, he_only_modes, reference_breakdown_for, mb_display, percent_display, TABLE_HE_ONLY_TOTAL_MB, TABLE_TOTAL_MB};
use crate::attacks::mia_comparison;
use crate::convergence::run_suite;
use crate::dp::epsilon_report;
use crate::fl::{run_trials, ExperimentResult, FlConfig, RoundOutcome, RoundReport};
use crate::he::SecurityClaim;
use crate::manifest::{standard_ablations, Experiment, Manifest};
use crate::plot::Chart;
use crate::stats::{mean, median, paired_ttest, std_dev, TTest};
use crate::{Error, Result};

pub const ENV_OUT: &str = "SPARSEHE_OUT";
pub const ENV_THREADS: &str = "SPARSEHE_THREADS";
pub const DEFAULT_OUT: &str = "results";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_root: PathBuf,
    pub threads: Option<usize>,
}

impl RunOptions {
    /// Output root and thread count from, in order of precedence, the
    /// explicit arguments, the environment, the manifest and the default.
    pub fn resolve(out: Option<PathBuf>, threads: Option<usize>, manifest: &Manifest) -> Result<Self> {
        let out_root = out
            .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
            .or_else(|| manifest.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let threads = match threads {
            Some(t) => Some(t),
            None => match std::env::var(ENV_THREADS) {
                Ok(v) => Some(v.parse().map_err(|_| Error::config(format!("{ENV_THREADS}={v} is not a thread count")))?),
                Err(_) => None,
            },
        };
        if threads == Some(0) {
            return Err(Error::config("thread count must be >= 1"));
        }
        Ok(Self { out_root, threads })
    }
}

/// Replaces the manifest's seeds and re-validates.
pub fn override_seeds(manifest: &Manifest, seeds: Vec<u64>) -> Result<Manifest> {
    let m = Manifest { seeds, ..manifest.clone() };
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
    /// Files that already existed and were kept as they were.
    pub kept: Vec<PathBuf>,
    pub summary: Value,
    pub security: Option<SecurityClaim>,
    /// Seeds for which no round completed.
    pub failed_seeds: Vec<u64>,
    /// Human-readable report for the terminal.
    pub lines: Vec<String>,
}

struct Sink {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
    kept: Vec<PathBuf>,
}

impl Sink {
    fn put(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                f.write_all(content.as_bytes())?;
                self.written.push(path);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => self.kept.push(path),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn json(&mut self, rel: &str, seed: Value, mut body: Value) -> Result<()> {
        if let Value::Object(map) = &mut body {
            map.insert("manifest_hash".into(), json!(self.hash));
            map.insert("seed".into(), seed);
        }
        self.put(rel, &(serde_json::to_string_pretty(&body)? + "\n"))
    }

    fn csv(&mut self, rel: &str, seed: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut s = format!("# manifest_hash={} seed={seed}\n{header}\n", self.hash);
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        self.put(rel, &s)
    }

    fn svg(&mut self, rel: &str, seed: &str, chart: &Chart) -> Result<()> {
        let s = format!("<!-- manifest_hash={} seed={seed} -->\n{}", self.hash, chart.to_svg());
        self.put(rel, &s)
    }
}

fn seed_list(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn spread(per_seed: &[f64]) -> Value {
    json!({
        "mean": mean(per_seed),
        "std": std_dev(per_seed),
        "median": median(per_seed),
        "per_seed": per_seed,
    })
}

fn outcome_label(o: &RoundOutcome) -> &'static str {
    match o {
        RoundOutcome::Completed => "completed",
        RoundOutcome::QuorumFailure { .. } => "quorum_failure",
        RoundOutcome::Aborted { .. } => "aborted",
    }
}

pub const ROUND_CSV_HEADER: &str = "round,outcome,accuracy,f1,loss,bytes_up_per_client,bytes_up_total,bytes_down_total,\
epsilon,participants,contributions,stale_dropped,ciphertexts,union_size,clip_range,wall_time,he_decryption_ok";

pub fn round_csv_row(r: &RoundReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.round,
        outcome_label(&r.outcome),
        r.global_accuracy,
        r.f1,
        r.loss,
        r.bytes_up_per_client,
        r.bytes_up_total,
        r.bytes_down_total,
        r.epsilon_cumulative.map(|e| e.to_string()).unwrap_or_default(),
        r.participating_clients.len(),
        r.contributors.len(),
        r.stale_dropped,
        r.ciphertexts,
        r.union_size,
        r.clip_range,
        r.wall_time,
        r.he_decryption_ok
    )
}

/// Mean upload of the largest client over completed rounds.
fn mean_upload(r: &ExperimentResult) -> f64 {
    let done: Vec<f64> = r.reports.iter().filter(|x| x.completed()).map(|x| x.bytes_up_per_client as f64).collect();
    if done.is_empty() {
        0.0
    } else {
        mean(&done)
    }
}

fn finals(results: &[ExperimentResult], f: impl Fn(&RoundReport) -> f64) -> Vec<f64> {
    results.iter().map(|r| f(r.final_report())).collect()
}

fn failed(results: &[ExperimentResult], seeds: &[u64]) -> Vec<u64> {
    results.iter().zip(seeds).filter(|(r, _)| r.all_rounds_failed()).map(|(_, s)| *s).collect()
}

/// Runs the manifest and writes its report directory.
pub fn run_manifest(manifest: &Manifest, opts: &RunOptions) -> Result<RunOutcome> {
    manifest.validate()?;
    let hash = manifest.hash();
    let dir = opts.out_root.join(format!("{}-{}", manifest.experiment.kind(), &hash[..16]));
    let sink = Sink { dir: dir.clone(), hash, written: Vec::new(), kept: Vec::new() };
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(|| dispatch(manifest, sink)),
        None => dispatch(manifest, sink),
    }
}

fn dispatch(m: &Manifest, mut sink: Sink) -> Result<RunOutcome> {
    let seeds = &m.seeds;
    let mut lines = Vec::new();
    let mut failed_seeds = Vec::new();
    let (summary, security) = match &m.experiment {
        Experiment::FlRun(cfg) => {
            let results = run_trials(cfg, seeds)?;
            for (r, &seed) in results.iter().zip(seeds) {
                write_trial(&mut sink, cfg, r, seed)?;
            }
            failed_seeds = failed(&results, seeds);
            let acc = finals(&results, |r| r.global_accuracy);
            let summary = json!({
                "kind": "fl_run",
                "security": cfg.he.params.security,
                "final_accuracy": spread(&acc),
                "final_f1": spread(&finals(&results, |r| r.f1)),
                "final_loss": spread(&finals(&results, |r| r.loss)),
                "mean_bytes_up_per_client": spread(&results.iter().map(mean_upload).collect::<Vec<_>>()),
                "epsilon": results[0].final_report().epsilon_cumulative,
                "failed_seeds": failed_seeds,
            });
            lines.push(format!("final accuracy {:.4} ± {:.4} over {} seeds", mean(&acc), std_dev(&acc), seeds.len()));
            (summary, Some(cfg.he.params.security))
        }
        Experiment::Ablation(a) => {
            let variants = if a.variants.is_empty() { standard_ablations() } else { a.variants.clone() };
            let mut rows = Vec::new();
            let mut round_rows = Vec::new();
            let mut table = Vec::new();
            let mut chart = Chart::new("Final-round loss by configuration", "round", "median test loss");
            for v in &variants {
                let cfg = FlConfig { mechanisms: v.mechanisms, ..a.base.clone() };
                let results = run_trials(&cfg, seeds)?;
                failed_seeds.extend(failed(&results, seeds));
                let loss = finals(&results, |r| r.loss);
                let acc = finals(&results, |r| r.global_accuracy);
                let up: Vec<f64> = results.iter().map(mean_upload).collect();
                rows.push(format!(
                    "{},{},{},{},{},{}",
                    v.name,
                    median(&loss),
                    median(&acc),
                    mean(&acc),
                    std_dev(&acc),
                    median(&up)
                ));
                let mut pts = Vec::new();
                for round in 0..cfg.rounds as usize {
                    let l: Vec<f64> = results.iter().map(|r| r.reports[round].loss).collect();
                    let ac: Vec<f64> = results.iter().map(|r| r.reports[round].global_accuracy).collect();
                    round_rows.push(format!("{},{},{},{}", v.name, round + 1, median(&l), median(&ac)));
                    pts.push(((round + 1) as f64, median(&l)));
                }
                chart = chart.series(&v.name, pts);
                lines.push(format!(
                    "{:<24} loss {:.4}  accuracy {:.4} ± {:.4}  upload {:.0} B",
                    v.name,
                    median(&loss),
                    mean(&acc),
                    std_dev(&acc),
                    median(&up)
                ));
                table.push(json!({
                    "name": v.name,
                    "mechanisms": v.mechanisms,
                    "final_loss": spread(&loss),
                    "final_accuracy": spread(&acc),
                    "bytes_up_per_client": spread(&up),
                }));
            }
            let sl = seed_list(seeds);
            sink.csv(
                "ablation.csv",
                &sl,
                "variant,median_final_loss,median_final_accuracy,mean_final_accuracy,std_final_accuracy,median_bytes_up_per_client",
                &rows,
            )?;
            sink.csv("rounds/ablation_rounds.csv", &sl, "variant,round,median_loss,median_accuracy", &round_rows)?;
            sink.svg("plots/ablation_loss.svg", &sl, &chart)?;
            failed_seeds.sort_unstable();
            failed_seeds.dedup();
            (json!({ "kind": "ablation", "security": a.base.he.params.security, "variants": table, "failed_seeds": failed_seeds }), Some(a.base.he.params.security))
        }
        Experiment::Accounting(a) => {
            let b = communication_breakdown(a.d, a.sparsity, a.n_clients, &a.params, &a.packing, a.slot_model);
            let modes = he_only_modes(a.d, a.n_clients, &a.params, &a.packing, a.slot_model, TABLE_HE_ONLY_TOTAL_MB);
            let eps = epsilon_report(&a.privacy, a.quoted_intermediate)?;
            lines.extend(b.steps());
            lines.push(format!(
                "table total {TABLE_TOTAL_MB} MB vs derived {} MB for {} clients",
                mb_display(b.per_client_bytes * a.n_clients, 1),
                a.n_clients
            ));
            lines.push(format!(
                "epsilon (T={}, s={}, sigma={}): natural {:.2}, base-10 {:.2}; sigma for epsilon=1: {:.4}",
                a.privacy.rounds, a.privacy.sparsity, a.privacy.sigma, eps.statement_natural, eps.statement_base10, eps.sigma_for_unit_epsilon
            ));
            if let (Some(q), Some(false)) = (eps.quoted_intermediate, eps.quoted_reproducible) {
                lines.push(format!(
                    "UNREPRODUCIBLE: quoted intermediate {q} does not match sqrt(2T log 1/delta) = {:.2} (natural) or {:.2} (base-10)",
                    eps.intermediate_natural, eps.intermediate_base10
                ));
            }
            let body = json!({
                "kind": "accounting",
                "security": a.params.security,
                "breakdown": b,
                "display": {
                    "k": b.k,
                    "ciphertexts": b.ciphertexts,
                    "mb_per_ciphertext": mb_display(b.ciphertext_bytes, 2),
                    "mb_per_client": mb_display(b.per_client_bytes, 1),
                    "baseline_mb_per_client": mb_display(b.baseline_per_client_bytes, 1),
                    "reduction_percent": percent_display(b.reduction_fraction, 1),
                    "total_mb": mb_display(b.per_client_bytes * a.n_clients, 1),
                    "baseline_total_mb": mb_display(b.baseline_per_client_bytes * a.n_clients, 0),
                },
                "steps": b.steps(),
                "table_total_mb": TABLE_TOTAL_MB,
                "he_only": modes,
                "privacy": eps,
            });
            sink.json("accounting.json", Value::Null, body.clone())?;
            (body, Some(a.params.security))
        }
        Experiment::Mia(c) => {
            let rows: Vec<_> = seeds.par_iter().map(|&s| mia_comparison(&c.fl, &c.overfit, s)).collect::<Result<_>>()?;
            let pick = |f: &dyn Fn(&crate::attacks::MiaComparison) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
            let private = pick(&|r| r.private.attack_success_rate);
            let standard = pick(&|r| r.standard.attack_success_rate);
            let overfit = pick(&|r| r.overfit.attack_success_rate);
            let csv: Vec<String> = rows
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{},{},{}",
                        r.seed,
                        r.private.attack_success_rate,
                        r.private.auc,
                        r.standard.attack_success_rate,
                        r.standard.auc,
                        r.overfit.attack_success_rate,
                        r.overfit.auc,
                        r.private_accuracy
                    )
                })
                .collect();
            sink.csv(
                "mia.csv",
                &seed_list(seeds),
                "seed,private_success,private_auc,standard_success,standard_auc,overfit_success,overfit_auc,private_accuracy",
                &csv,
            )?;
            lines.push(format!(
                "attack success (median): private {:.4}, standard {:.4}, overfit baseline {:.4}",
                median(&private),
                median(&standard),
                median(&overfit)
            ));
            (
                json!({
                    "kind": "mia",
                    "security": c.fl.he.params.security,
                    "private_success": spread(&private),
                    "standard_success": spread(&standard),
                    "overfit_success": spread(&overfit),
                    "per_seed": rows,
                }),
                Some(c.fl.he.params.security),
            )
        }
        Experiment::Convergence(c) => {
            let suite = run_suite(c, seeds)?;
            let mut rows = Vec::new();
            let mut chart = Chart::new("Suboptimality under sparse SGD", "step", "f(w) - f*");
            chart.log_x = true;
            chart.log_y = true;
            for p in &suite {
                let n = p.median_with_feedback.len().min(p.median_without_feedback.len());
                let steps = log_spaced_steps(n, 200);
                for &t in &steps {
                    rows.push(format!("{},{},{},{}", p.h_min, t, p.median_with_feedback[t - 1], p.median_without_feedback[t - 1]));
                }
                chart = chart
                    .series(&format!("feedback h_min={}", p.h_min), steps.iter().map(|&t| (t as f64, p.median_with_feedback[t - 1])).collect())
                    .series(&format!("no feedback h_min={}", p.h_min), steps.iter().map(|&t| (t as f64, p.median_without_feedback[t - 1])).collect());
                lines.push(format!(
                    "h_min {}: slope {:.3} with feedback; final loss ratio without/with {:.2}",
                    p.h_min, p.median_slope, p.feedback_gain
                ));
            }
            let sl = seed_list(seeds);
            sink.csv("convergence.csv", &sl, "h_min,step,median_loss_feedback,median_loss_no_feedback", &rows)?;
            sink.svg("plots/convergence.svg", &sl, &chart)?;
            let problems: Vec<Value> = suite
                .iter()
                .map(|p| {
                    json!({
                        "h_min": p.h_min,
                        "slopes": p.slopes,
                        "median_slope": p.median_slope,
                        "final_with_feedback": p.final_with_feedback,
                        "final_without_feedback": p.final_without_feedback,
                        "feedback_gain": p.feedback_gain,
                    })
                })
                .collect();
            (json!({ "kind": "convergence", "config": c, "problems": problems }), None)
        }
        Experiment::SparsitySweep(sw) => {
            let mut rows = Vec::new();
            let mut acc_pts = Vec::new();
            let mut mb_pts = Vec::new();
            let mut table = Vec::new();
            let b = &sw.base;
            for &s in &sw.grid {
                let cfg = FlConfig { sparsity: s, ..b.clone() };
                cfg.validate()?;
                let results = run_trials(&cfg, seeds)?;
                failed_seeds.extend(failed(&results, seeds));
                let acc = finals(&results, |r| r.global_accuracy);
                let up: Vec<f64> = results.iter().map(mean_upload).collect();
                let analytic = reference_breakdown_for(sw.accounting_d, s, b.n_clients as u64, b.he.params.slot_model);
                rows.push(format!(
                    "{s},{},{},{},{},{}",
                    median(&acc),
                    mean(&acc),
                    std_dev(&acc),
                    median(&up),
                    analytic.per_client_mb
                ));
                acc_pts.push((s, median(&acc)));
                mb_pts.push((s, analytic.per_client_mb));
                lines.push(format!("s = {s}: accuracy {:.4}, measured upload {:.0} B, analytic {:.3} MB/client", median(&acc), median(&up), analytic.per_client_mb));
                table.push(json!({
                    "sparsity": s,
                    "final_accuracy": spread(&acc),
                    "bytes_up_per_client": spread(&up),
                    "analytic_mb_per_client": analytic.per_client_mb,
                }));
            }
            let sl = seed_list(seeds);
            sink.csv(
                "sweep.csv",
                &sl,
                "sparsity,median_final_accuracy,mean_final_accuracy,std_final_accuracy,median_bytes_up_per_client,analytic_mb_per_client",
                &rows,
            )?;
            sink.svg("plots/accuracy_vs_sparsity.svg", &sl, &Chart::new("Accuracy vs sparsity", "sparsity", "median final accuracy").series("accuracy", acc_pts))?;
            sink.svg(
                "plots/mb_vs_sparsity.svg",
                &sl,
                &Chart::new("Upload per client vs sparsity", "sparsity", "MB per client").series("analytic", mb_pts),
            )?;
            failed_seeds.sort_unstable();
            failed_seeds.dedup();
            (
                json!({ "kind": "sparsity_sweep", "security": b.he.params.security, "rows": table, "failed_seeds": failed_seeds }),
                Some(b.he.params.security),
            )
        }
    };
    if let Some(sec) = security {
        lines.insert(0, format!("HE parameters: {sec}"));
    }
    if m.experiment.is_statistical() {
        let mut body = summary.clone();
        if let Value::Object(map) = &mut body {
            map.insert("seeds".into(), json!(seeds));
        }
        sink.json("summary.json", json!(seeds), body)?;
    }
    lines.push(format!("output: {}", sink.dir.display()));
    Ok(RunOutcome { dir: sink.dir, written: sink.written, kept: sink.kept, summary, security, failed_seeds, lines })
}

fn write_trial(sink: &mut Sink, cfg: &FlConfig, r: &ExperimentResult, seed: u64) -> Result<()> {
    let f = r.final_report();
    sink.json(
        &format!("trial_seed{seed}.json"),
        json!(seed),
        json!({
            "security": cfg.he.params.security,
            "config": FlConfig { seed, ..cfg.clone() },
            "final_accuracy": f.global_accuracy,
            "final_f1": f.f1,
            "final_loss": f.loss,
            "epsilon": f.epsilon_cumulative,
            "all_rounds_failed": r.all_rounds_failed(),
            "rounds": r.reports,
        }),
    )?;
    let rows: Vec<String> = r.reports.iter().map(round_csv_row).collect();
    sink.csv(&format!("rounds/seed{seed}.csv"), &seed.to_string(), ROUND_CSV_HEADER, &rows)
}

/// About `count` distinct steps in 1..=n, log-spaced, always including n.
fn log_spaced_steps(n: usize, count: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut v: Vec<usize> = (0..count)
        .map(|i| ((n as f64).ln() * i as f64 / (count - 1) as f64).exp().round() as usize)
        .map(|t| t.clamp(1, n))
        .collect();
    v.push(n);
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TTestReport {
    pub seeds: Vec<u64>,
    pub a_hash: Option<String>,
    pub b_hash: Option<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub test: TTest,
}

fn summary_accuracy(v: &Value, label: &str) -> Result<(Vec<u64>, Vec<f64>)> {
    let seeds: Vec<u64> = serde_json::from_value(v["seeds"].clone())
        .map_err(|e| Error::config(format!("{label}: field `seeds`: {e}")))?;
    let acc: Vec<f64> = serde_json::from_value(v["final_accuracy"]["per_seed"].clone())
        .map_err(|e| Error::config(format!("{label}: field `final_accuracy.per_seed`: {e}")))?;
    if seeds.len() != acc.len() {
        return Err(Error::config(format!("{label}: {} seeds but {} accuracies", seeds.len(), acc.len())));
    }
    Ok((seeds, acc))
}

/// Paired two-sided t-test on the per-seed final accuracies of two
/// `fl_run` summaries. The seed lists must be identical.
pub fn ttest_summaries(a: &Value, b: &Value) -> Result<TTestReport> {
    let (sa, xa) = summary_accuracy(a, "first summary")?;
    let (sb, xb) = summary_accuracy(b, "second summary")?;
    if sa != sb {
        return Err(Error::config(format!("seed lists differ: {sa:?} vs {sb:?}")));
    }
    let test = paired_ttest(&xa, &xb)?;
    let hash = |v: &Value| v["manifest_hash"].as_str().map(String::from);
    Ok(TTestReport { seeds: sa, a_hash: hash(a), b_hash: hash(b), a: xa, b: xb, test })
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))
}

/// Compact multi-line rendering of a t-test for the terminal.
pub fn describe_ttest(r: &TTestReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "paired t-test over seeds {:?}", r.seeds);
    let _ = writeln!(s, "mean difference {:.6}", r.test.mean_difference);
    let _ = write!(s, "t = {}, dof = {}, p = {:.6}", r.test.t, r.test.dof, r.test.p_value);
    s
}
