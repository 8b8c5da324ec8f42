//! Command-line front end. Every run can emit a structured report, an aligned
//! text table and a manifest from which the run can be replayed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::constructor::{self, ConstructionConfig, ConstructionReport, MergeTree, SelectionMetric};
use crate::data_io::{self, CsvSchema, Grid, SyntheticTaskSpec, Teacher};
use crate::error::{Error, Result};
use crate::linear_solver;
use crate::model::{Component, Registry, Split};
use crate::scaled_activation::GammaRule;
use crate::theory_lab::{self, BoundReport, TrialSpec};
use crate::trainer::TrainConfig;

/// Environment variable naming the default report directory.
pub const REPORT_DIR_ENV: &str = "COMPNET_REPORT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "compnet", version, about = "Build and analyse composite networks of pre-trained components")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Write the structured report here, plus `.txt` and `.manifest.json` siblings.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build a composite network from a component pool.
    Compose(ComposeArgs),
    /// Monte Carlo check of an improvement guarantee.
    Verify(VerifyArgs),
    /// Closed-form optimal linear combination of component outputs.
    SolveLinear(SolveArgs),
    /// Generate a synthetic task with pre-trained components.
    Synth(SynthArgs),
    /// Fill missing grid cells or downscale a 6-hourly series to hourly.
    Impute(ImputeArgs),
    /// Re-run a manifest and compare against its report.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Dbcn,
    Bbcn,
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Chain,
    Bbcn,
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeArgs {
    #[arg(value_enum)]
    pub strategy: Strategy,
    /// Component pool (JSON `{"components": [...]}`).
    #[arg(long)]
    pub pool: PathBuf,
    /// Dataset CSV; columns starting with `y` are labels, `split` marks train/test.
    #[arg(long)]
    pub data: PathBuf,
    /// Pruning threshold; `inf` keeps only the base network.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, value_delimiter = ',', default_value = "linear,sl")]
    pub activations: Vec<Activation>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leading base components merged into the balanced tree.
    #[arg(long)]
    pub k0: Option<usize>,
    #[arg(long, value_enum, default_value_t = Selection::Train)]
    pub selection: Selection,
    /// Merge schedule for the exhaustive search.
    #[arg(long, value_enum, default_value_t = Schedule::Bbcn)]
    pub schedule: Schedule,
    /// Upper limit on exhaustive candidates.
    #[arg(long, default_value_t = constructor::CANDIDATE_BUDGET)]
    pub budget: usize,
    /// Use the pool in file order instead of ordering by kind, role and loss.
    #[arg(long)]
    pub keep_order: bool,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Constant learning rate instead of cosine decay.
    #[arg(long)]
    pub no_decay: bool,
    /// Write each front-runner's training history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Write the final network and its components as JSON.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Claim {
    Orthogonality,
    Theorem1,
    Prop1,
    Theorem2,
    ScaledActivation,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub claim: Claim,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise separating random components from the labels.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Layer count for `theorem2`.
    #[arg(long, default_value_t = 3)]
    pub h: usize,
    /// Activation for `scaled-activation`.
    #[arg(long, default_value = "logistic")]
    pub activation: Activation,
    /// Target accuracy for `scaled-activation`.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Use the fixed half-width 1e-5·ε instead of the general procedure.
    #[arg(long)]
    pub example_gamma: bool,
    /// Label standard deviation for `scaled-activation`.
    #[arg(long, default_value_t = 200.0)]
    pub label_scale: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    /// CSV with one column per component output and a label column.
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long, default_value = "y")]
    pub label: String,
    /// Ridge added to the Gram diagonal.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// TOML task description; replaces the individual task flags.
    #[arg(long, conflicts_with_all = ["n", "d", "m", "k", "teacher", "noise", "quality", "hidden", "train_fraction"])]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Component count; qualities default to 0.2, 0.3, ...
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value = "mlp-teacher")]
    pub teacher: String,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, value_delimiter = ',')]
    pub quality: Option<Vec<f64>>,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Overrides the seed in `--config`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for `data.csv`, `pool.json` and `task.toml`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("input").required(true).args(["grid", "series"])))]
pub struct ImputeArgs {
    /// Header-less CSV grid; empty or `NA` cells are missing.
    #[arg(long, conflicts_with = "series")]
    pub grid: Option<PathBuf>,
    /// One 6-hourly value per line.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Neighbours averaged per missing cell.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub report: PathBuf,
    pub started_at: String,
    pub finished_at: String,
}

/// Result of one command before it is written anywhere.
pub struct Outcome {
    pub command: String,
    pub seed: Option<u64>,
    pub payload: Value,
    pub text: String,
    pub inputs: Vec<PathBuf>,
}

/// The pool file keeps declaration order, unlike a registry.
#[derive(Serialize, Deserialize)]
struct PoolFile {
    components: Vec<Component>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn read_pool(path: &Path) -> Result<Vec<Component>> {
    let pool: PoolFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for c in &pool.components {
        c.validate()?;
    }
    // rejects duplicate ids
    Registry::from_components(pool.components.clone())?;
    Ok(pool.components)
}

fn write_pool(path: &Path, components: Vec<Component>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(&PoolFile { components })? + "\n")?;
    Ok(())
}

fn rmse(v: Option<f64>) -> String {
    v.map_or("-".into(), |l| format!("{:.6}", l.sqrt()))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = String>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            s.push_str(&c);
            s.extend(std::iter::repeat_n(' ', pad));
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().map(|h| h.to_string()));
    for r in rows {
        out += &line(&mut r.iter().cloned());
    }
    out
}

fn compose_text(r: &ConstructionReport) -> String {
    let mut rows = Vec::new();
    for s in &r.steps {
        for (i, c) in s.candidates.iter().enumerate() {
            rows.push(vec![
                s.name.clone(),
                c.description.clone(),
                rmse(c.train_loss),
                rmse(c.test_loss),
                format!("{}/{}", c.trainable, c.total),
                if i == s.front_runner { "*".into() } else { String::new() },
            ]);
        }
    }
    let mut out = format!("strategy {}  order {}  schedule {}\n", r.strategy, r.order.join(","), r.schedule);
    out += &table(&["step", "candidate", "train RMSE", "test RMSE", "trainable/total", "front-runner"], &rows);
    let _ = writeln!(
        out,
        "final {} (depth {} of {})  train RMSE {}  test RMSE {}",
        r.final_description,
        r.depth,
        r.pruned_from,
        rmse(Some(r.final_train_loss)),
        rmse(r.final_test_loss)
    );
    out
}

fn bound_text(r: &BoundReport) -> String {
    let mut out = table(
        &["claim", "N", "K", "trials", "empirical_rate", "bound", "ci95", "satisfied"],
        &[vec![
            r.claim.clone(),
            r.n.to_string(),
            r.k.to_string(),
            r.trials.to_string(),
            format!("{:.4}", r.empirical_rate),
            format!("{:.4}", r.paper_bound),
            format!("[{:.4}, {:.4}]", r.ci95[0], r.ci95[1]),
            r.satisfied.to_string(),
        ]],
    );
    if let (Some(c), Some(eta)) = (r.estimated_c, r.eta) {
        let _ = writeln!(out, "estimated c = {c:.4}, eta = {eta:.6} rad");
    }
    if r.large_n_required {
        out += "large N required: the guarantee is stated for large N\n";
    }
    if r.rejected > 0 {
        let _ = writeln!(out, "{} draws rejected for violating the assumptions", r.rejected);
    }
    out
}

fn compose(a: &ComposeArgs) -> Result<Outcome> {
    let pool = read_pool(&a.pool)?;
    let data = data_io::load_csv(&a.data, None)?;
    let pool = if a.keep_order {
        pool
    } else {
        let losses = constructor::component_losses(&pool, &data, Split::Train)?;
        constructor::order_components(&pool, &losses)
    };
    let cfg = ConstructionConfig {
        activations: a.activations.clone(),
        delta: a.delta,
        k0: a.k0,
        train: TrainConfig {
            learning_rate: a.lr,
            batch_size: a.batch,
            max_epochs: a.epochs,
            seed: a.seed,
            early_stop_patience: a.patience,
            grad_clip: a.grad_clip,
            momentum: a.momentum,
            cosine_decay: !a.no_decay,
        },
        selection: match a.selection {
            Selection::Train => SelectionMetric::TrainLoss,
            Selection::Validation => SelectionMetric::ValidationLoss,
        },
        candidate_budget: a.budget,
    };
    let report = match a.strategy {
        Strategy::Dbcn => constructor::dbcn(&pool, &data, &cfg)?,
        Strategy::Bbcn => constructor::bbcn(&pool, &data, &cfg)?,
        Strategy::Exhaustive => {
            let leading = pool.iter().take_while(|c| c.role == crate::model::Role::Base).count();
            let tree = match a.schedule {
                Schedule::Chain => MergeTree::chain(pool.len()),
                Schedule::Bbcn => MergeTree::bbcn_shape(pool.len(), a.k0.unwrap_or(leading)),
            };
            constructor::exhaustive(&pool, &data, &cfg, &tree)?
        }
    };
    if let Some(p) = &a.history {
        let mut w = csv::Writer::from_path(p).map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
        let mut rows = vec![["step".to_string(), "epoch".into(), "train_loss".into(), "test_loss".into()]];
        for s in &report.steps {
            for h in &s.history {
                rows.push([
                    s.name.clone(),
                    h.epoch.to_string(),
                    h.train_loss.to_string(),
                    h.test_loss.map_or(String::new(), |v| v.to_string()),
                ]);
            }
        }
        for r in rows {
            w.write_record(&r).map_err(|e| Error::Csv {
                line: 0,
                message: e.to_string(),
            })?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.save_model {
        std::fs::write(p, serde_json::to_string_pretty(&report.final_model)? + "\n")?;
    }
    Ok(Outcome {
        command: format!("compose {}", serde_json::to_value(a.strategy)?.as_str().unwrap_or("")),
        seed: Some(a.seed),
        text: compose_text(&report),
        payload: serde_json::to_value(&report)?,
        inputs: vec![a.pool.clone(), a.data.clone()],
    })
}

fn verify(a: &VerifyArgs) -> Result<Outcome> {
    let spec = TrialSpec {
        n: a.n,
        k: a.k,
        trials: a.trials,
        seed: a.seed,
        component_noise: a.noise,
        eta_probe: Vec::new(),
    };
    let (payload, text) = match a.claim {
        Claim::ScaledActivation => {
            let rule = if a.example_gamma {
                GammaRule::Fixed(1e-5 * a.epsilon)
            } else {
                GammaRule::Procedure
            };
            let r = theory_lab::verify_scaled_activation(&spec, a.activation, a.epsilon, rule, a.label_scale)?;
            let text = table(
                &["activation", "epsilon", "trials", "max_error", "error_bound", "margin ok/confirmed", "pass"],
                &[vec![
                    r.activation.label(),
                    format!("{}", r.epsilon),
                    r.trials.to_string(),
                    format!("{:.3e}", r.max_error),
                    format!("{:.3e}", r.max_bound),
                    format!("{}/{}", r.margin_approved, r.margin_confirmed),
                    r.satisfied.to_string(),
                ]],
            );
            (serde_json::to_value(&r)?, text)
        }
        claim => {
            let r = match claim {
                Claim::Orthogonality => theory_lab::verify_orthogonality(&spec)?,
                Claim::Theorem1 => theory_lab::verify_strict_improvement(&spec)?,
                Claim::Prop1 => theory_lab::verify_add_width(&spec)?,
                _ => theory_lab::verify_depth_compounding(&spec, a.h)?,
            };
            (serde_json::to_value(&r)?, bound_text(&r))
        }
    };
    Ok(Outcome {
        command: format!("verify {}", serde_json::to_value(a.claim)?.as_str().unwrap_or("")),
        seed: Some(a.seed),
        payload,
        text,
        inputs: Vec::new(),
    })
}

fn solve_linear(a: &SolveArgs) -> Result<Outcome> {
    let (names, outputs, labels) = data_io::load_component_outputs(&a.outputs, &a.label)?;
    let fit = linear_solver::fit(&outputs, &labels, a.ridge)?;
    let mut rows = vec![vec![
        "bias".to_string(),
        format!("{:.9}", fit.theta[0]),
        format!("{:.9}", fit.component_losses[0]),
    ]];
    for (i, n) in names.iter().enumerate() {
        rows.push(vec![
            n.clone(),
            format!("{:.9}", fit.theta[i + 1]),
            format!("{:.9}", fit.component_losses[i + 1]),
        ]);
    }
    let mut text = table(&["term", "theta", "alone loss"], &rows);
    let _ = writeln!(text, "composite loss {:.9}", fit.composite_loss);
    let a_ = &fit.assumptions;
    let _ = writeln!(
        text,
        "independence {}  no perfect component {}  K below 2 sqrt(N) - 1 {}",
        a_.a1.holds, a_.a2.holds, a_.a4.holds
    );
    Ok(Outcome {
        command: "solve-linear".into(),
        seed: None,
        payload: json!({ "components": names, "fit": fit }),
        text,
        inputs: vec![a.outputs.clone()],
    })
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let mut spec = match &a.config {
        Some(p) => SyntheticTaskSpec::load(p)?,
        None => SyntheticTaskSpec {
            n: a.n,
            d: a.d,
            m: a.m,
            true_function: a.teacher.parse::<Teacher>()?,
            noise_sd: a.noise,
            component_quality: a
                .quality
                .clone()
                .unwrap_or_else(|| (0..a.k).map(|j| (2 + j) as f64 / 10.0).collect()),
            seed: 0,
            train_fraction: a.train_fraction,
            hidden: a.hidden,
        },
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let task = data_io::generate_synthetic(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    let data_path = a.out.join("data.csv");
    let pool_path = a.out.join("pool.json");
    let spec_path = a.out.join("task.toml");
    data_io::save_csv(&data_path, &task.dataset, &CsvSchema::numbered(spec.d, spec.m))?;
    let comps: Vec<Component> = (1..=spec.component_quality.len())
        .map(|j| task.components.get(&format!("f{j}")).cloned())
        .collect::<Result<_>>()?;
    let losses = constructor::component_losses(&comps, &task.dataset, Split::All)?;
    write_pool(&pool_path, comps)?;
    std::fs::write(&spec_path, spec.to_toml()?)?;
    let files = [&data_path, &pool_path, &spec_path]
        .iter()
        .map(|p| Ok(InputDigest { path: (*p).clone(), sha256: sha256_file(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let mut text = table(
        &["component", "quality", "loss"],
        &losses
            .iter()
            .zip(&spec.component_quality)
            .enumerate()
            .map(|(j, (l, q))| vec![format!("f{}", j + 1), q.to_string(), format!("{:.6}", l.unwrap_or(f64::NAN))])
            .collect::<Vec<_>>(),
    );
    for f in &files {
        let _ = writeln!(text, "wrote {}  sha256 {}", f.path.display(), f.sha256);
    }
    Ok(Outcome {
        command: "synth".into(),
        seed: Some(spec.seed),
        payload: json!({ "spec": spec, "component_losses": losses, "files": files }),
        text,
        inputs: a.config.iter().cloned().collect(),
    })
}

fn read_grid(path: &Path) -> Result<Grid> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    let mut cells = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            line: i + 1,
            message: e.to_string(),
        })?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Csv {
                line: i + 1,
                message: format!("expected {} cells, found {}", cols.unwrap_or(0), rec.len()),
            });
        }
        for cell in rec.iter() {
            cells.push(match cell {
                "" | "NA" | "na" | "NaN" | "nan" => None,
                t => Some(t.parse::<f64>().map_err(|_| Error::Csv {
                    line: i + 1,
                    message: format!("cannot parse `{t}`"),
                })?),
            });
        }
        rows += 1;
    }
    Grid::new(rows, cols.unwrap_or(0), cells)
}

fn impute(a: &ImputeArgs) -> Result<Outcome> {
    let (payload, text, input) = if let Some(g) = &a.grid {
        let grid = read_grid(g)?;
        let missing = grid.cells.len() - grid.known();
        let filled = data_io::knn_impute(&grid, a.k)?;
        let body: String = (0..filled.rows())
            .map(|r| filled.row(r).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        std::fs::write(&a.out, body)?;
        (
            json!({ "rows": grid.rows, "cols": grid.cols, "imputed": missing, "k": a.k, "output": sha256_file(&a.out)? }),
            format!("filled {missing} of {} cells with k = {}; wrote {}\n", grid.cells.len(), a.k, a.out.display()),
            g.clone(),
        )
    } else {
        let s = a.series.as_ref().expect("clap requires grid or series");
        let text = std::fs::read_to_string(s)?;
        let ticks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|_| Error::Csv {
                    line: i + 1,
                    message: format!("cannot parse `{}`", l.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let hourly = data_io::interpolate_time(&ticks)?;
        std::fs::write(&a.out, hourly.iter().map(|v| format!("{v}\n")).collect::<String>())?;
        (
            json!({ "ticks": ticks.len(), "hourly": hourly.len(), "output": sha256_file(&a.out)? }),
            format!("{} ticks -> {} hourly values; wrote {}\n", ticks.len(), hourly.len(), a.out.display()),
            s.clone(),
        )
    };
    Ok(Outcome {
        command: "impute".into(),
        seed: None,
        payload,
        text,
        inputs: vec![input],
    })
}

/// Report locations: the structured report and its two siblings.
pub fn report_paths(report: &Path) -> (PathBuf, PathBuf) {
    let stem = report.with_extension("");
    let text = stem.with_extension("txt");
    let mut manifest = stem.into_os_string();
    manifest.push(".manifest.json");
    (text, PathBuf::from(manifest))
}

fn report_value(o: &Outcome) -> Value {
    json!({
        "command": o.command,
        "version": env!("CARGO_PKG_VERSION"),
        "payload": o.payload,
    })
}

fn write_report(path: &Path, o: &Outcome, argv: &[String], config: Value, started: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&report_value(o))? + "\n")?;
    let (text_path, manifest_path) = report_paths(path);
    std::fs::write(&text_path, &o.text)?;
    let inputs = o
        .inputs
        .iter()
        .map(|p| Ok(InputDigest { path: p.clone(), sha256: sha256_file(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        subcommand: o.command.clone(),
        argv: argv.to_vec(),
        config,
        seed: o.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        inputs,
        report: path.to_path_buf(),
        started_at: started,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn default_report(command: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(REPORT_DIR_ENV)?;
    Some(PathBuf::from(dir).join(format!("{}.json", command.replace(' ', "-"))))
}

fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Compose(a) => compose(a),
        Command::Verify(a) => verify(a),
        Command::SolveLinear(a) => solve_linear(a),
        Command::Synth(a) => synth(a),
        Command::Impute(a) => impute(a),
        Command::Replay(_) => Err(Error::InvalidInput("replay cannot replay itself".into())),
    }
}

fn replay(manifest_path: &Path) -> Result<Outcome> {
    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Error::InvalidInput(format!(
                "input {} changed since the run (sha256 {} != {})",
                input.path.display(),
                now,
                input.sha256
            )));
        }
    }
    let argv = std::iter::once("compnet".to_string()).chain(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::InvalidInput(format!("manifest argv: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::InvalidInput("manifest records a replay".into()));
    }
    let outcome = execute(&cli.command)?;
    let original: Value = serde_json::from_str(&std::fs::read_to_string(&manifest.report)?)?;
    let fresh = report_value(&outcome);
    let fields = count_numbers(&fresh["payload"]);
    if let Some(path) = first_difference(&original["payload"], &fresh["payload"], "payload") {
        return Err(Error::InvalidInput(format!(
            "replay of {} differs from {} at {path}",
            manifest.subcommand,
            manifest.report.display()
        )));
    }
    Ok(Outcome {
        command: "replay".into(),
        seed: manifest.seed,
        text: format!(
            "{}\nreplay of `{}` reproduced all {fields} numeric fields of {}\n",
            outcome.text,
            manifest.subcommand,
            manifest.report.display()
        ),
        payload: json!({ "replayed": manifest.subcommand, "numeric_fields": fields, "identical": true }),
        inputs: vec![manifest_path.to_path_buf()],
    })
}

/// JSON path of the first differing value, if any.
fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() {
                return Some(path.to_string());
            }
            x.iter().find_map(|(k, v)| match y.get(k) {
                Some(w) => first_difference(v, w, &format!("{path}.{k}")),
                None => Some(format!("{path}.{k}")),
            })
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Some(path.to_string());
            }
            x.iter()
                .zip(y)
                .enumerate()
                .find_map(|(i, (v, w))| first_difference(v, w, &format!("{path}[{i}]")))
        }
        _ => (a != b).then(|| format!("{path} ({a} vs {b})")),
    }
}

fn count_numbers(v: &Value) -> usize {
    match v {
        Value::Number(_) => 1,
        Value::Array(a) => a.iter().map(count_numbers).sum(),
        Value::Object(o) => o.values().map(count_numbers).sum(),
        _ => 0,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs the binary on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return EXIT_USAGE;
        }
        if rayon::ThreadPoolBuilder::new().num_threads(j).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
    let started = chrono::Utc::now().to_rfc3339();
    let outcome = match &cli.command {
        Command::Replay(r) => replay(&r.manifest),
        cmd => execute(cmd),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    print!("{}", outcome.text);
    let report = cli.report.clone().or_else(|| match cli.command {
        Command::Replay(_) => None,
        _ => default_report(&outcome.command),
    });
    if let Some(path) = report {
        let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
        let config = serde_json::to_value(&cli.command).unwrap_or(Value::Null);
        if let Err(e) = write_report(&path, &outcome, &argv, config, started) {
            eprintln!("error: writing report {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn report_siblings() {
        let (t, m) = report_paths(Path::new("out/run.json"));
        assert_eq!(t, PathBuf::from("out/run.txt"));
        assert_eq!(m, PathBuf::from("out/run.manifest.json"));
    }

    #[test]
    fn aligned_table() {
        let t = table(&["a", "bb"], &[vec!["xxx".into(), "y".into()]]);
        assert_eq!(t, "a    bb\nxxx  y\n");
    }
}
