use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use stagefair::dataset::{
    atomic_write, ingest as read_table, load_panel, load_population, save_panel, save_population,
    split_stage_covariates, train_test_split, Population, Preprocessor, Schema, StagePanel, StageSplit,
};
use stagefair::eval::{counterfactual_evaluate, evaluate as evaluate_policy, pareto_sweep, write_pareto_csv, Trial};
use stagefair::fairmodel::{policy_json, train as train_policy, train_sample, FinalSample, PolicyParams};
use stagefair::oracle::enumerate_optimal;
use stagefair::propensity::{
    compute_ipw_weights, fit_propensities, no_ipw_weights, positivity_report, true_propensity_weights, WeightSet,
};
use stagefair::synthgen::{
    fit_semisynthetic_models, gen_semisynthetic, gen_synthetic, logging_policy_stats, SyntheticDraw, SyntheticParams,
};
use stagefair::{Error, Result};

use crate::config::{RunConfig, WeightChoice};

/// Independent stream seed for `(master, tag)`.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master.wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Ctx {
    pub cfg: RunConfig,
    config_path: Option<PathBuf>,
    overrides: Vec<(String, String)>,
    artifacts: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
    started: Instant,
}

impl Ctx {
    pub fn new(cfg: RunConfig, config_path: Option<PathBuf>, overrides: Vec<(String, String)>) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", cfg.out_dir.display())))
        })?;
        Ok(Self {
            cfg,
            config_path,
            overrides,
            artifacts: Vec::new(),
            seeds: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn seed(&mut self, name: &str, value: u64) -> u64 {
        self.seeds.insert(name.to_string(), value);
        value
    }

    /// An input path from config, or the default name inside `out_dir`.
    /// Fails before any work if the file is missing.
    fn input(&self, configured: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = configured.clone().unwrap_or_else(|| self.out(default));
        if !p.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input file {} does not exist", p.display()),
            )));
        }
        Ok(p)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.out(name);
        atomic_write(&path, serde_json::to_string_pretty(value)?.as_bytes())?;
        self.artifacts.push(path);
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out(name);
        atomic_write(&path, bytes)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn save_panel(&mut self, name: &str, panel: &StagePanel, meta: Value) -> Result<()> {
        let path = self.out(name);
        save_panel(&path, panel, meta)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn save_population(&mut self, name: &str, pop: &Population, meta: Value) -> Result<()> {
        let path = self.out(name);
        save_population(&path, pop, meta)?;
        self.artifacts.push(path);
        Ok(())
    }

    /// Writes `manifest_<command>.json`: resolved config and its hash, the
    /// overrides, every seed drawn and the artifacts written.
    pub fn finish(mut self, command: &str) -> Result<()> {
        let resolved = toml::to_string(&self.cfg).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let hash: String = Sha256::digest(resolved.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_file": self.config_path,
            "config_sha256": hash,
            "overrides": self.overrides.iter().map(|(k, v)| json!({"key": k, "value": v})).collect::<Vec<_>>(),
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "elapsed_secs": self.started.elapsed().as_secs_f64(),
            "config": self.cfg,
        });
        let name = format!("manifest_{command}.json");
        let path = self.out(&name);
        atomic_write(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        self.artifacts.push(path);
        Ok(())
    }
}

fn weights_for(panel: &StagePanel, cfg: &RunConfig) -> Result<WeightSet> {
    match cfg.propensity.weights {
        WeightChoice::Estimated => {
            let models = fit_propensities(panel, &cfg.propensity.fit)?;
            compute_ipw_weights(panel, &models, cfg.propensity.clip_floor)
        }
        WeightChoice::True => true_propensity_weights(panel),
        WeightChoice::None => Ok(no_ipw_weights(panel)),
    }
}

fn synth(params: &SyntheticParams, n: usize, seed: u64) -> Result<SyntheticDraw> {
    gen_synthetic(&SyntheticParams {
        n,
        seed,
        ..params.clone()
    })
}

pub fn generate(ctx: &mut Ctx) -> Result<()> {
    let params = ctx.cfg.synthetic.clone();
    let train_seed = ctx.seed("synthetic", params.seed);
    let test_seed = ctx.seed("synthetic_test", derive_seed(params.seed, 1));
    let draw = synth(&params, params.n, train_seed)?;
    let test = synth(&params, ctx.cfg.evaluate.n_test, test_seed)?.population;
    let stats = logging_policy_stats(&draw.panel, &draw.population)?;
    let meta = json!({"generator": "synthetic", "params": params});
    ctx.save_panel("panel.csv", &draw.panel, meta.clone())?;
    ctx.save_population("population.csv", &draw.population, meta.clone())?;
    ctx.save_population("test.csv", &test, json!({"generator": "synthetic", "seed": test_seed}))?;
    ctx.write_json("logging.json", &stats)?;
    println!(
        "generated {} candidates ({} reach the final stage); logging precision {:.4}, EO unfairness {:.4}",
        draw.panel.len(),
        stats.final_count,
        stats.precision,
        stats.unfairness_eo
    );
    Ok(())
}

pub fn ingest(ctx: &mut Ctx) -> Result<()> {
    let csv_path = ctx.input(&ctx.cfg.data.csv, "data.csv")?;
    let schema_path = ctx.input(&ctx.cfg.data.schema, "schema.toml")?;
    let schema = Schema::load(&schema_path)?;
    let table = read_table(&csv_path, &schema)?;
    let split_seed = ctx.seed("split", ctx.cfg.seed);
    let (train_rows, test_rows) = train_test_split(table.len(), ctx.cfg.ingest.train_fraction, split_seed)?;
    // The split is already shuffled, so a prefix is a random subsample.
    let cap = ctx.cfg.ingest.n_train.unwrap_or(train_rows.len()).min(train_rows.len());
    let sim_rows = &train_rows[..cap];
    let features = Preprocessor::fit(&table, Some(&train_rows))?.transform(&table)?;
    let split = match &schema.stage_assignment {
        Some(a) => StageSplit::Explicit(a.clone()),
        None => StageSplit::Random {
            n_stages: ctx.cfg.ingest.n_stages,
            seed: ctx.seed("stage_split", derive_seed(ctx.cfg.seed, 2)),
        },
    };
    let stages = split_stage_covariates(&features, &split)?;
    let pop = features.to_population(&stages)?;
    let train_pop = pop.subset(sim_rows);
    let test_pop = pop.subset(&test_rows);
    // The generator's outcome and group models see the whole source table.
    let models = fit_semisynthetic_models(&pop, &ctx.cfg.propensity.fit)?;
    let params = ctx.cfg.ingest.semisynthetic.clone();
    ctx.seed("semisynthetic", params.seed);
    let draw = gen_semisynthetic(&train_pop, &models, &params)?;
    let stats = logging_policy_stats(&draw.panel, &draw.population)?;
    let meta = json!({"generator": "semisynthetic", "source": csv_path, "params": params, "stages": split});
    ctx.save_panel("panel.csv", &draw.panel, meta.clone())?;
    ctx.save_population("population.csv", &train_pop, meta.clone())?;
    ctx.save_population("test.csv", &test_pop, meta)?;
    ctx.write_json("semisynthetic_models.json", &models)?;
    ctx.write_json("logging.json", &stats)?;
    println!(
        "ingested {} rows ({} simulated for training, {} test); {} reach the final stage",
        table.len(),
        sim_rows.len(),
        test_rows.len(),
        stats.final_count
    );
    Ok(())
}

pub fn fit_propensity(ctx: &mut Ctx) -> Result<()> {
    let path = ctx.input(&ctx.cfg.data.panel, "panel.csv")?;
    let (panel, _) = load_panel(&path)?;
    let models = fit_propensities(&panel, &ctx.cfg.propensity.fit)?;
    let weights = compute_ipw_weights(&panel, &models, ctx.cfg.propensity.clip_floor)?;
    let positivity = positivity_report(&models, &panel, ctx.cfg.propensity.positivity_threshold)?;
    if !positivity.flagged.is_empty() {
        log::warn!(
            "{} candidates have a stage propensity below {}",
            positivity.flagged.len(),
            positivity.threshold
        );
    }
    let mut buf = Vec::new();
    weights.write_csv(&mut buf)?;
    ctx.write_bytes("weights.csv", &buf)?;
    ctx.write_json("propensity.json", &json!({"models": models, "positivity": positivity}))?;
    let max_beta = weights.beta.iter().flatten().fold(0.0f64, |m, b| m.max(*b));
    println!(
        "fitted {} stage models; {} final-stage weights, largest {:.3}",
        models.len(),
        weights.len(),
        max_beta
    );
    Ok(())
}

pub fn train(ctx: &mut Ctx) -> Result<()> {
    let path = ctx.input(&ctx.cfg.data.panel, "panel.csv")?;
    let (panel, _) = load_panel(&path)?;
    let weights = weights_for(&panel, &ctx.cfg)?;
    ctx.seed("train", ctx.cfg.train.seed);
    let (policy, report) = train_policy(&panel, &weights, &ctx.cfg.spec, &ctx.cfg.train)?;
    let out = policy_json(&policy, panel.column_names(), &ctx.cfg.spec, &report)?;
    ctx.write_json("policy.json", &out)?;
    println!(
        "trained on {} final-stage rows: precision {:.4}, unfairness {:.4}, status {:?}, {} iterations",
        weights.len(),
        report.ratio,
        report.strict.unfairness,
        report.status,
        report.iterations.len()
    );
    Ok(())
}

fn read_policy(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let v: Value = serde_json::from_str(&text)?;
    let raw = v.get("raw").cloned().unwrap_or(v);
    Ok(serde_json::from_value(raw)?)
}

pub fn evaluate(ctx: &mut Ctx) -> Result<()> {
    let policy_path = ctx.input(&ctx.cfg.data.policy, "policy.json")?;
    let test_path = ctx.input(&ctx.cfg.data.test, "test.csv")?;
    let policy = read_policy(&policy_path)?;
    let (test, _) = load_population(&test_path)?;
    let seed = ctx.seed("repair", ctx.cfg.seed);
    let report = evaluate_policy(&policy, &test, &ctx.cfg.spec, seed)?;
    // The logged panel is optional here; when present it gives an off-policy estimate.
    let panel_path = ctx.cfg.data.panel.clone().unwrap_or_else(|| ctx.out("panel.csv"));
    let counterfactual = if panel_path.is_file() {
        let (panel, _) = load_panel(&panel_path)?;
        let w = weights_for(&panel, &ctx.cfg)?;
        match counterfactual_evaluate(&policy, &panel, &w) {
            Ok(c) => Some(c),
            Err(Error::Undefined(m)) => {
                log::warn!("counterfactual estimate skipped: {m}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    ctx.write_json("eval.json", &json!({"test": report, "counterfactual": counterfactual}))?;
    println!(
        "test precision {:.4}, EO unfairness {}, DP unfairness {}; repairs +{} -{}",
        report.precision,
        report.unfairness_eo.map_or("n/a".into(), |u| format!("{u:.4}")),
        report.unfairness_dp.map_or("n/a".into(), |u| format!("{u:.4}")),
        report.repairs.added,
        report.repairs.removed
    );
    Ok(())
}

pub fn pareto(ctx: &mut Ctx) -> Result<()> {
    let pc = ctx.cfg.pareto.clone();
    if pc.trials == 0 || pc.eta.is_empty() {
        return Err(Error::InvalidArgument("pareto needs at least one trial and one eta".into()));
    }
    let base = ctx.cfg.synthetic.seed;
    let mut trials = Vec::with_capacity(pc.trials);
    for r in 0..pc.trials {
        let train_seed = ctx.seed(&format!("trial{r}"), derive_seed(base, 100 + r as u64));
        let test_seed = ctx.seed(&format!("trial{r}_test"), derive_seed(base, 10_000 + r as u64));
        let draw = synth(&ctx.cfg.synthetic, pc.n_train, train_seed)?;
        let w = weights_for(&draw.panel, &ctx.cfg)?;
        trials.push(Trial {
            sample: FinalSample::from_panel(&draw.panel, &w)?,
            test: synth(&ctx.cfg.synthetic, pc.n_test, test_seed)?.population,
        });
    }
    let seed = ctx.seed("pareto", ctx.cfg.seed);
    let table = pareto_sweep(&trials, &ctx.cfg.spec, &pc.eta, &ctx.cfg.train, seed)?;
    let mut buf = Vec::new();
    write_pareto_csv(&table, &mut buf)?;
    ctx.write_bytes("pareto.csv", &buf)?;
    ctx.write_json("pareto.json", &table)?;
    for a in &table.aggregates {
        println!(
            "eta {:.4}: precision {:.4} (sd {:.4}), unfairness {:.4} over {} trials",
            a.eta, a.precision_mean, a.precision_sd, a.unfairness_mean, a.trials
        );
    }
    Ok(())
}

/// The first `size` final-stage rows of a small synthetic draw, weighted by
/// the true propensities.
fn tiny_sample(cfg: &RunConfig, size: usize, seed: u64) -> Result<FinalSample> {
    let draw = synth(&cfg.synthetic, size * 8, seed)?;
    let w = true_propensity_weights(&draw.panel)?;
    let full = FinalSample::from_panel(&draw.panel, &w)?;
    if full.len() < size {
        return Err(Error::Undefined(format!("only {} final-stage rows", full.len())));
    }
    FinalSample::new(
        full.dims.clone(),
        full.x[..size].to_vec(),
        full.a[..size].to_vec(),
        full.y[..size].to_vec(),
        full.beta[..size].to_vec(),
    )
}

#[derive(Serialize)]
struct OracleCase {
    seed: u64,
    oracle: Option<f64>,
    trained: Option<f64>,
    agree: bool,
}

pub fn oracle_check(ctx: &mut Ctx) -> Result<()> {
    let oc = ctx.cfg.oracle_check.clone();
    let master = ctx.seed("oracle_check", ctx.cfg.seed);
    let mut cases = Vec::new();
    let mut draw = 0u64;
    while cases.len() < oc.instances {
        draw += 1;
        if draw > 50 * oc.instances as u64 + 50 {
            return Err(Error::Undefined("could not draw enough usable instances".into()));
        }
        let seed = derive_seed(master, draw);
        let sample = match tiny_sample(&ctx.cfg, oc.size, seed) {
            Ok(s) => s,
            Err(Error::Undefined(_) | Error::Panel(_)) => continue,
            Err(e) => return Err(e),
        };
        let oracle = match enumerate_optimal(&sample, &ctx.cfg.spec) {
            Ok(r) => Some(r.ratio),
            Err(Error::Infeasible(_)) => None,
            Err(Error::Undefined(_)) => continue,
            Err(e) => return Err(e),
        };
        let trained = match train_sample(&sample, &ctx.cfg.spec, &ctx.cfg.train, None) {
            Ok((_, report)) => Some(report.ratio),
            Err(Error::Infeasible(_)) => None,
            Err(Error::Undefined(_)) => continue,
            Err(e) => return Err(e),
        };
        let agree = match (oracle, trained) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-6,
            (None, None) => true,
            _ => false,
        };
        cases.push(OracleCase {
            seed,
            oracle,
            trained,
            agree,
        });
    }
    let disagree = cases.iter().filter(|c| !c.agree).count();
    ctx.write_json("oracle_check.json", &json!({"size": oc.size, "cases": cases, "disagreements": disagree}))?;
    println!("{} of {} instances agree with enumeration", cases.len() - disagree, cases.len());
    if disagree > 0 {
        return Err(Error::Solver(format!("{disagree} instances disagree with enumeration")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Phase {
    name: &'static str,
    secs: f64,
}

pub fn bench(ctx: &mut Ctx) -> Result<()> {
    let bc = ctx.cfg.bench.clone();
    let mut phases = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, phases: &mut Vec<Phase>| {
        phases.push(Phase {
            name,
            secs: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };
    let seed = ctx.seed("bench", ctx.cfg.synthetic.seed);
    let draw = synth(&ctx.cfg.synthetic, bc.n, seed)?;
    let test = synth(&ctx.cfg.synthetic, ctx.cfg.evaluate.n_test, derive_seed(seed, 1))?.population;
    lap("generate", &mut phases);
    let weights = weights_for(&draw.panel, &ctx.cfg)?;
    lap("propensity", &mut phases);
    let (policy, report) = train_policy(&draw.panel, &weights, &ctx.cfg.spec, &ctx.cfg.train)?;
    lap("train", &mut phases);
    let ev = evaluate_policy(&policy, &test, &ctx.cfg.spec, ctx.cfg.seed)?;
    lap("evaluate", &mut phases);
    let total: f64 = phases.iter().map(|p| p.secs).sum();
    let within = total <= bc.budget_secs;
    ctx.write_json(
        "bench.json",
        &json!({
            "n": bc.n,
            "phases": phases,
            "total_secs": total,
            "budget_secs": bc.budget_secs,
            "within_budget": within,
            "train_status": report.status,
            "train_precision": report.ratio,
            "test_precision": ev.precision,
        }),
    )?;
    for p in &phases {
        println!("{:<11} {:>9.3} s", p.name, p.secs);
    }
    println!("total       {total:>9.3} s (budget {} s: {})", bc.budget_secs, if within { "pass" } else { "fail" });
    Ok(())
}
