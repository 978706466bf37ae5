use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pricerule::dsl::{parse, render, DecisionRule, Lexicon};
use pricerule::evo;
use pricerule::fingerprint::fingerprint;
use pricerule::fitness::{check_constraints, DemandModel, EvalContext, ExponentialElasticityModel, REPORT_CSV_HEADER};
use pricerule::ingest::{detect_format, load_dataset, save_csv_bundle, MarketDataset};
use pricerule::pipeline::{run_pipeline, ElasticityPredictor, Locks};
use pricerule::proposer::{
    iteration_csv, iterate, mcts_search, segment_by_customer, segment_by_k1, two_phase, BfgsOptions, FitLoss, HttpProposer,
    Proposer, TemplateProposer,
};
use pricerule::rl;
use pricerule::search::Archive;
use pricerule::sim::{
    baseline_clustering, baseline_lowrank, deploy_prices, deploy_rule, generate_world, golden_response, Realized, WorldTruth,
};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig, SegmentBy};
use crate::error::CliError;

pub const TRUTH_FILE: &str = "truth.json";
pub const GOLDEN_FILE: &str = "golden.csv";
const BASELINE_RULE: &str = "gate: fixed(1); price: ref_price";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthDoc {
    pub dataset_fingerprint: String,
    pub truth: WorldTruth,
}

/// Files a command wrote into its output directory, plus the dataset it read.
pub struct Written {
    pub files: Vec<String>,
    pub dataset_fingerprint: Option<String>,
}

fn write(dir: &Path, name: &str, text: &str, files: &mut Vec<String>) -> Result<(), CliError> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    files.push(name.to_string());
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Io(e.to_string()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn is_truth_file(path: &Path) -> bool {
    if path.file_name().is_some_and(|n| n == TRUTH_FILE) {
        return true;
    }
    if path.is_file() {
        if let Ok(text) = std::fs::read_to_string(path) {
            return serde_json::from_str::<TruthDoc>(&text).is_ok();
        }
    }
    false
}

pub fn load_data(path: &Path) -> Result<(MarketDataset, String), CliError> {
    let ds = load_dataset(path, detect_format(path)).map_err(|e| CliError::Data(e.to_string()))?;
    let fp = fingerprint(&ds);
    Ok((ds, fp))
}

pub fn read_golden(path: &Path) -> Result<BTreeMap<(String, String), f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        customer: String,
        material: String,
        stock: bool,
        price: f64,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for r in rdr.deserialize::<Row>() {
        let r = r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        out.insert((r.customer, r.material), if r.stock { r.price } else { 0.0 });
    }
    Ok(out)
}

pub fn build_context(cfg: &RunConfig, ds: &MarketDataset) -> Result<EvalContext, CliError> {
    let model = DemandModel::Exponential(ExponentialElasticityModel::estimate(ds, cfg.default_beta));
    let ctx = EvalContext::from_dataset(ds, &model, cfg.fitness.clone()).map_err(|e| CliError::Data(e.to_string()))?;
    match &cfg.golden {
        Some(g) => ctx.with_golden_map(&read_golden(g)?).map_err(|e| CliError::Data(e.to_string())),
        None => Ok(ctx),
    }
}

fn make_proposer(cfg: &RunConfig) -> Result<Box<dyn Proposer>, CliError> {
    if cfg.proposer == "mock" {
        return Ok(Box::new(TemplateProposer::default()));
    }
    let mut p = HttpProposer::new(cfg.proposer.clone());
    p.value_and_priors("", &["probe".to_string()])
        .map_err(|e| CliError::Proposer(format!("{}: {e}", cfg.proposer)))?;
    Ok(Box::new(p))
}

fn baseline_rule(ctx: &EvalContext) -> Result<DecisionRule, CliError> {
    let lex = Lexicon::new(ctx.schema.names().iter().cloned());
    parse(BASELINE_RULE, &lex)
        .map(|o| o.rule)
        .map_err(|e| CliError::Search(e.to_string()))
}

pub struct SearchOutcome {
    pub rule: DecisionRule,
    pub archive: Archive,
    pub trace_csv: String,
}

pub fn run_search(method: Method, budget: usize, cfg: &RunConfig, ctx: &EvalContext) -> Result<SearchOutcome, CliError> {
    let search_err = |e: &dyn std::fmt::Display| CliError::Search(e.to_string());
    let zero = |ctx: &EvalContext| -> Result<SearchOutcome, CliError> {
        let rule = baseline_rule(ctx)?;
        let mut archive = Archive::default();
        archive.offer_scored(ctx, &rule, 0).map_err(|e| search_err(&e))?;
        Ok(SearchOutcome {
            rule,
            archive,
            trace_csv: "generation,best,mean,archive_best,archive_mae\n".into(),
        })
    };
    match method {
        Method::Evo => {
            let mut c = cfg.evo.clone();
            c.generations = budget;
            let r = evo::run(&c, ctx).map_err(|e| search_err(&e))?;
            let rule = r.archive.best.as_ref().map_or(r.best.clone(), |b| b.rule.clone());
            Ok(SearchOutcome {
                rule,
                archive: r.archive,
                trace_csv: r.trace.to_csv(),
            })
        }
        Method::Rl => {
            let mut c = cfg.rl.clone();
            c.episodes = budget;
            let r = rl::train(&c, ctx).map_err(|e| search_err(&e))?;
            Ok(SearchOutcome {
                rule: r.best().0,
                trace_csv: r.trace.to_csv(),
                archive: r.archive,
            })
        }
        Method::Mcts => {
            if budget == 0 {
                return zero(ctx);
            }
            let mut proposer = make_proposer(cfg)?;
            let mut c = cfg.mcts.clone();
            c.iterations = budget;
            let r = mcts_search(proposer.as_mut(), ctx, &c);
            Ok(SearchOutcome {
                rule: r.best,
                archive: r.archive,
                trace_csv: r.trace.to_csv(),
            })
        }
        Method::LlmIterate => {
            let mut proposer = make_proposer(cfg)?;
            let mut c = cfg.iterate.clone();
            c.t_max = budget;
            let seg = match cfg.segment {
                SegmentBy::K1 => segment_by_k1(ctx),
                SegmentBy::Customer => segment_by_customer(ctx),
            };
            let r = iterate(proposer.as_mut(), ctx, &seg, &c).map_err(|e| CliError::Proposer(e.to_string()))?;
            Ok(SearchOutcome {
                rule: r.rule,
                archive: r.archive,
                trace_csv: iteration_csv(&r.trace),
            })
        }
        Method::TwoPhase => {
            if budget == 0 {
                return zero(ctx);
            }
            let mut proposer = make_proposer(cfg)?;
            let kind = if ctx.golden.is_some() { FitLoss::Mae } else { FitLoss::NegFitness };
            let r = two_phase(proposer.as_mut(), ctx, cfg.xi, budget, &BfgsOptions::default(), kind)
                .map_err(|e| CliError::Proposer(e.to_string()))?;
            let mut trace = String::from("round,loss,converged,restructured,rule\n");
            for row in &r.rounds {
                let _ = writeln!(
                    trace,
                    "{},{},{},{},{}",
                    row.round,
                    row.loss,
                    row.converged,
                    row.restructured,
                    csv_field(&row.source)
                );
            }
            Ok(SearchOutcome {
                rule: r.rule,
                archive: r.archive,
                trace_csv: trace,
            })
        }
    }
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<Written, CliError> {
    let out = cfg.out_dir()?;
    if out.exists() {
        let non_empty = std::fs::read_dir(out).map_err(|e| CliError::io(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Refused(format!("{} is not empty; pass --force to overwrite", out.display())));
        }
    }
    ensure_dir(out)?;
    let world = generate_world(&cfg.world).map_err(|e| CliError::Config(e.to_string()))?;
    save_csv_bundle(&world.dataset, out).map_err(|e| CliError::Io(e.to_string()))?;
    let fp = fingerprint(&world.dataset);
    let mut files = Vec::new();
    let doc = TruthDoc {
        dataset_fingerprint: fp.clone(),
        truth: world.truth.clone(),
    };
    write(out, TRUTH_FILE, &json(&doc)?, &mut files)?;
    let golden = golden_response(&world).map_err(|e| CliError::Search(e.to_string()))?;
    let mut g = String::from("customer,material,stock,price,units\n");
    for ((c, m), e) in &golden.entries {
        let _ = writeln!(g, "{c},{m},{},{},{}", e.stock, e.price, e.units);
    }
    write(out, GOLDEN_FILE, &g, &mut files)?;
    let mut all: Vec<String> = std::fs::read_dir(out)
        .map_err(|e| CliError::io(out, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != crate::manifest::MANIFEST_FILE)
        .collect();
    all.sort();
    Ok(Written {
        files: all,
        dataset_fingerprint: Some(fp),
    })
}

fn write_report(out: &Path, ctx: &EvalContext, rule: &DecisionRule, files: &mut Vec<String>) -> Result<String, CliError> {
    let report = ctx.report(rule).map_err(|e| CliError::Search(e.to_string()))?;
    let j = json(&report)?;
    write(out, "report.json", &j, files)?;
    write(out, "report.csv", &format!("{REPORT_CSV_HEADER}\n{}\n", report.csv_row()), files)?;
    Ok(j)
}

pub fn search(cfg: &RunConfig) -> Result<Written, CliError> {
    let data = cfg.require(&cfg.data, "data")?;
    for p in std::iter::once(data).chain(cfg.golden.as_deref()) {
        if is_truth_file(p) {
            return Err(CliError::Refused(format!("{} is a truth file; searches never read it", p.display())));
        }
    }
    let (ds, fp) = load_data(data)?;
    let ctx = build_context(cfg, &ds)?;
    let out = cfg.out_dir()?;
    ensure_dir(out)?;
    let r = run_search(cfg.method, cfg.budget, cfg, &ctx)?;
    let mut files = Vec::new();
    write(out, "best.rule", &(render(&r.rule) + "\n"), &mut files)?;
    write_report(out, &ctx, &r.rule, &mut files)?;
    write(out, "trace.csv", &r.trace_csv, &mut files)?;
    write(out, "archive.json", &json(&r.archive)?, &mut files)?;
    Ok(Written {
        files,
        dataset_fingerprint: Some(fp),
    })
}

pub fn eval(cfg: &RunConfig) -> Result<Written, CliError> {
    let rule_path = cfg.require(&cfg.rule, "rule")?;
    let data = cfg.require(&cfg.data, "data")?;
    let (ds, fp) = load_data(data)?;
    let ctx = build_context(cfg, &ds)?;
    let src = std::fs::read_to_string(rule_path).map_err(|e| CliError::io(rule_path, e))?;
    let lex = Lexicon::new(ctx.schema.names().iter().cloned());
    let parsed = parse(&src, &lex).map_err(|e| CliError::Data(format!("{}: {e}", rule_path.display())))?;
    for c in &parsed.corrections {
        eprintln!("{c}");
    }
    let mut files = Vec::new();
    match cfg.out.as_deref() {
        Some(out) => {
            ensure_dir(out)?;
            let j = write_report(out, &ctx, &parsed.rule, &mut files)?;
            print!("{j}");
        }
        None => {
            let report = ctx.report(&parsed.rule).map_err(|e| CliError::Search(e.to_string()))?;
            print!("{}", json(&report)?);
        }
    }
    Ok(Written {
        files,
        dataset_fingerprint: Some(fp),
    })
}

pub fn pipeline(cfg: &RunConfig) -> Result<Written, CliError> {
    let data = cfg.require(&cfg.data, "data")?;
    let (ds, fp) = load_data(data)?;
    let mut locks = Locks::from_dataset(&ds);
    if cfg.lock_file.is_some() {
        let lf = cfg.require(&cfg.lock_file, "lock-file")?;
        let text = std::fs::read_to_string(lf).map_err(|e| CliError::io(lf, e))?;
        locks
            .merge_csv(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", lf.display())))?;
    }
    let predictor = ElasticityPredictor {
        model: DemandModel::Exponential(ExponentialElasticityModel::estimate(&ds, cfg.default_beta)),
    };
    let plan = run_pipeline(&ds, &predictor, &locks, &cfg.pipeline).map_err(|e| CliError::Search(e.to_string()))?;
    let out = cfg.out_dir()?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    write(out, "plan.csv", &plan.to_csv(), &mut files)?;
    write(out, "plan-summary.json", &json(&plan.summary_json())?, &mut files)?;
    Ok(Written {
        files,
        dataset_fingerprint: Some(fp),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub sales_volume: f64,
    pub units: f64,
    pub profit: f64,
    pub violating_customers: usize,
    /// `None` when the thresholds were never met.
    pub iterations_to_threshold: Option<usize>,
}

fn meets(r: &Realized, cfg: &RunConfig) -> bool {
    r.revenue >= cfg.compare.b_t && r.profit >= cfg.compare.p_t
}

pub fn compare(cfg: &RunConfig) -> Result<Written, CliError> {
    let data = cfg.require(&cfg.data, "data")?;
    let truth_path = cfg.require(&cfg.truth, "truth")?;
    let (ds, fp) = load_data(data)?;
    let text = std::fs::read_to_string(truth_path).map_err(|e| CliError::io(truth_path, e))?;
    let doc: TruthDoc = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", truth_path.display())))?;
    if doc.dataset_fingerprint != fp {
        return Err(CliError::Refused(format!(
            "dataset fingerprint {fp} does not match the truth file's {}",
            doc.dataset_fingerprint
        )));
    }
    let truth = &doc.truth;
    let ctx = build_context(cfg, &ds)?;
    let seed = cfg.compare.deploy_seed;
    let mut rows = Vec::new();

    for &m in &cfg.compare.methods {
        let r = run_search(m, cfg.budget, cfg, &ctx)?;
        let realized = deploy_rule(&r.rule, &ctx, truth, seed).map_err(|e| CliError::Search(e.to_string()))?;
        let report = ctx.report(&r.rule).map_err(|e| CliError::Search(e.to_string()))?;
        let mut hit = None;
        for e in &r.archive.history {
            let got = deploy_rule(&e.rule, &ctx, truth, seed).map_err(|e| CliError::Search(e.to_string()))?;
            if meets(&got, cfg) {
                hit = Some(e.iteration);
                break;
            }
        }
        rows.push(CompareRow {
            method: m.label().to_string(),
            sales_volume: realized.revenue,
            units: realized.volume,
            profit: realized.profit,
            violating_customers: report.violations.violating,
            iterations_to_threshold: hit,
        });
    }

    let baselines = [
        ("lowrank", baseline_lowrank(&ds, &cfg.lowrank), cfg.lowrank.rounds),
        ("clustering", baseline_clustering(&ds, &cfg.clustering), cfg.clustering.round),
    ];
    for (name, outcome, rounds) in baselines {
        let outcome = outcome.map_err(|e| CliError::Search(format!("{name}: {e}")))?;
        let realized = deploy_prices(&outcome.prices, truth, seed);
        let baskets = ctx.baskets(&ctx.price_outcomes(&outcome.prices));
        let violations = check_constraints(&baskets, &cfg.fitness.constraints);
        rows.push(CompareRow {
            method: name.to_string(),
            sales_volume: realized.revenue,
            units: realized.volume,
            profit: realized.profit,
            violating_customers: violations.violating,
            iterations_to_threshold: meets(&realized, cfg).then_some(rounds),
        });
    }

    rows.sort_by(|a, b| b.profit.total_cmp(&a.profit).then_with(|| a.method.cmp(&b.method)));
    let mut table = String::from("rank,method,sales_volume,units,profit,violating_customers,iterations_to_threshold\n");
    for (i, r) in rows.iter().enumerate() {
        let hit = r.iterations_to_threshold.map_or("not reached".to_string(), |n| n.to_string());
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            i + 1,
            r.method,
            r.sales_volume,
            r.units,
            r.profit,
            r.violating_customers,
            hit
        );
    }
    print!("{table}");
    let out = cfg.out_dir()?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    write(out, "compare.csv", &table, &mut files)?;
    Ok(Written {
        files,
        dataset_fingerprint: Some(fp),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceCheck {
    pub trace: String,
    pub rows: usize,
    pub column: Option<String>,
    pub fitness_monotone: Option<bool>,
    pub mae_monotone: Option<bool>,
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse().ok()
}

/// Reads a trace CSV, skipping `#` comment lines.
pub fn read_trace(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(parse_cell).collect());
    }
    Ok((header, rows))
}

fn monotone(values: &[f64], up: bool) -> bool {
    values.windows(2).all(|w| if up { w[1] >= w[0] } else { w[1] <= w[0] })
}

pub fn check_trace(name: &str, header: &[String], rows: &[Vec<Option<f64>>]) -> TraceCheck {
    let col = |n: &str| header.iter().position(|h| h == n);
    let series = |i: usize| -> Vec<f64> { rows.iter().filter_map(|r| r.get(i).copied().flatten()).collect() };
    let fit_col = ["archive_best", "archive_best_fitness"].into_iter().find(|c| col(c).is_some());
    TraceCheck {
        trace: name.to_string(),
        rows: rows.len(),
        column: fit_col.map(String::from),
        fitness_monotone: fit_col.and_then(col).map(|i| monotone(&series(i), true)),
        mae_monotone: col("archive_mae").map(|i| monotone(&series(i), false)),
    }
}

pub fn report(cfg: &RunConfig) -> Result<Written, CliError> {
    if cfg.traces.is_empty() {
        return Err(CliError::Config("report needs at least one --trace".into()));
    }
    let out = cfg.out_dir()?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    let mut summary = String::from("trace,rows,column,fitness_monotone,mae_monotone\n");
    let mut failed = Vec::new();
    for (k, path) in cfg.traces.iter().enumerate() {
        let (header, rows) = read_trace(path)?;
        let stem = path.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
        let name = format!("{k}-{stem}");
        let mut plot = String::from("series,x,y\n");
        for (j, h) in header.iter().enumerate().skip(1) {
            for (i, r) in rows.iter().enumerate() {
                if let Some(y) = r.get(j).copied().flatten() {
                    let x = r.first().copied().flatten().unwrap_or(i as f64);
                    let _ = writeln!(plot, "{h},{x},{y}");
                }
            }
        }
        write(out, &format!("plot-{name}.csv"), &plot, &mut files)?;
        let c = check_trace(&name, &header, &rows);
        let flag = |b: Option<bool>| b.map_or("n/a".to_string(), |b| b.to_string());
        let _ = writeln!(
            summary,
            "{},{},{},{},{}",
            c.trace,
            c.rows,
            c.column.as_deref().unwrap_or(""),
            flag(c.fitness_monotone),
            flag(c.mae_monotone)
        );
        if c.fitness_monotone == Some(false) || c.mae_monotone == Some(false) {
            failed.push(path.display().to_string());
        }
    }
    write(out, "report-summary.csv", &summary, &mut files)?;
    print!("{summary}");
    if !failed.is_empty() {
        return Err(CliError::Check(format!("non-monotone archive columns in {}", failed.join(", "))));
    }
    Ok(Written {
        files,
        dataset_fingerprint: None,
    })
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
