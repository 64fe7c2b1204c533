//! `groundloom`: build datasets, train both stages and evaluate, with a run
//! manifest next to every artifact.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundloom::dataforge::{build_stage1, build_stage2, read_jsonl, write_json_atomic, write_jsonl, BuildReport, D2Record, SftSample};
use groundloom::evalhall::{
    build_evalset, decoding_sweep, hallucination_rate, pairwise_compare, report_table, EvalItem, MetricsReport,
    PairwiseCounts, PairwiseReport, SweepReport,
};
use groundloom::model::{init_params, DecodingConfig};
use groundloom::pipeline::{
    load_checkpoint, save_checkpoint, train_dpo, train_sft, ExperimentConfig, Stage, StepSeeds, TrainConfig, TrainLog,
};
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "groundloom", version, about = "Stage-wise preference optimization lab on a grounded-VQA microworld")]
struct Cli {
    /// Experiment seed; every step seed derives from it.
    #[arg(long, env = "GROUNDLOOM_SEED", global = true)]
    seed: Option<u64>,
    /// Experiment config as JSON, or a run manifest whose config to reuse.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker cap. Computation is single-threaded, so any value of at least 1
    /// is honored.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the stage-1 SFT set, or a held-out eval set with --evalset.
    GenData(GenDataArgs),
    /// Build preference pairs from a stage-1 set.
    Forge(ForgeArgs),
    /// Train one stage.
    Train(TrainArgs),
    /// Evaluate a model, compare two, or sweep temperatures.
    Eval(EvalArgs),
    /// Render saved reports as tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of samples; defaults to the configured set size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    evalset: bool,
}

#[derive(Args, Debug)]
struct ForgeArgs {
    #[arg(long)]
    d1: PathBuf,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    fp_fraction: Option<f64>,
    #[arg(long)]
    tilt_beta: Option<f64>,
    #[arg(long)]
    tilt_target_mean: Option<f64>,
    #[arg(long)]
    tilt_cap: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Sft,
    Dpo,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Stage-1 JSONL for sft, preference JSONL for dpo.
    #[arg(long)]
    data: PathBuf,
    /// Frozen reference checkpoint; required for dpo.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Start sft from this checkpoint instead of a fresh init.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta_dpo: Option<f64>,
    #[arg(long)]
    kl_bound: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecodingArg {
    Greedy,
    Temp,
    Topk,
    Topp,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, conflicts_with = "compare")]
    model: Option<PathBuf>,
    /// Pairwise mode: A is the baseline, B the treated model.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    compare: Option<Vec<PathBuf>>,
    /// Eval items as JSONL; generated from the config when absent.
    #[arg(long)]
    evalset: Option<PathBuf>,
    #[arg(long, value_enum)]
    decoding: Option<DecodingArg>,
    #[arg(long, default_value_t = 1.0)]
    temp: f64,
    #[arg(long, default_value_t = 40)]
    k: usize,
    #[arg(long, default_value_t = 0.9)]
    p: f64,
    /// Comma-separated temperatures to sweep with --model.
    #[arg(long, value_delimiter = ',', requires = "model")]
    sweep: Option<Vec<f64>>,
    /// Acceptance gate suite; `stagewise` needs --compare.
    #[arg(long)]
    gate: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Saved metrics, pairwise, sweep or build reports.
    files: Vec<PathBuf>,
    /// Pairwise counts `a_wins,b_wins,tie,both_wrong,error` to tabulate.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    /// Also write build-report histograms as CSV into --out.
    #[arg(long)]
    csv: bool,
}

enum Failure {
    Usage(String),
    Data(String),
    Gate(String),
}

impl From<groundloom::Error> for Failure {
    fn from(e: groundloom::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn load_config(cli: &Cli) -> Outcome<ExperimentConfig> {
    let mut cfg = match &cli.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let value = match value.get("tool_version").and(value.get("config")) {
                Some(inner) => inner.clone(),
                None => value,
            };
            serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.model.validate().map_err(usage)?;
    cfg.stage1.validate().map_err(usage)?;
    cfg.forge.validate().map_err(usage)?;
    cfg.decoding.validate().map_err(usage)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        fs::create_dir_all(&cli.out).map_err(|e| Failure::Data(format!("{}: {e}", cli.out.display())))?;
        let threads = usize::from(cli.threads);
        match &cli.command {
            Command::GenData(a) => gen_data(a, cfg, &cli.out, threads),
            Command::Forge(a) => forge(a, cfg, &cli.out, threads),
            Command::Train(a) => train(a, cfg, &cli.out, threads),
            Command::Eval(a) => eval(a, cfg, &cli.out, threads),
            Command::Report(a) => report(a, cfg, &cli.out, threads),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Gate(m)) => {
            eprintln!("gate failed: {m}");
            ExitCode::from(3)
        }
    }
}

fn finish(m: &RunManifest, out: &Path) -> Outcome {
    let path = m.write(out)?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn gen_data(a: &GenDataArgs, cfg: ExperimentConfig, out: &Path, threads: usize) -> Outcome {
    let seeds = StepSeeds::derive(cfg.seed);
    let mut m = RunManifest::new(if a.evalset { "gen-evalset" } else { "gen-data" }, &cfg, threads);
    let path = if a.evalset {
        let n = a.n.unwrap_or(cfg.eval_size);
        let items = build_evalset(n, seeds.eval, &cfg.strata, &cfg.stage1.world).map_err(usage)?;
        let path = out.join("evalset.jsonl");
        write_jsonl(&path, &items)?;
        println!("{} eval items -> {}", items.len(), path.display());
        path
    } else {
        let n = a.n.unwrap_or(cfg.d1_size);
        let d1 = build_stage1(n, seeds.stage1, &cfg.stage1).map_err(usage)?;
        let path = out.join("d1.jsonl");
        write_jsonl(&path, &d1)?;
        println!("{} sft samples -> {}", d1.len(), path.display());
        path
    };
    m.output(&path)?;
    finish(&m, out)
}

fn forge(a: &ForgeArgs, mut cfg: ExperimentConfig, out: &Path, threads: usize) -> Outcome {
    let f = &mut cfg.forge;
    f.ratio = a.ratio.unwrap_or(f.ratio);
    f.fp_fraction = a.fp_fraction.unwrap_or(f.fp_fraction);
    f.tilt_beta = a.tilt_beta.unwrap_or(f.tilt_beta);
    f.tilt_cap = a.tilt_cap.unwrap_or(f.tilt_cap);
    f.tilt_target_mean = a.tilt_target_mean.or(f.tilt_target_mean);
    f.validate().map_err(usage)?;

    let mut m = RunManifest::new("forge", &cfg, threads);
    let d1: Vec<SftSample> = read_jsonl(&a.d1)?;
    m.input(&a.d1)?;
    let forged = build_stage2(&d1, &cfg.forge, StepSeeds::derive(cfg.seed).forge)?;
    let d2_path = out.join("d2.jsonl");
    write_jsonl(&d2_path, &forged.records)?;
    let report_path = out.join("build_report.json");
    write_json_atomic(&report_path, &forged.report)?;
    m.output(&d2_path)?;
    m.output(&report_path)?;
    if let Some(st) = &forged.report.d2_y_plus_lengths {
        let csv = out.join("y_plus_lengths.csv");
        groundloom::model::checkpoint::write_atomic(&csv, st.to_csv().as_bytes())?;
        m.output(&csv)?;
    }
    print!("{}", render_build_report(&forged.report));
    finish(&m, out)
}

fn train(a: &TrainArgs, mut cfg: ExperimentConfig, out: &Path, threads: usize) -> Outcome {
    let seeds = StepSeeds::derive(cfg.seed);
    let (stage, name) = match a.stage {
        StageArg::Sft => (Stage::Sft, "sft"),
        StageArg::Dpo => (Stage::Dpo, "dpo"),
    };
    let base = if stage == Stage::Sft { &mut cfg.sft } else { &mut cfg.dpo };
    let tc = TrainConfig {
        stage,
        seed: if stage == Stage::Sft { seeds.sft } else { seeds.dpo },
        epochs: a.epochs.unwrap_or(base.epochs),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        beta_dpo: a.beta_dpo.unwrap_or(base.beta_dpo),
        kl_bound: a.kl_bound.or(base.kl_bound),
        reference: a.reference.clone().or(base.reference.clone()),
        ..base.clone()
    };
    tc.validate().map_err(usage)?;
    if stage == Stage::Sft && a.reference.is_some() {
        return Err(usage("--ref only applies to --stage dpo"));
    }
    *base = tc.clone();

    let mut m = RunManifest::new(&format!("train-{name}"), &cfg, threads);
    let log_path = out.join(format!("train_{name}.log.jsonl"));
    match fs::remove_file(&log_path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(Failure::Data(e.to_string())),
        _ => {}
    }
    let mut log = TrainLog::to_file(&log_path)?;
    let params = match stage {
        Stage::Sft => {
            let d1: Vec<SftSample> = read_jsonl(&a.data)?;
            m.input(&a.data)?;
            let init = match &a.init {
                Some(p) => {
                    m.input(p)?;
                    load_checkpoint(p)?
                }
                None => init_params(cfg.model, seeds.init)?,
            };
            train_sft(&d1, &tc, &init, &mut log)?
        }
        Stage::Dpo => {
            let d2: Vec<D2Record> = read_jsonl(&a.data)?;
            m.input(&a.data)?;
            let r = tc.reference.as_ref().expect("validated");
            m.input(r)?;
            let theta1 = load_checkpoint(r)?;
            let before = theta1.checksum();
            let theta2 = train_dpo(&theta1, &d2, &tc, &mut log)?;
            if load_checkpoint(r)?.checksum() != before {
                return Err(Failure::Data("reference checkpoint changed during training".into()));
            }
            theta2
        }
    };
    drop(log);
    let ckpt = out.join(format!("theta_{name}.ckpt"));
    save_checkpoint(&params, &ckpt)?;
    m.output(&ckpt)?;
    m.output(&log_path)?;
    println!("{name} checkpoint -> {}", ckpt.display());
    finish(&m, out)
}

fn decoding_from(a: &EvalArgs, cfg: &ExperimentConfig) -> Outcome<DecodingConfig> {
    let (seed, max_len) = (cfg.seed, cfg.decoding.max_len);
    let d = match a.decoding {
        None => cfg.decoding.clone(),
        Some(DecodingArg::Greedy) => DecodingConfig::greedy(max_len),
        Some(DecodingArg::Temp) => DecodingConfig::temperature(a.temp, seed, max_len),
        Some(DecodingArg::Topk) => DecodingConfig::top_k(a.k, a.temp, seed, max_len),
        Some(DecodingArg::Topp) => DecodingConfig::top_p(a.p, a.temp, seed, max_len),
    };
    d.validate().map_err(usage)?;
    Ok(d)
}

/// Stage-wise gate: the four checks B must pass against baseline A.
fn stagewise_gate(ma: &MetricsReport, mb: &MetricsReport, pw: &PairwiseReport) -> Vec<(String, bool)> {
    vec![
        (
            format!("hallucination {:.4} -> {:.4} (needs >= 20% relative drop)", ma.hallucination_rate, mb.hallucination_rate),
            mb.hallucination_rate <= 0.8 * ma.hallucination_rate,
        ),
        (format!("win-rate delta {} (needs >= +5.0)", pw.delta_string()), pw.delta_tenths >= 50),
        (
            format!("premise rejection {:?} -> {:?} (needs strict increase)", ma.premise_rejection_rate, mb.premise_rejection_rate),
            matches!((ma.premise_rejection_rate, mb.premise_rejection_rate), (Some(x), Some(y)) if y > x),
        ),
        (
            format!("detail {:.3} -> {:.3} (needs no decrease)", ma.mean_validated_claims, mb.mean_validated_claims),
            mb.mean_validated_claims >= ma.mean_validated_claims,
        ),
    ]
}

fn eval(a: &EvalArgs, mut cfg: ExperimentConfig, out: &Path, threads: usize) -> Outcome {
    if let Some(g) = &a.gate {
        if g != "stagewise" {
            return Err(usage(format!("unknown gate suite `{g}` (known: stagewise)")));
        }
        if a.compare.is_none() {
            return Err(usage("--gate stagewise needs --compare A B"));
        }
    }
    if a.model.is_none() && a.compare.is_none() {
        return Err(usage("give --model or --compare"));
    }
    cfg.decoding = decoding_from(a, &cfg)?;
    let mut m = RunManifest::new("eval", &cfg, threads);
    let evalset: Vec<EvalItem> = match &a.evalset {
        Some(p) => {
            m.input(p)?;
            read_jsonl(p)?
        }
        None => build_evalset(cfg.eval_size, StepSeeds::derive(cfg.seed).eval, &cfg.strata, &cfg.stage1.world)?,
    };
    if evalset.is_empty() {
        return Err(Failure::Data("evalset is empty".into()));
    }

    let mut gate_failures = Vec::new();
    if let Some(paths) = &a.compare {
        for p in paths {
            m.input(p)?;
        }
        let (pa, pb) = (load_checkpoint(&paths[0])?, load_checkpoint(&paths[1])?);
        let pw = pairwise_compare(&pa, &pb, &evalset, &cfg.decoding)?;
        let (ma, mb) = (hallucination_rate(&pa, &evalset, &cfg.decoding)?, hallucination_rate(&pb, &evalset, &cfg.decoding)?);
        print!("{}", pw.render("A", "B"));
        println!("A: hallucination {:.1}%  B: hallucination {:.1}%", 100.0 * ma.hallucination_rate, 100.0 * mb.hallucination_rate);
        for (name, value) in [("pairwise.json", serde_json::to_value(&pw)), ("metrics_a.json", serde_json::to_value(&ma)), ("metrics_b.json", serde_json::to_value(&mb))] {
            let path = out.join(name);
            write_json_atomic(&path, &value.map_err(groundloom::Error::from)?)?;
            m.output(&path)?;
        }
        if a.gate.is_some() {
            for (line, ok) in stagewise_gate(&ma, &mb, &pw) {
                println!("gate {}  {line}", if ok { "PASS" } else { "FAIL" });
                if !ok {
                    gate_failures.push(line);
                }
            }
        }
    } else if let Some(model) = &a.model {
        m.input(model)?;
        let params = load_checkpoint(model)?;
        if let Some(taus) = &a.sweep {
            let grid: Vec<DecodingConfig> = taus.iter().map(|&t| DecodingConfig::temperature(t, cfg.seed, cfg.decoding.max_len)).collect();
            for g in &grid {
                g.validate().map_err(usage)?;
            }
            let rep = decoding_sweep(&params, &evalset, &grid)?;
            print!("{}", rep.render());
            let path = out.join("sweep.json");
            write_json_atomic(&path, &rep)?;
            m.output(&path)?;
        } else {
            let rep = hallucination_rate(&params, &evalset, &cfg.decoding)?;
            print!("{}", rep.render());
            let path = out.join("metrics.json");
            write_json_atomic(&path, &rep)?;
            m.output(&path)?;
        }
    }
    finish(&m, out)?;
    if gate_failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gate(gate_failures.join("; ")))
    }
}

fn render_build_report(r: &BuildReport) -> String {
    let mut s = format!(
        "pairs {} of {} requested ({} false-premise), pool {}, tilt beta {:.4}\n",
        r.emitted, r.requested, r.false_premise_pairs, r.candidate_pool, r.tilt_beta
    );
    s.push_str(&format!("{:<28} {:>6}\n", "tag", "pairs"));
    for (tag, n) in &r.per_tag {
        s.push_str(&format!("{tag:<28} {n:>6}\n"));
    }
    for (name, stats) in [("stage-1 answers", &r.d1_answer_lengths), ("preferred responses", &r.d2_y_plus_lengths)] {
        if let Some(st) = stats {
            s.push_str(&format!("{name} length: {}", st.render(40)));
        }
    }
    s
}

fn report(a: &ReportArgs, cfg: ExperimentConfig, out: &Path, threads: usize) -> Outcome {
    if a.files.is_empty() && a.counts.is_none() {
        return Err(usage("give report files or --counts"));
    }
    let mut m = RunManifest::new("report", &cfg, threads);
    if let Some(c) = &a.counts {
        if c.len() != 5 {
            return Err(usage(format!("--counts takes 5 values, got {}", c.len())));
        }
        let counts = PairwiseCounts { a_wins: c[0], b_wins: c[1], tie: c[2], both_wrong: c[3], error: c[4] };
        let rep = report_table(counts, counts.total()).map_err(usage)?;
        print!("{}", rep.render("A", "B"));
    }
    for path in &a.files {
        let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        m.input(path)?;
        println!("== {}", path.display());
        if let Ok(r) = serde_json::from_str::<PairwiseReport>(&text) {
            print!("{}", r.render("A", "B"));
        } else if let Ok(r) = serde_json::from_str::<SweepReport>(&text) {
            print!("{}", r.render());
        } else if let Ok(r) = serde_json::from_str::<MetricsReport>(&text) {
            print!("{}", r.render());
        } else if let Ok(r) = serde_json::from_str::<BuildReport>(&text) {
            print!("{}", render_build_report(&r));
            if a.csv {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
                for (suffix, stats) in [("d1_lengths", &r.d1_answer_lengths), ("y_plus_lengths", &r.d2_y_plus_lengths)] {
                    if let Some(st) = stats {
                        let csv = out.join(format!("{stem}.{suffix}.csv"));
                        groundloom::model::checkpoint::write_atomic(&csv, st.to_csv().as_bytes())?;
                        m.output(&csv)?;
                    }
                }
            }
        } else {
            return Err(Failure::Data(format!("{}: not a known report", path.display())));
        }
    }
    if !m.outputs.is_empty() {
        finish(&m, out)?;
    }
    Ok(())
}
