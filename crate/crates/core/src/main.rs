use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsepsis::evalcli::experiment::{comparison_table, run_scaling, scaling_csv};
use fedsepsis::evalcli::gradcheck::{run_gradchecks, TOLERANCE};
use fedsepsis::evalcli::{run_comparison, run_experiment, write_artifacts, write_comparison, Baseline, ExperimentConfig};
use fedsepsis::ledger::Ledger;
use fedsepsis::synthdata::io::export_cohort;
use fedsepsis::synthdata::{generate_cohort, CohortConfig, Ontology};
use fedsepsis::{Error, Result};

#[derive(Parser)]
#[command(name = "fedsepsis", version, about = "Federated sepsis-prediction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and export it as CSV.
    Generate(Common),
    /// Run one baseline over the configured seeds and folds.
    Train {
        #[command(flatten)]
        common: Common,
        /// Baseline id; overrides the configuration file.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Run all five baselines on identical splits.
    Compare(Common),
    /// Check a ledger file's hash chain.
    VerifyLedger {
        path: PathBuf,
    },
    /// Finite-difference check of every differentiable component.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn generate(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let ontology = Ontology::builtin();
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("knowledge_graph.tsv"), ontology.store.to_tsv())?;
    for &seed in &cfg.seeds {
        let cohort = generate_cohort(&CohortConfig { seed, ..cfg.cohort.clone() }, &ontology)?;
        let dir = common.out.join(format!("cohort_seed{seed}"));
        export_cohort(&dir, &cohort.windows, &ontology.channels[..cfg.cohort.channels], &ontology.store)?;
        println!("seed {seed}: {} patients, prevalence {:.3} -> {}", cohort.len(), cohort.prevalence(), dir.display());
    }
    Ok(())
}

fn train(common: &Common, baseline: Option<&str>) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(id) = baseline {
        cfg.baseline = id.parse::<Baseline>()?;
    }
    let output = run_experiment(&cfg)?;
    write_artifacts(&output, &common.out)?;
    let s = &output.report.summary;
    println!(
        "{}: auc {:.4} (sd {:.4}) accuracy {:.4} f1 {:.4} precision {:.4} recall {:.4} privacy {}",
        output.report.baseline, s.auc_mean, s.auc_std, s.accuracy, s.f1, s.precision, s.recall, s.privacy_guarantee
    );
    println!("artifacts written to {}", common.out.display());
    Ok(())
}

fn compare(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let outputs = run_comparison(&cfg)?;
    write_comparison(&outputs, &common.out)?;
    print!("{}", comparison_table(&outputs));
    if !cfg.scaling_nodes.is_empty() {
        let points = run_scaling(&cfg)?;
        std::fs::write(common.out.join("scaling.csv"), scaling_csv(&points)?)?;
        for p in &points {
            println!("{} nodes: auc {:.4} bytes {:.0}", p.nodes, p.auc_mean, p.bytes_mean);
        }
    }
    println!("artifacts written to {}", common.out.display());
    Ok(())
}

fn verify_ledger(path: &Path) -> Result<()> {
    let ledger = Ledger::load(path)?;
    ledger.verify()?;
    println!("ok: {} entries, head {}", ledger.len(), hex::encode(ledger.head_hash()));
    Ok(())
}

fn gradcheck(instances: usize, seed: u64) -> Result<()> {
    let checks = run_gradchecks(instances, seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!("{:<20} {:>4} instances  max rel err {:.3e}  {}", c.component, c.instances, c.max_rel_error, if c.passed() { "ok" } else { "FAIL" });
        if !c.passed() {
            failed.push(c.component);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(format!("{} above tolerance {TOLERANCE}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => generate(&common),
        Command::Train { common, baseline } => train(&common, baseline.as_deref()),
        Command::Compare(common) => compare(&common),
        Command::VerifyLedger { path } => verify_ledger(&path),
        Command::Gradcheck { instances, seed } => gradcheck(instances, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
