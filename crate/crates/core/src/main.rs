use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beamlearn::array_codebook::{generate_codebook, ArrayGeometry};
use beamlearn::harness::{compare_variants, run_campaign, variant, ExperimentConfig};
use beamlearn::refinement::lemma_sweep;
use beamlearn::regret::{reference_spec, run_bound_check, BoundTrace};
use beamlearn::two_layer::RefinePolicy;
use beamlearn::{Error, Result};

#[derive(Parser)]
#[command(name = "beamlearn", version, about = "Beam-pair selection and refinement experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value experiment file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (file for `codebook`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    no_refine: bool,
    /// all, after-reward or after-n:<steps>
    #[arg(long, global = true)]
    policy: Option<RefinePolicy>,
    #[arg(long, global = true)]
    risk_threshold_db: Option<f64>,
    #[arg(long, global = true)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print or save the beam table of the configured array.
    Codebook,
    /// Run a multi-run campaign and write its trace and manifest.
    Simulate,
    /// Run several variants on one environment, side by side.
    Compare {
        /// Comma-separated presets: alg1, alg2, hoo, flat, all, after-reward, after-n:<steps>.
        #[arg(long, default_value = "alg1,alg2")]
        variants: String,
    },
    /// Empirical regret against both logarithmic bounds on a synthetic bandit.
    VerifyBounds,
    /// Sweep the smoothness inequality on the broadside pattern.
    CheckLemma,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(r) = self.runs {
            c.n_runs = r;
        }
        if let Some(h) = self.horizon {
            c.horizon = h;
        }
        if self.no_refine {
            c.refine = false;
        }
        if let Some(p) = self.policy {
            c.policy = p;
        }
        if let Some(g) = self.risk_threshold_db {
            c.risk_threshold_db = g;
        }
        if let Some(b) = self.budget {
            c.budget = b;
        }
        c.validate()?;
        Ok(c)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn write_bound(path: &Path, t: &BoundTrace) -> Result<()> {
    t.write_csv(create(path)?).map_err(|e| io_err(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.common.config()?;
    match cli.command {
        Command::Codebook => {
            let cb = generate_codebook(&ArrayGeometry::half_wave(cfg.array_nx, cfg.array_ny)?)?;
            match &cli.common.out {
                Some(p) => cb.write_table(create(p)?).map_err(|e| io_err(p, e))?,
                None => cb.write_table(std::io::stdout().lock()).map_err(|e| io_err(Path::new("stdout"), e))?,
            }
            eprintln!("{} beams", cb.len());
        }
        Command::Simulate => {
            let r = run_campaign(&cfg)?;
            r.write(&cfg.out_dir)?;
            let last = r.trace.len() - 1;
            println!(
                "{} runs x {} steps: final gain {:.3} dB, 3 dB loss probability {:.4}; wrote {}",
                cfg.n_runs,
                cfg.horizon,
                r.trace.mean_gain_db[last],
                r.trace.p_loss_3db[last],
                cfg.out_dir.display()
            );
        }
        Command::Compare { variants } => {
            let list = variants
                .split(',')
                .map(|n| variant(n.trim(), &cfg).map(|c| (n.trim().to_string(), c)))
                .collect::<Result<Vec<_>>>()?;
            let cmp = compare_variants(&list)?;
            let path = cfg.out_dir.join("compare.csv");
            cmp.write_csv(create(&path)?).map_err(|e| io_err(&path, e))?;
            for (name, t) in cmp.names.iter().zip(&cmp.traces) {
                let last = t.len() - 1;
                println!("{name}: final gain {:.3} dB, 3 dB loss probability {:.4}", t.mean_gain_db[last], t.p_loss_3db[last]);
            }
        }
        Command::VerifyBounds => {
            let runs = cli.common.runs.unwrap_or(50);
            let horizon = cli.common.horizon.unwrap_or(10_000);
            let greedy = reference_spec(horizon);
            let mut risky = greedy.clone();
            risky.acceptance = Some(vec![0.7; greedy.p_opt.len()]);
            for (name, spec) in [("greedy", greedy), ("risk_aware", risky)] {
                let t = run_bound_check(&spec, runs, cfg.seed)?;
                write_bound(&cfg.out_dir.join(format!("{name}.csv")), &t)?;
                let bound = if spec.acceptance.is_some() { &t.bound_t2 } else { &t.bound_t1 };
                let held = t.mean_regret.iter().zip(bound).all(|(r, b)| r <= b);
                let last = horizon - 1;
                println!("{name}: regret {:.2} vs bound {:.2} at n={horizon}; below bound throughout: {held}", t.mean_regret[last], bound[last]);
            }
        }
        Command::CheckLemma => {
            let geom = ArrayGeometry::half_wave(cfg.array_nx, cfg.array_ny)?;
            let pts = lemma_sweep(&geom, 2000)?;
            let path = cfg.out_dir.join("lemma.csv");
            let mut w = create(&path)?;
            let mut body = || -> std::io::Result<()> {
                writeln!(w, "phi0_deg,delta_deg,lhs,rhs,slack")?;
                for p in &pts {
                    writeln!(w, "{:.6},{:.6},{:.9},{:.9},{:.3e}", p.phi0_deg, p.delta_deg, p.lhs, p.rhs, p.slack())?;
                }
                Ok(())
            };
            body().map_err(|e| io_err(&path, e))?;
            let worst = pts.iter().map(|p| p.slack()).fold(f64::INFINITY, f64::min);
            println!("{} points, minimum slack {worst:.3e}", pts.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
