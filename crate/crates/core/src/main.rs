use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pgroute::harness::{run_experiment_to_files, ExperimentReport};
use pgroute::oracles;
use pgroute::{
    batch, load_config, preset, BatchSummary, ConvergenceCriterion, ExperimentConfig, PresetName,
    RewardComponent,
};

#[derive(Parser)]
#[command(name = "pgroute", version, about = "Policy-gradient packet routing experiments")]
struct Cli {
    /// Directory for CSV and θ output when a config does not name its own files.
    #[arg(long, global = true, env = "PGROUTE_OUT_DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Debug, Default)]
struct Overrides {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Emit a metrics row every N ticks.
    #[arg(long)]
    sample_every: Option<u64>,
    /// Emit a metrics row for every tick.
    #[arg(long)]
    per_tick: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.steps {
            cfg.run.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(b) = self.beta {
            cfg.learner.beta = b;
        }
        if let Some(g) = self.gamma {
            cfg.learner.gamma = g;
        }
        if let Some(k) = self.sample_every {
            cfg.run.sample_every = k;
        }
        cfg.run.per_tick |= self.per_tick;
        cfg.validate().context("invalid parameters after applying command-line overrides")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one of the built-in experiments.
    Preset {
        #[arg(value_parser = parse_preset)]
        name: PresetName,
        #[command(flatten)]
        overrides: Overrides,
        /// Print the preset as a JSON config and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Run several seeds in parallel and report time-to-threshold.
    Batch {
        /// A config file path or a preset name.
        target: String,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Reward level that counts as converged.
        #[arg(long, default_value_t = -8.0, allow_hyphen_values = true)]
        threshold: f64,
        /// Trailing window (ticks) the threshold is checked against.
        #[arg(long, default_value_t = 10_000)]
        window: u64,
        #[arg(long, value_enum, default_value_t = Component::Underlying)]
        component: Component,
        /// Also run every seed with all shaping penalties set to zero.
        #[arg(long)]
        ablate_shaping: bool,
        /// Write one CSV per seed into the output directory.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate an exact analytic baseline.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Expected per-tick reward on the two-link network for top-link probability p.
    Contention {
        #[arg(long, default_value_t = 0.25)]
        p: f64,
        #[arg(long, default_value_t = 21.0)]
        d: f64,
    },
    /// Reward-maximising top-link probability for drop penalty d.
    ContentionOptimal {
        #[arg(long, default_value_t = 21.0)]
        d: f64,
    },
    /// Expected per-packet cost on the augmented Braess network.
    Braess {
        #[arg(long, default_value_t = 0.5)]
        p_left: f64,
        #[arg(long, default_value_t = 1.0)]
        p_ef: f64,
    },
    /// Per-packet cost for fixed path counts, e.g. `ACDB=3 AEFB=3`.
    BraessFlows {
        #[arg(required = true)]
        flows: Vec<String>,
    },
    /// Best achievable average reward on the triangle network.
    Triangle,
    /// Best achievable average reward on the six-node network.
    SixNode,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Component {
    Underlying,
    Total,
}

fn parse_preset(s: &str) -> Result<PresetName, String> {
    s.parse().map_err(|e: pgroute::presets::UnknownPreset| e.to_string())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = load_config(&config)?;
            overrides.apply(&mut cfg)?;
            run_one(cfg, &cli.out)
        }
        Command::Preset {
            name,
            overrides,
            dump_config,
        } => {
            let mut cfg = preset(name);
            overrides.apply(&mut cfg)?;
            if dump_config {
                println!("{}", cfg.to_json_string());
                return Ok(());
            }
            run_one(cfg, &cli.out)
        }
        Command::Batch {
            target,
            seeds,
            threshold,
            window,
            component,
            ablate_shaping,
            csv,
            overrides,
        } => {
            let mut cfg = resolve_target(&target)?;
            overrides.apply(&mut cfg)?;
            let criterion = ConvergenceCriterion {
                threshold,
                window,
                component: match component {
                    Component::Underlying => RewardComponent::Underlying,
                    Component::Total => RewardComponent::Total,
                },
            };
            let dir = csv.then_some(cli.out.as_path());
            print_batch(&batch(&cfg, &seeds, criterion, dir)?);
            if ablate_shaping {
                let mut plain = cfg.clone();
                plain.name = format!("{}-unshaped", cfg.name);
                plain.shaping.cycle_penalty = 0.0;
                plain.shaping.drop_penalty = 0.0;
                print_batch(&batch(&plain, &seeds, criterion, dir)?);
            }
            Ok(())
        }
        Command::Oracle { which } => oracle(which),
    }
}

fn resolve_target(target: &str) -> Result<ExperimentConfig> {
    if let Ok(name) = target.parse::<PresetName>() {
        if !Path::new(target).exists() {
            return Ok(preset(name));
        }
    }
    Ok(load_config(target)?)
}

fn run_one(mut cfg: ExperimentConfig, out: &Path) -> Result<()> {
    let stem = format!("{}-seed{}", cfg.name, cfg.run.seed);
    cfg.output.csv.get_or_insert_with(|| out.join(format!("{stem}.csv")));
    cfg.output.theta.get_or_insert_with(|| out.join(format!("{stem}-theta.json")));
    let started = std::time::Instant::now();
    let report = run_experiment_to_files(&cfg)?;
    print_summary(&cfg, &report, started.elapsed());
    Ok(())
}

fn print_summary(cfg: &ExperimentConfig, report: &ExperimentReport, elapsed: std::time::Duration) {
    let r = &report.result;
    println!("experiment   {} (seed {})", cfg.name, cfg.run.seed);
    println!("ticks        {} in {:.1}s", r.steps, elapsed.as_secs_f64());
    println!("running mean {:.4}", r.running_mean);
    if let Some(row) = &report.last_row {
        println!("reward_ma    {:.4}", row.reward_ma);
    }
    for (name, p) in &report.final_probabilities {
        println!("{name:<12} {p:.4}");
    }
    println!(
        "packets      generated {} delivered {} dropped {} cycles {}",
        r.totals.generated, r.totals.delivered, r.totals.dropped, r.totals.cycles
    );
    if let Some(p) = &cfg.output.csv {
        println!("csv          {} ({} rows)", p.display(), report.rows);
    }
    if let Some(p) = &cfg.output.theta {
        println!("theta        {}", p.display());
    }
}

fn print_batch(s: &BatchSummary) {
    println!(
        "{}: threshold {} over {} ticks ({:?} reward)",
        s.name, s.criterion.threshold, s.criterion.window, s.criterion.component
    );
    println!("  {:>8} {:>14} {:>14} {:>14}", "seed", "ticks-to-hit", "final-window", "running-mean");
    for seed in &s.seeds {
        let hit = seed
            .ticks_to_threshold
            .map_or_else(|| "-".to_string(), |t| t.to_string());
        println!(
            "  {:>8} {:>14} {:>14.4} {:>14.4}",
            seed.seed, hit, seed.final_window_mean, seed.running_mean
        );
    }
    match s.median_ticks_to_threshold {
        Some(m) => println!("  median ticks-to-threshold {m}"),
        None => println!("  median ticks-to-threshold: not reached by half the seeds"),
    }
    println!("  mean final-window reward {:.4}", s.mean_final_reward);
}

fn oracle(which: OracleCmd) -> Result<()> {
    match which {
        OracleCmd::Contention { p, d } => {
            println!("{}", oracles::contention_expected_reward(p, d)?);
        }
        OracleCmd::ContentionOptimal { d } => {
            let p = oracles::contention_optimal_p(d);
            println!("p = {p}, reward = {}", oracles::contention_expected_reward(p, d)?);
        }
        OracleCmd::Braess { p_left, p_ef } => {
            println!("{}", oracles::braess_expected_cost(p_left, p_ef)?);
        }
        OracleCmd::BraessFlows { flows } => {
            let (t, _) = pgroute::presets::braess1_network();
            let mut parsed = Vec::new();
            for f in &flows {
                let Some((path, count)) = f.split_once('=') else {
                    bail!("expected PATH=COUNT, got {f:?}");
                };
                let count: u64 = count.parse().with_context(|| format!("bad count in {f:?}"))?;
                parsed.push((oracles::path_from_labels(&t, path)?, count));
            }
            println!("{}", oracles::braess_cost_for_flows(&t, &parsed)?);
        }
        OracleCmd::Triangle => println!("{}", oracles::triangle_optimal_average_reward()),
        OracleCmd::SixNode => {
            let (t, traffic) = pgroute::presets::six_node_network();
            println!("{}", oracles::optimal_link_delay_reward(&t, &traffic)?);
        }
    }
    Ok(())
}
