use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depgraph::config::{Representation, RunConfig};
use depgraph::corpus::{generate_synthetic_corpus, Split};
use depgraph::metrics::MetricsReport;
use depgraph::pipeline::{predict_graph_file, Pipeline};
use depgraph::report::{emit_scatter_plot, read_report, RunReport};
use depgraph::{io, Error};

/// Depression-severity estimation from facial video: short-term feature
/// learning, graph encoding and video-level regression.
#[derive(Parser)]
#[command(name = "depgraph", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Configuration override, `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write it with a manifest.
    Synth {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Train the short-term model.
    TrainShort,
    /// Extract per-slice features of every video.
    Extract,
    /// Build the video-level representation of every video.
    Encode {
        /// Video representation: spg, seg, spv, sph, sta or atp (overrides `representation`).
        #[arg(long)]
        repr: Option<Representation>,
    },
    /// Train the video-level head.
    TrainHead {
        /// Video representation: spg, seg, spv, sph, sta or atp (overrides `representation`).
        #[arg(long)]
        repr: Option<Representation>,
    },
    /// Score validation and test splits and write the report and plot.
    Eval {
        /// Video representation: spg, seg, spv, sph, sta or atp (overrides `representation`).
        #[arg(long)]
        repr: Option<Representation>,
    },
    /// Run every stage end to end (same as `eval`).
    Run {
        /// Video representation: spg, seg, spv, sph, sta or atp (overrides `representation`).
        #[arg(long)]
        repr: Option<Representation>,
    },
    /// Score another corpus with already trained models.
    CrossEval {
        /// Manifest of the corpus to score.
        #[arg(long, conflicts_with = "synth_seed")]
        manifest: Option<PathBuf>,
        /// Score a synthetic corpus generated with this seed instead.
        #[arg(long)]
        synth_seed: Option<u64>,
        /// Split to score: train, validation or test.
        #[arg(long, default_value = "test")]
        split: Split,
        /// Video representation: spg, seg, spv, sph, sta or atp (overrides `representation`).
        #[arg(long)]
        repr: Option<Representation>,
    },
    /// Print a stored report and redraw its scatter plot.
    Report {
        /// Defaults to `<out>/report.json`.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Score one graph file with the trained head and print the score.
    Predict {
        #[arg(long)]
        graph: PathBuf,
        /// Video representation: spg, seg, spv, sph, sta or atp (overrides `representation`).
        #[arg(long)]
        repr: Option<Representation>,
    },
}

fn load_config(g: &Global, repr: Option<Representation>) -> anyhow::Result<RunConfig> {
    let mut overrides = g.set.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &g.out {
        overrides.push(format!("out_dir={:?}", out.display().to_string()));
    }
    if let Some(r) = repr {
        overrides.push(format!("representation={r}"));
    }
    Ok(RunConfig::load(g.config.as_deref(), &overrides)?)
}

fn print_metrics(label: &str, m: &MetricsReport) {
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "{label:<10} n={:<4} rmse={:.4} mae={:.4} pcc={} ccc={}",
        m.n,
        m.rmse,
        m.mae,
        fmt(m.pcc),
        fmt(m.ccc)
    );
}

fn print_report(r: &RunReport) {
    println!("representation {}", r.representation);
    print_metrics("validation", &r.validation);
    print_metrics("test", &r.test);
    print_metrics("atp test", &r.atp_test);
    println!("code |cos|  {:.4}", r.test_code_cosine);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Synth { dir } => {
            let cfg = load_config(g, None)?;
            let corpus = generate_synthetic_corpus(&cfg.corpus.synth, cfg.corpus_seed())?;
            let manifest = io::save_corpus(&dir, &corpus)?;
            println!("{}", manifest.display());
        }
        Command::TrainShort => {
            let p = Pipeline::new(load_config(g, None)?)?;
            let corpus = p.corpus()?;
            p.train_short_term(&corpus)?;
        }
        Command::Extract => {
            let p = Pipeline::new(load_config(g, None)?)?;
            let corpus = p.corpus()?;
            let params = p.train_short_term(&corpus)?;
            let videos = p.extract(&corpus, &params)?;
            println!("extracted {} videos", videos.len());
        }
        Command::Encode { repr } => {
            let p = Pipeline::new(load_config(g, repr)?)?;
            let corpus = p.corpus()?;
            let params = p.train_short_term(&corpus)?;
            let videos = p.extract(&corpus, &params)?;
            let encoded = p.encode(&videos, p.cfg.representation)?;
            println!("encoded {} videos as {}", encoded.len(), p.cfg.representation);
        }
        Command::TrainHead { repr } => {
            let p = Pipeline::new(load_config(g, repr)?)?;
            let corpus = p.corpus()?;
            let params = p.train_short_term(&corpus)?;
            let videos = p.extract(&corpus, &params)?;
            let encoded = p.encode(&videos, p.cfg.representation)?;
            p.train_head(&encoded, p.cfg.representation)?;
        }
        Command::Eval { repr } | Command::Run { repr } => {
            let p = Pipeline::new(load_config(g, repr)?)?;
            print_report(&p.run()?);
        }
        Command::CrossEval {
            manifest,
            synth_seed,
            split,
            repr,
        } => {
            let p = Pipeline::new(load_config(g, repr)?)?;
            let corpus = match (manifest, synth_seed) {
                (Some(m), _) => io::load_corpus(&m)?,
                (None, Some(seed)) => generate_synthetic_corpus(&p.cfg.corpus.synth, seed)?,
                (None, None) => p.corpus()?,
            };
            print_metrics(&split.to_string(), &p.cross_split_evaluate(&corpus, split)?);
        }
        Command::Report { path } => {
            let cfg = load_config(g, None)?;
            let path = path.unwrap_or_else(|| cfg.out_dir.join("report.json"));
            let report: RunReport = read_report(&path)?;
            let (p, l): (Vec<f64>, Vec<f64>) = report.test_predictions.iter().map(|x| (x.prediction, x.label)).unzip();
            emit_scatter_plot(&p, &l, &path.with_file_name("scatter.png"))?;
            print_report(&report);
        }
        Command::Predict { graph, repr } => {
            println!("{}", predict_graph_file(load_config(g, repr)?, &graph)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
