use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use whynot_core::catalog::{load_catalog, Catalog};
use whynot_core::encoder::encode;
use whynot_core::evalharness::{run_eval, EvalConfig, DEFAULT_LEVELS};
use whynot_core::explainer::{explain, Explained};
use whynot_core::llm_gateway::{Gateway, GatewayConfig, GatewayMode};
use whynot_core::queryparse::{parse_llm, restate, to_foil};
use whynot_core::refiner::refine_llm;
use whynot_core::scheduler::{generate_schedule, next_schedule, Generated, Next, Schedule};
use whynot_server::{router, AppState};

#[derive(Parser)]
#[command(name = "whynot", version, about = "Course schedules you can ask \"why not?\" about")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Print the first valid schedules.
    Schedule {
        #[command(flatten)]
        common: CommonArgs,
        /// How many distinct schedules to print.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Parse a question against the first schedule and restate it.
    Ask {
        #[command(flatten)]
        common: CommonArgs,
        question: String,
    },
    /// Answer a question about the first schedule.
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        question: String,
    },
    /// Run the accuracy harness and write a CSV report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Catalog JSON file. Defaults to the bundled sample catalog.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args, Clone)]
struct LlmArgs {
    #[arg(long, default_value = "disabled")]
    llm_mode: GatewayMode,
    /// Chat-completion endpoint URL (live mode).
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4.1")]
    llm_model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "WHYNOT_LLM_API_KEY")]
    llm_key_env: String,
    /// Stub fixture file (stub mode).
    #[arg(long)]
    llm_fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    llm_timeout: u64,
}

impl LlmArgs {
    fn gateway(&self) -> Result<Gateway> {
        Ok(Gateway::from_config(&GatewayConfig {
            mode: self.llm_mode,
            endpoint: self.llm_endpoint.clone(),
            model: self.llm_model.clone(),
            credential_env: self.llm_key_env.clone(),
            timeout_secs: self.llm_timeout,
            fixtures: self.llm_fixtures.clone(),
        })?)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Where session histories are kept. Without it nothing is persisted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Directory of static files served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Comma-separated complexity levels.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
    levels: Vec<usize>,
    /// Queries per level.
    #[arg(long, conflicts_with = "total")]
    n: Option<usize>,
    /// Total queries, split evenly over the levels.
    #[arg(long)]
    total: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
}

fn catalog(path: Option<&PathBuf>) -> Result<Catalog> {
    match path {
        Some(p) => load_catalog(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Catalog::sample()),
    }
}

fn first_schedule(catalog: &Catalog) -> Result<Schedule> {
    match generate_schedule(&mut encode(catalog)) {
        Generated::Schedule(s) => Ok(s),
        Generated::Infeasible => bail!("the catalog admits no valid schedule"),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let catalog = catalog(args.catalog.as_ref()).map_err(|e| format!("{e:#}"));
    if let Err(e) = &catalog {
        log::error!("{e}; session creation will answer 503");
    }
    let state = AppState::new(catalog, args.llm.gateway()?, args.data_dir);
    let restored = state.restore_sessions().context("restoring sessions")?;
    if restored > 0 {
        log::info!("restored {restored} session(s)");
    }
    let app = router(Arc::new(state), args.static_dir.as_deref());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.listen).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve(args) => serve(args),
        Command::Schedule { common, count } => {
            let cat = catalog(common.catalog.as_ref())?;
            let mut kb = encode(&cat);
            let Generated::Schedule(mut s) = generate_schedule(&mut kb) else {
                bail!("the catalog admits no valid schedule");
            };
            for i in 0..count {
                if i > 0 {
                    match next_schedule(&mut kb, &s) {
                        Next::Schedule(n) => s = n,
                        Next::Exhausted => {
                            println!("(no further schedules)");
                            break;
                        }
                    }
                    println!();
                }
                print!("{s}");
            }
            Ok(())
        }
        Command::Ask { common, question } => {
            let cat = catalog(common.catalog.as_ref())?;
            let sched = first_schedule(&cat)?;
            let q = parse_llm(&question, &sched, &cat, &common.llm.gateway()?)?;
            println!("{}", restate(&q, &sched).text);
            println!("{}", serde_json::to_string_pretty(&q)?);
            Ok(())
        }
        Command::Explain { common, question } => {
            let cat = catalog(common.catalog.as_ref())?;
            let gateway = common.llm.gateway()?;
            let sched = first_schedule(&cat)?;
            println!("{sched}");
            let q = parse_llm(&question, &sched, &cat, &gateway)?;
            println!("{}\n", restate(&q, &sched).text);
            let mut kb = encode(&cat);
            let foil = to_foil(&q, &sched, &kb)?;
            match explain(&mut kb, &foil)? {
                Explained::Alternative(s) => println!("That is possible, for example:\n{s}"),
                Explained::Minimal(e) => {
                    println!("{}", refine_llm(&e, &sched, &cat, &gateway).text);
                    for (id, label) in e.constraint_ids.iter().zip(&e.labels) {
                        println!("  [{id}] {label}");
                    }
                }
            }
            Ok(())
        }
        Command::Eval(args) => {
            let cat = catalog(args.catalog.as_ref())?;
            if args.levels.is_empty() {
                return Err(anyhow!("--levels needs at least one level"));
            }
            let config = match (args.n, args.total) {
                (_, Some(total)) => EvalConfig::with_total(&args.levels, total, args.seed),
                (n, None) => EvalConfig::uniform(&args.levels, n.unwrap_or(50), args.seed),
            };
            let report = run_eval(&cat, &config, &args.llm.gateway()?)?;
            let file = std::fs::File::create(&args.out)
                .with_context(|| format!("creating {}", args.out.display()))?;
            report.write_csv(file)?;
            print!("{}", report.to_csv_string());
            for f in report.failures.iter().take(10) {
                eprintln!("failed (level {}): {} -> {}", f.level, f.query, f.reason);
            }
            Ok(())
        }
    }
}
