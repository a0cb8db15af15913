//! Command-line entry point wiring every module: servers, data generation,
//! simulation, splitting, calibration, evaluation, flows, and reporting.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::audit::AuditLog;
use crate::authz::{AuthzConfig, AuthzMode, AuthzServer};
use crate::clock::SystemClock;
use crate::config::AppConfig;
use crate::domain::{MatchRequest, TaskSample, ToolRegistry};
use crate::e2e::{self, preset_by_name, EnvConfig, TestEnv};
use crate::eval::{
    evaluate, render_fpr_fnr_table, render_metrics_table, EvalOptions, MetricsReport, ReportFormat,
};
use crate::matchers::calibrate_threshold;
use crate::pipeline::{
    generate_dataset, ingest_manifest_dir, read_matches_file, read_tasks_file, simulate_matches,
    split_dataset, write_matches_file, write_tasks_file, SplitManifest,
};
use crate::proxy::{ProxyConfig, TrustedProxy};
use crate::resource::{spawn_revocation_poller, ResourceConfig, ResourceServer};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "astra",
    version,
    about = "Delegated authorization with semantic task-to-scope matching: servers, dataset pipeline, and evaluation harness"
)]
struct Cli {
    /// TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice (data sampling, ids, PKCE material).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Emit machine-readable JSON logs.
    #[arg(long, global = true)]
    log_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the authorization server.
    ServeAs {
        /// Manifest directory defining the scope registry.
        #[arg(
            long,
            required_unless_present = "multi_registry",
            conflicts_with = "multi_registry"
        )]
        registry: Option<PathBuf>,
        /// Parent directory whose subdirectories each become a virtual
        /// instance mounted under /<name>/.
        #[arg(long)]
        multi_registry: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run the trusted proxy.
    ServeProxy {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        as_base: Option<String>,
    },
    /// Run the simulated resource server.
    ServeRs {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        /// Poll this authorization server's revocation list.
        #[arg(long)]
        as_base: Option<String>,
    },
    /// Generate task datasets from MCP manifests.
    GenData {
        #[arg(long)]
        manifests: PathBuf,
        /// Tools per task; omit to generate all of 1, 2, 3.
        #[arg(long)]
        n: Option<u8>,
        /// Tasks per tool set.
        #[arg(long, short)]
        m: Option<u32>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Use the live LM backend (LM_* environment variables).
        #[arg(long)]
        live: bool,
    },
    /// Simulate correct/wrong/null match requests over generated tasks.
    Simulate {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        manifests: PathBuf,
        #[arg(long)]
        wrong_ratio: Option<f64>,
        #[arg(long)]
        null_ratio: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Partition tasks into validation/test with disjoint servers.
    Split {
        /// Task files (repeatable); all samples are pooled.
        #[arg(long, required = true)]
        tasks: Vec<PathBuf>,
        #[arg(long)]
        val_fraction: Option<f64>,
        #[arg(long, default_value = "split.json")]
        out: PathBuf,
    },
    /// Calibrate the similarity threshold on a validation set.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        /// Restrict to the validation side of this split manifest.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        live: bool,
    },
    /// Evaluate a matcher over a simulated dataset.
    Eval {
        #[arg(long)]
        matcher: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
        /// Similarity threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        /// Restrict to one side of a split manifest.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_parser = ["validation", "test"])]
        side: Option<String>,
        /// Maximum tolerated matcher error rate before a nonzero exit.
        #[arg(long, default_value_t = 1.0)]
        error_budget: f64,
        /// Use the live LM backend (informational run; LM_* env vars).
        #[arg(long)]
        live: bool,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Drive a full delegated-authorization flow against in-process servers.
    E2e {
        #[arg(long, value_parser = ["baseline", "enhanced"])]
        flow: String,
        #[arg(long, default_value = "fig1-attack")]
        preset: String,
        #[arg(long, default_value = "mock")]
        matcher: String,
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Manifest directory; defaults to the built-in registry.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Render metric reports (tables or trade-off view) from eval JSON.
    Report {
        /// Metrics JSON files produced by `eval --format json`.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit the FPR-vs-FNR trade-off table instead of the metrics table.
        #[arg(long)]
        trade_off: bool,
    },
}

/// Parses argv and runs the selected command, mapping every outcome to an
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };

    init_logging(cli.log_json);

    let mut config = match &cli.config {
        Some(path) => match AppConfig::load(path) {
            Ok(cfg) => cfg,
            Err(err) => {
                eprintln!("error: {err}");
                return 1;
            }
        },
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match dispatch(cli.command, &config) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn init_logging(json: bool) {
    use tracing_subscriber::EnvFilter;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    let result = if json {
        builder.json().try_init()
    } else {
        builder.try_init()
    };
    // Re-initialization in tests is fine to ignore.
    let _ = result;
}

/// Builds one authorization server instance over a registry directory.
/// For virtual instances the issuer gains the selecting path segment.
fn build_authz_server(
    config: &AppConfig,
    registry_dir: &Path,
    segment: Option<&str>,
) -> Result<Arc<AuthzServer>, Box<dyn Error>> {
    let registry = registry_from_dir(registry_dir)?;
    let gateway = config.build_gateway(false)?;
    let matcher = config.build_matcher(&config.matcher.kind, Arc::clone(&registry), gateway)?;
    let audit = match &config.authz.audit_log {
        Some(path) => AuditLog::to_file(Path::new(path))?,
        None => AuditLog::discard(),
    };
    let issuer = match segment {
        Some(segment) => format!("{}/{segment}", config.authz.issuer.trim_end_matches('/')),
        None => config.authz.issuer.clone(),
    };
    let mut authz_cfg = AuthzConfig::new(
        issuer,
        &config.authz.proxy_secret,
        config.authz.signing_key.as_bytes(),
    );
    authz_cfg.grant_ttl_secs = config.authz.grant_ttl_secs;
    authz_cfg.token_ttl_secs = config.authz.token_ttl_secs;
    authz_cfg.strict_scope_mode = config.authz.strict_scope_mode;
    authz_cfg.scopes_supported = Some(config.authz.scopes_supported.clone());
    authz_cfg.rng_seed = Some(config.seed);
    authz_cfg.mode = match config.authz.mode.as_str() {
        "static" => AuthzMode::Static {
            allowed_scopes: if config.authz.allowed_scopes.is_empty() {
                registry.all_scopes().into_iter().collect()
            } else {
                config.authz.allowed_scopes.iter().cloned().collect()
            },
        },
        _ => AuthzMode::Semantic,
    };
    Ok(Arc::new(AuthzServer::new(
        authz_cfg,
        registry,
        matcher,
        Arc::new(SystemClock),
        audit,
    )?))
}

fn registry_from_dir(dir: &Path) -> Result<Arc<ToolRegistry>, Box<dyn Error>> {
    let manifests = ingest_manifest_dir(dir)?;
    if manifests.is_empty() {
        return Err(format!("no manifests found under {}", dir.display()).into());
    }
    Ok(Arc::new(ToolRegistry::from_manifests(manifests)?))
}

fn filter_by_split(
    requests: Vec<MatchRequest>,
    split: Option<&PathBuf>,
    side: &str,
) -> Result<Vec<MatchRequest>, Box<dyn Error>> {
    let Some(split_path) = split else {
        return Ok(requests);
    };
    let manifest = SplitManifest::read(split_path)?;
    Ok(requests
        .into_iter()
        .filter(|r| {
            r.task
                .server_id()
                .and_then(|s| manifest.side_of(s))
                .is_some_and(|found| found == side)
        })
        .collect())
}

fn dispatch(command: Command, config: &AppConfig) -> CliResult {
    match command {
        Command::GenData {
            manifests,
            n,
            m,
            out,
            live,
        } => {
            let registry = registry_from_dir(&manifests)?;
            let gateway = config.build_gateway(live)?;
            let m = m.unwrap_or(config.pipeline.tasks_per_set);
            let ns: Vec<u8> = n.map(|n| vec![n]).unwrap_or_else(|| vec![1, 2, 3]);
            std::fs::create_dir_all(&out)?;
            for n in ns {
                let tasks = generate_dataset(&registry, n, m, config.seed, gateway.as_ref())?;
                let path = out.join(format!("tasks_N{n}.jsonl"));
                write_tasks_file(&path, config.seed, n, &tasks)?;
                println!("wrote {} tasks to {}", tasks.len(), path.display());
            }
            Ok(())
        }
        Command::Simulate {
            tasks,
            manifests,
            wrong_ratio,
            null_ratio,
            out,
        } => {
            let registry = registry_from_dir(&manifests)?;
            let (header, samples) = read_tasks_file(&tasks)?;
            let mut dataset_cfg = crate::domain::DatasetConfig::new(header.n_tools, config.seed);
            dataset_cfg.tasks_per_set = config.pipeline.tasks_per_set;
            dataset_cfg.wrong_ratio = wrong_ratio.unwrap_or(config.pipeline.wrong_ratio);
            dataset_cfg.null_ratio = null_ratio.unwrap_or(config.pipeline.null_ratio);
            let requests = simulate_matches(&samples, &dataset_cfg, &registry)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("matches_N{}.jsonl", header.n_tools));
            write_matches_file(&path, config.seed, header.n_tools, &requests)?;
            println!(
                "wrote {} match requests to {}",
                requests.len(),
                path.display()
            );
            Ok(())
        }
        Command::Split {
            tasks,
            val_fraction,
            out,
        } => {
            let mut samples: Vec<TaskSample> = Vec::new();
            for path in &tasks {
                samples.extend(read_tasks_file(path)?.1);
            }
            let fraction = val_fraction.unwrap_or(config.pipeline.val_fraction);
            let (validation, test, manifest) = split_dataset(&samples, config.seed, fraction)?;
            manifest.write(&out)?;
            println!(
                "split {} samples into {} validation / {} test across {}+{} servers ({})",
                samples.len(),
                validation.len(),
                test.len(),
                manifest.validation_servers.len(),
                manifest.test_servers.len(),
                out.display()
            );
            Ok(())
        }
        Command::Calibrate {
            data,
            registry,
            split,
            out,
            live,
        } => {
            let registry = registry_from_dir(&registry)?;
            let (_, requests) = read_matches_file(&data)?;
            let requests = filter_by_split(requests, split.as_ref(), "validation")?;
            if requests.is_empty() {
                return Err("no validation requests to calibrate on".into());
            }
            let gateway = config.build_gateway(live)?;
            let threshold =
                calibrate_threshold(&requests, registry, gateway, &config.semsim_config())?;
            println!("calibrated similarity threshold: {threshold}");
            if let Some(out) = out {
                std::fs::write(
                    &out,
                    serde_json::to_string_pretty(&serde_json::json!({
                        "threshold": threshold,
                        "calibrated": true,
                        "samples": requests.len(),
                    }))?,
                )?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Eval {
            matcher,
            data,
            registry,
            out,
            format,
            threshold,
            split,
            side,
            error_budget,
            live,
            parallelism,
        } => {
            let registry = registry_from_dir(&registry)?;
            let (_, requests) = read_matches_file(&data)?;
            let side = side.unwrap_or_else(|| "test".into());
            let requests = filter_by_split(requests, split.as_ref(), &side)?;
            if requests.is_empty() {
                return Err("no match requests to evaluate".into());
            }
            let mut config = config.clone();
            if let Some(threshold) = threshold {
                config.matcher.threshold = threshold;
                config.matcher.calibrated = true;
            }
            let gateway = config.build_gateway(live)?;
            let matcher = config.build_matcher(&matcher, Arc::clone(&registry), gateway)?;
            let dataset_id = data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into());
            let report = evaluate(
                matcher.as_ref(),
                &requests,
                &EvalOptions {
                    dataset_id,
                    parallelism,
                    cache: None,
                },
            )?;
            let format: ReportFormat = format.parse()?;
            let rendered = match format {
                ReportFormat::Json => serde_json::to_string_pretty(&[&report])?,
                _ => render_metrics_table(std::slice::from_ref(&report), format)?,
            };
            match &out {
                Some(path) => {
                    std::fs::write(path, &rendered)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{rendered}"),
            }
            let error_rate = report.matcher_errors as f64 / requests.len() as f64;
            if error_rate > error_budget {
                return Err(crate::eval::EvalError::ErrorBudgetExceeded {
                    rate: error_rate,
                    budget: error_budget,
                }
                .into());
            }
            Ok(())
        }
        Command::E2e {
            flow,
            preset,
            matcher,
            transcript,
            registry,
        } => {
            let preset =
                preset_by_name(&preset).ok_or_else(|| format!("unknown preset {preset:?}"))?;
            let registry = match registry {
                Some(dir) => registry_from_dir(&dir)?,
                None => Arc::new(e2e::env::builtin_registry()),
            };
            let mut config = config.clone();
            if matcher == "mock" && config.matcher.deny_scopes.is_empty() {
                // The scripted attack preset: deny exactly the extra scopes.
                config.matcher.deny_scopes = preset.extra_scopes.clone();
            }
            let gateway = config.build_gateway(false)?;
            let matcher = config.build_matcher(&matcher, Arc::clone(&registry), gateway)?;

            let runtime = tokio::runtime::Runtime::new()?;
            let transcript_value = runtime.block_on(async {
                let clock = Arc::new(SystemClock);
                let mut env_cfg = EnvConfig::new(matcher, clock);
                env_cfg.registry = Arc::clone(&registry);
                env_cfg.seed = config.seed;
                if flow == "baseline" {
                    env_cfg = env_cfg.static_mode();
                }
                let env = TestEnv::spawn(env_cfg).await;
                let flow_env = env.flow_env(config.seed);
                let result = if flow == "baseline" {
                    e2e::run_baseline_flow(
                        &flow_env,
                        &registry,
                        &preset.prompt,
                        &preset.requested_scopes(),
                    )
                    .await
                } else {
                    e2e::run_enhanced_flow(
                        &flow_env,
                        &registry,
                        &preset.prompt,
                        &preset.requested_scopes(),
                        preset.tamper_prompt.as_deref(),
                    )
                    .await
                };
                env.shutdown();
                result
            });

            println!(
                "flow={} preset={} granted={:?} access={:?} post_finalize={:?}{}",
                transcript_value.flow,
                preset.name,
                transcript_value.granted_scopes,
                transcript_value.access_results,
                transcript_value.post_finalize_results,
                transcript_value
                    .failed_step
                    .as_deref()
                    .map(|s| format!(" FAILED at {s}"))
                    .unwrap_or_default(),
            );
            if let Some(path) = transcript {
                std::fs::write(&path, serde_json::to_string_pretty(&transcript_value)?)?;
                println!("wrote transcript to {}", path.display());
            }
            if let Some(step) = transcript_value.failed_step {
                return Err(format!("flow failed at step {step}").into());
            }
            Ok(())
        }
        Command::Report {
            input,
            format,
            out,
            trade_off,
        } => {
            let mut reports: Vec<MetricsReport> = Vec::new();
            for path in &input {
                let body = std::fs::read_to_string(path)?;
                // Accept either a single report or an array.
                match serde_json::from_str::<Vec<MetricsReport>>(&body) {
                    Ok(mut list) => reports.append(&mut list),
                    Err(_) => reports.push(serde_json::from_str(&body)?),
                }
            }
            let format: ReportFormat = format.parse()?;
            let rendered = if trade_off {
                render_fpr_fnr_table(&reports, format)?
            } else {
                render_metrics_table(&reports, format)?
            };
            match &out {
                Some(path) => {
                    std::fs::write(path, &rendered)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{rendered}"),
            }
            Ok(())
        }
        Command::ServeAs {
            registry,
            multi_registry,
            listen,
        } => {
            let listen = listen.unwrap_or_else(|| config.authz.listen.clone());
            if let Some(parent) = multi_registry {
                // One virtual instance per registry subdirectory, selected
                // by path segment; no cross-instance state.
                let mut instances = Vec::new();
                let mut entries: Vec<_> = std::fs::read_dir(&parent)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir())
                    .collect();
                entries.sort();
                for dir in entries {
                    let segment = dir
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let server = build_authz_server(config, &dir, Some(&segment))?;
                    println!("mounted instance /{segment}");
                    instances.push((segment, server));
                }
                if instances.is_empty() {
                    return Err(
                        format!("no registry subdirectories under {}", parent.display()).into(),
                    );
                }
                return serve_until_signal(crate::authz::multi_router(instances), &listen);
            }
            let server = build_authz_server(config, &registry.expect("clap enforces"), None)?;
            serve_until_signal(crate::authz::router(server), &listen)
        }
        Command::ServeProxy { listen, as_base } => {
            let audit = match &config.proxy.audit_log {
                Some(path) => AuditLog::to_file(Path::new(path))?,
                None => AuditLog::discard(),
            };
            let mut proxy_cfg = ProxyConfig::new(
                as_base.unwrap_or_else(|| config.proxy.as_base.clone()),
                &config.authz.proxy_secret,
            );
            proxy_cfg.max_task_secs = config.proxy.max_task_secs;
            proxy_cfg.strict_prompt_mode = config.proxy.strict_prompt_mode;
            proxy_cfg.rng_seed = Some(config.seed);
            let proxy = Arc::new(TrustedProxy::new(proxy_cfg, Arc::new(SystemClock), audit));
            let listen = listen.unwrap_or_else(|| config.proxy.listen.clone());
            serve_until_signal(crate::proxy::router(proxy), &listen)
        }
        Command::ServeRs {
            registry,
            listen,
            as_base,
        } => {
            let registry = registry_from_dir(&registry)?;
            let revocations = Arc::new(crate::authz::RevocationList::default());
            let as_base = as_base.or_else(|| config.resource.as_base.clone());
            if let Some(base) = as_base {
                spawn_revocation_poller(
                    base,
                    Arc::clone(&revocations),
                    std::time::Duration::from_millis(config.resource.poll_period_ms),
                );
            }
            let mut rs_cfg = ResourceConfig::example_fixture();
            rs_cfg.base_url = config.resource.base_url.clone();
            rs_cfg.verify_key = config.authz.signing_key.as_bytes().to_vec();
            rs_cfg.fronted_servers = if config.resource.fronted_servers.is_empty() {
                registry.server_ids().map(String::from).collect()
            } else {
                config.resource.fronted_servers.clone()
            };
            let server = Arc::new(ResourceServer::new(
                rs_cfg,
                registry,
                Arc::new(SystemClock),
                revocations,
            ));
            let listen = listen.unwrap_or_else(|| config.resource.listen.clone());
            serve_until_signal(crate::resource::router(server), &listen)
        }
    }
}

fn serve_until_signal(router: axum::Router, listen: &str) -> CliResult {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        println!("listening on {listen}");
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
