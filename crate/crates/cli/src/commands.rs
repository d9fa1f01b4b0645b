use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use syncore::divergence::{ablated_file_name, baseline_file_name};
use syncore::netmetrics::{modularity, threshold_top_fraction};
use syncore::pairwise::{pair_matrices_resumable, pair_matrices_with_progress, PairProgress};
use syncore::ranking::{
    ablation_order, layer_profile, layer_profile_csv, node_means, select_subset, subset_size,
    synergy_redundancy_rank,
};
use syncore::synthgen::{generate_logit_scenario_with, ScenarioShape};
use syncore::{
    ablation_curve, build_graph, global_efficiency, load_recording, save_recording, Error,
    HeadSubset, LogitTrace, OrderMode, PairMatrix, PairOptions, PromptAggregation, Result,
    SubsetMode, SynthKind, SynthSpec, WeightedGraph,
};

use crate::config::RunConfig;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    write(path, text)
}

/// Prefixes CSV text with a `# config` comment line.
fn with_config_line(config: &RunConfig, body: &str) -> String {
    format!("# config {}\n{body}", config.json())
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn timing(dir: &Path, command: &str, started: Instant, extra: Value) -> Result<()> {
    let mut v = json!({ "command": command, "wall_seconds": started.elapsed().as_secs_f64() });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    write_json(&dir.join("timing.json"), &v)
}

pub fn phid(
    config: RunConfig,
    aggregation: &str,
    checkpoint: bool,
    batch_pairs: usize,
) -> Result<()> {
    let started = Instant::now();
    let aggregation: PromptAggregation = aggregation
        .parse()
        .map_err(|_| Error::Validation(format!("unknown --aggregation {aggregation:?}")))?;
    let input = config.require_input()?;
    let config = config
        .with("aggregation", aggregation.as_str())
        .with("checkpoint", checkpoint);
    let rec = load_recording(&input)?;
    let dir = output_dir(&config)?;
    let opts = PairOptions {
        lag: config.lag,
        jitter: config.jitter,
        zscore: config.zscore,
        aggregation,
        ..PairOptions::default()
    };
    let progress = PairProgress::default();
    let mut run = if checkpoint {
        pair_matrices_resumable(
            &rec,
            &opts,
            &dir.join("pairs.checkpoint"),
            batch_pairs,
            &progress,
        )?
    } else {
        pair_matrices_with_progress(&rec, &opts, &progress)?
    };
    run.matrix.provenance.config = Some(config.json());
    run.matrix.save(dir.join("pairs.phim"))?;
    if checkpoint {
        fs::remove_file(dir.join("pairs.checkpoint"))?;
    }
    write(
        &dir.join("synergy.csv"),
        with_config_line(&config, &run.matrix.synergy_csv()),
    )?;
    write(
        &dir.join("redundancy.csv"),
        with_config_line(&config, &run.matrix.redundancy_csv()),
    )?;
    let n = rec.n_units();
    let off_mean = |m: &[f64]| m.iter().sum::<f64>() / (n * (n - 1)).max(1) as f64;
    write_json(
        &dir.join("phid_report.json"),
        &json!({
            "config": config.value(),
            "n_units": n,
            "n_prompts": rec.n_prompts(),
            "n_timesteps": rec.n_timesteps(),
            "n_pairs": n * (n - 1) / 2,
            "degenerate_count": run.degenerate.len(),
            "degenerate": run.degenerate,
            "mean_synergy": off_mean(&run.matrix.synergy),
            "mean_redundancy": off_mean(&run.matrix.redundancy),
        }),
    )?;
    timing(
        &dir,
        "phid",
        started,
        json!({ "pairs_computed": run.pairs_computed, "pairs_per_second": progress.throughput() }),
    )?;
    eprintln!(
        "phid: {} units, {} pairs, {} degenerate series -> {}",
        n,
        n * (n - 1) / 2,
        run.degenerate.len(),
        dir.display()
    );
    Ok(())
}

fn parse_mode(s: &str) -> Result<SubsetMode> {
    SubsetMode::ALL
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::Validation(format!("unknown subset mode {s:?}")))
}

#[derive(Serialize)]
struct SubsetFile<'a> {
    #[serde(flatten)]
    subset: &'a HeadSubset,
    config: Value,
}

#[derive(Serialize)]
struct OrderFile<'a> {
    order: &'a str,
    seed: Option<u64>,
    unit_ids: &'a [usize],
    config: Value,
}

pub fn rank(config: RunConfig, modes: &[String]) -> Result<()> {
    let started = Instant::now();
    let modes: Vec<SubsetMode> = modes.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?;
    let input = config.require_input()?;
    let config = config.with(
        "modes",
        modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
    );
    if config.fractions.contains(&0.0) {
        return Err(Error::Validation(
            "subset fractions must be positive".into(),
        ));
    }
    let pm = PairMatrix::load(&input)?;
    let rp = synergy_redundancy_rank(&node_means(&pm)?)?;
    let profile = layer_profile(&rp, &pm.units)?;
    let dir = output_dir(&config)?;
    let cfg = config.value();

    write(
        &dir.join("ranks.csv"),
        with_config_line(&config, &rp.to_csv(&pm.units)?),
    )?;
    write_json(
        &dir.join("ranks.json"),
        &json!({ "config": cfg, "units": rp.rows(&pm.units)? }),
    )?;
    write(
        &dir.join("layer_profile.csv"),
        with_config_line(&config, &layer_profile_csv(&profile)),
    )?;

    let subsets = dir.join("subsets");
    fs::create_dir_all(&subsets)?;
    let mut subset_files = Vec::new();
    for &mode in &modes {
        for &fraction in &config.fractions {
            let seeds: &[u64] = if mode == SubsetMode::Random {
                &config.seeds
            } else {
                &[0]
            };
            for &seed in seeds {
                let subset = select_subset(&rp, fraction, mode, seed)?;
                let name = if mode == SubsetMode::Random {
                    format!("{}__f{fraction}__s{seed}.json", mode.as_str())
                } else {
                    format!("{}__f{fraction}.json", mode.as_str())
                };
                write_json(
                    &subsets.join(&name),
                    &SubsetFile {
                        subset: &subset,
                        config: cfg.clone(),
                    },
                )?;
                subset_files.push(format!("subsets/{name}"));
            }
        }
    }

    let orders = dir.join("orders");
    fs::create_dir_all(&orders)?;
    let synergistic = ablation_order(&rp, OrderMode::Synergistic, 0);
    write_json(
        &orders.join("synergistic.json"),
        &OrderFile {
            order: "synergistic",
            seed: None,
            unit_ids: &synergistic,
            config: cfg.clone(),
        },
    )?;
    for &seed in &config.seeds {
        let order = ablation_order(&rp, OrderMode::Random, seed);
        write_json(
            &orders.join(format!("random__s{seed}.json")),
            &OrderFile {
                order: "random",
                seed: Some(seed),
                unit_ids: &order,
                config: cfg.clone(),
            },
        )?;
    }

    let peak = profile
        .iter()
        .max_by(|a, b| a.mean_score.total_cmp(&b.mean_score))
        .expect("at least two layers");
    let interior_peak = profile
        .iter()
        .all(|p| p.layer == peak.layer || p.mean_score < peak.mean_score)
        && peak.layer != profile[0].layer
        && peak.layer != profile[profile.len() - 1].layer;
    write_json(
        &dir.join("rank_report.json"),
        &json!({
            "config": cfg,
            "n_units": pm.n(),
            "n_layers": profile.len(),
            "layer_profile": profile,
            "interior_peak": interior_peak,
            "subset_sizes": config.fractions.iter().map(|&f| subset_size(f, pm.n())).collect::<Vec<_>>(),
            "subset_files": subset_files,
        }),
    )?;
    timing(&dir, "rank", started, json!({}))?;
    eprintln!(
        "rank: {} units over {} layers -> {}",
        pm.n(),
        profile.len(),
        dir.display()
    );
    Ok(())
}

fn graph_summary(g: &WeightedGraph, seed: u64) -> Result<Value> {
    let communities = modularity(g, seed)?;
    Ok(json!({
        "global_efficiency": global_efficiency(g),
        "modularity_q": communities.q,
        "n": g.n(),
        "total_weight": g.total_weight(),
        "n_communities": communities.n_communities(),
        "partition": communities.partition,
    }))
}

fn edge_list_with_config(config: &RunConfig, g: &WeightedGraph) -> String {
    let text = g.to_edge_list();
    let (header, body) = text.split_once('\n').expect("edge list has a header");
    format!("{header}\n# config {}\n{body}", config.json())
}

pub fn graph(config: RunConfig, top_fraction: f64, community_seed: u64) -> Result<()> {
    let started = Instant::now();
    let input = config.require_input()?;
    let config = config
        .with("top_fraction", top_fraction)
        .with("community_seed", community_seed);
    let pm = PairMatrix::load(&input)?;
    let layers: Vec<usize> = pm.units.iter().map(|u| u.layer).collect();
    let syn = build_graph(&pm.synergy, pm.n(), true)?.with_layers(layers.clone())?;
    let red = build_graph(&pm.redundancy, pm.n(), true)?.with_layers(layers)?;
    let report = json!({
        "config": config.value(),
        "synergy": graph_summary(&syn, community_seed)?,
        "redundancy": graph_summary(&red, community_seed)?,
    });
    let dir = output_dir(&config)?;
    write_json(&dir.join("graph_metrics.json"), &report)?;
    for (name, g) in [("synergy", &syn), ("redundancy", &red)] {
        let top = threshold_top_fraction(g, top_fraction)?;
        write(
            &dir.join(format!("{name}_top.edges")),
            edge_list_with_config(&config, &top),
        )?;
    }
    timing(&dir, "graph", started, json!({}))?;
    eprintln!("graph: {} nodes -> {}", pm.n(), dir.display());
    Ok(())
}

fn load_trace(path: &Path) -> Result<LogitTrace> {
    if !path.exists() {
        return Err(Error::Validation(format!(
            "missing trace file {}",
            path.display()
        )));
    }
    LogitTrace::load(path)
}

pub fn divergence(config: RunConfig, orders: &[String]) -> Result<()> {
    let started = Instant::now();
    let input = config.require_input()?;
    if !input.is_dir() {
        return Err(Error::Validation(format!(
            "{} is not a directory",
            input.display()
        )));
    }
    if orders.is_empty()
        || orders
            .iter()
            .any(|o| o.is_empty() || o.contains(['/', '_']))
    {
        return Err(Error::Validation(format!("invalid --orders {orders:?}")));
    }
    let config = config.with("orders", orders);
    let mut prompts: Vec<String> = fs::read_dir(&input)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("__base.phil"))
                .map(str::to_string)
        })
        .collect();
    prompts.sort();
    if prompts.is_empty() {
        return Err(Error::Validation(format!(
            "no baseline traces (*__base.phil) in {}",
            input.display()
        )));
    }
    let baselines: Vec<LogitTrace> = prompts
        .iter()
        .map(|p| load_trace(&input.join(baseline_file_name(p))))
        .collect::<Result<_>>()?;
    let mut ablated = Vec::new();
    for order in orders {
        let seeds: &[u64] = if order == "random" {
            &config.seeds
        } else {
            &[0]
        };
        for &fraction in &config.fractions {
            for &seed in seeds {
                for (prompt, base) in prompts.iter().zip(&baselines) {
                    let path = input.join(ablated_file_name(prompt, order, fraction, seed));
                    let trace = if fraction == 0.0 && !path.exists() {
                        // nothing ablated: the baseline stands in
                        let mut t = base.clone();
                        t.condition = syncore::Condition::Ablated {
                            order: order.clone(),
                            fraction,
                            seed,
                            unit_ids: Vec::new(),
                        };
                        t
                    } else {
                        load_trace(&path)?
                    };
                    ablated.push(trace);
                }
            }
        }
    }
    let curve = ablation_curve(&baselines, &ablated)?;
    let dir = output_dir(&config)?;
    write(
        &dir.join("curve.csv"),
        with_config_line(&config, &curve.to_csv()),
    )?;
    let floor_hits: usize = curve
        .points
        .iter()
        .filter(|p| p.seed.is_some())
        .map(|p| p.floor_hits)
        .sum();
    write_json(
        &dir.join("divergence_report.json"),
        &json!({
            "config": config.value(),
            "prompts": prompts,
            "n_traces": ablated.len(),
            "floor_hits": floor_hits,
            "curve": curve.points,
        }),
    )?;
    timing(&dir, "divergence", started, json!({}))?;
    eprintln!(
        "divergence: {} prompts, {} ablated traces -> {}",
        prompts.len(),
        ablated.len(),
        dir.display()
    );
    Ok(())
}

pub struct SynthArgs {
    pub kind: String,
    pub n_units: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_prompts: Option<usize>,
    pub timesteps: Option<usize>,
    pub noise_sd: Option<f64>,
    pub ar: Option<f64>,
    pub strength: Option<f64>,
    pub seed: u64,
    pub critical: Vec<usize>,
    pub vocab: usize,
}

pub fn synth(config: RunConfig, a: SynthArgs) -> Result<()> {
    if a.kind == "logit_scenario" {
        return synth_logits(config, a);
    }
    let kind: SynthKind = a.kind.parse()?;
    let base = SynthSpec::new(kind);
    let spec = SynthSpec {
        kind,
        n_units: a.n_units.unwrap_or(base.n_units),
        n_layers: a.n_layers.unwrap_or(base.n_layers),
        n_prompts: a.n_prompts.unwrap_or(base.n_prompts),
        n_timesteps: a.timesteps.unwrap_or(base.n_timesteps),
        noise_sd: a.noise_sd.unwrap_or(base.noise_sd),
        ar_coefficient: a.ar.unwrap_or(base.ar_coefficient),
        seed: a.seed,
        strength: a.strength.unwrap_or(base.strength),
    };
    spec.validate()?;
    let config = config.with("spec", &spec);
    let rec = syncore::generate(&spec)?;
    let dir = output_dir(&config)?;
    save_recording(&rec, dir.join("recording.phid"))?;
    write_json(
        &dir.join("synth_manifest.json"),
        &json!({ "config": config.value(), "spec": spec }),
    )?;
    eprintln!(
        "synth: {} recording with {} units, {} prompts, {} steps -> {}",
        kind,
        spec.n_units,
        spec.n_prompts,
        spec.n_timesteps,
        dir.display()
    );
    Ok(())
}

fn synth_logits(config: RunConfig, a: SynthArgs) -> Result<()> {
    let n_units = a.n_units.unwrap_or(20);
    let shape = ScenarioShape {
        n_prompts: a.n_prompts.unwrap_or(ScenarioShape::default().n_prompts),
        vocab: a.vocab,
        n_steps: a.timesteps.unwrap_or(ScenarioShape::default().n_steps),
    };
    let critical = if a.critical.is_empty() {
        (0..n_units.div_ceil(5)).collect()
    } else {
        a.critical.clone()
    };
    let planted = HeadSubset {
        unit_ids: critical,
        mode: SubsetMode::MostSynergistic,
        fraction: 0.0,
        seed: a.seed,
    };
    let config = config
        .with("kind", "logit_scenario")
        .with("n_units", n_units)
        .with("shape", shape)
        .with("critical", &planted.unit_ids)
        .with("seed", a.seed);
    let scenario = generate_logit_scenario_with(n_units, &planted, shape, a.seed)?;
    let dir = output_dir(&config)?;
    let tag = |mut t: LogitTrace| {
        t.extra.push(("scenario_seed".into(), a.seed.to_string()));
        t
    };
    for base in scenario.baselines() {
        tag(base.clone()).save(dir.join(baseline_file_name(base.prompt_id())))?;
    }
    let planted_order = scenario.planted_order();
    let mut orders: Vec<(&str, u64, Vec<usize>)> = vec![("synergistic", 0, planted_order.clone())];
    for &seed in &config.seeds {
        orders.push((
            "random",
            seed,
            syncore::ranking::random_order(n_units, seed),
        ));
    }
    for (order, seed, ids) in &orders {
        for &fraction in &config.fractions {
            let k = subset_size(fraction, n_units);
            for trace in scenario.ablate(&ids[..k], order, fraction, *seed)? {
                let name = ablated_file_name(trace.prompt_id(), order, fraction, *seed);
                tag(trace).save(dir.join(name))?;
            }
        }
    }
    write_json(
        &dir.join("synth_manifest.json"),
        &json!({
            "config": config.value(),
            "planted_order": planted_order,
            "critical_kl_nats": syncore::synthgen::CRITICAL_KL,
            "noncritical_kl_nats": syncore::synthgen::NONCRITICAL_KL,
        }),
    )?;
    eprintln!(
        "synth: logit scenario with {} units, {} prompts -> {}",
        n_units,
        shape.n_prompts,
        dir.display()
    );
    Ok(())
}
