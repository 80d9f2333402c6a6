//! `mgfn`: synth, build-graph, train and evaluate.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
//! configuration error.

mod config;

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use mgfn_core::eval::{evaluate, pca_project, write_pca_csv, EmbeddingTable, EvalInput};
use mgfn_core::graph::{self, Csmg};
use mgfn_core::graph_builder::{build_csmg, classify_edges, clean_records, extract_transition_pairs, parse_log, write_log, InteractionRecord};
use mgfn_core::model::{ConvKind, FusionKind};
use mgfn_core::synthgen::{
    generate_catalog, generate_interactions, last_day_cutoff, read_catalog, split_train_validation, standard_profiles,
    write_catalog, ItemMeta,
};
use mgfn_core::training::{serialize_checkpoint, train_with_progress, write_loss_csv, Checkpoint};

use config::{PipelineConfig, Variant};

#[derive(Parser)]
#[command(name = "mgfn", version, about = "Cross-scenario graph embeddings for item-to-item retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized stage (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic catalog and multi-scenario watch log.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        exclusive_fraction: Option<f64>,
        /// Interaction log output.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Catalog output.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Build the cross-scenario multi-graph from a log.
    BuildGraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Graph output.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        hash_buckets: Option<usize>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
        /// Build from the whole log instead of holding out the last day.
        #[arg(long)]
        no_holdout: bool,
        /// Directory for the edge composition report.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Train a model and export item embeddings.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// mgfn, mgfn-mean, mgfn-weighted, mgfn-gat, single-scenario:<s> or dataconcat
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// cross_scenario, random or degree:<scenario>
        #[arg(long)]
        negative_strategy: Option<String>,
        /// Comma-separated per-hop fanouts, outermost first.
        #[arg(long, value_delimiter = ',')]
        fanouts: Option<Vec<usize>>,
        /// Run batch preparation inline instead of on a prefetch thread.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Loss curve CSV.
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Retrieval metrics for one target scenario.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        no_holdout: bool,
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Also write PCA plot data.
        #[arg(long)]
        pca: bool,
        /// Number of most frequent tags in the PCA export.
        #[arg(long)]
        tags: Option<usize>,
        /// Items sampled per tag in the PCA export.
        #[arg(long)]
        sample: Option<usize>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(common: &Common) -> Outcome<PipelineConfig> {
    let mut cfg = PipelineConfig::load(common.config.as_deref()).map_err(Failure::Usage)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn finish_config(mut cfg: PipelineConfig) -> Outcome<PipelineConfig> {
    cfg.train.seed = cfg.seed;
    if cfg.paths.catalog.is_none() {
        cfg.paths.catalog = cfg.paths.log.as_deref().map(default_catalog);
    }
    if cfg.deterministic {
        cfg.train.prefetch = false;
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

/// Where synth puts the catalog when no path is given.
fn default_catalog(log: &Path) -> PathBuf {
    log.with_extension("catalog.tsv")
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

/// An input path that must be configured and exist.
fn input<'a>(p: &'a Option<PathBuf>, what: &str) -> Outcome<&'a Path> {
    let p = p.as_deref().ok_or_else(|| usage(format!("no {what} path given")))?;
    if !p.is_file() {
        return Err(usage(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

fn output<'a>(p: &'a Option<PathBuf>, what: &str) -> Outcome<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("no {what} output path given")))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, header: &str, body: &str) -> anyhow::Result<()> {
    let mut s = String::new();
    for line in header.lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(body);
    write_bytes(path, s.as_bytes())
}

fn header(command: &str, cfg: &PipelineConfig) -> String {
    format!("mgfn {command}\n{}", cfg.echo())
}

fn read_log_file(path: &Path) -> anyhow::Result<Vec<InteractionRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_log(BufReader::new(f)).with_context(|| format!("parsing log {}", path.display()))
}

fn read_catalog_file(path: &Path) -> anyhow::Result<Vec<ItemMeta>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_catalog(BufReader::new(f)).with_context(|| format!("parsing catalog {}", path.display()))
}

/// Cleaned training and validation records.
fn split_log(
    records: &[InteractionRecord],
    catalog: &[ItemMeta],
    holdout: bool,
) -> (Vec<InteractionRecord>, Vec<InteractionRecord>) {
    let ids: HashSet<String> = catalog.iter().map(|m| m.item_id.clone()).collect();
    let cleaned = clean_records(records, &ids);
    match (holdout, last_day_cutoff(&cleaned)) {
        (true, Some(cut)) => split_train_validation(&cleaned, cut),
        _ => (cleaned, Vec::new()),
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Synth {
            common,
            items,
            users,
            days,
            topics,
            exclusive_fraction,
            out,
            catalog,
        } => {
            let mut cfg = load_config(&common)?;
            set(&mut cfg.synth.items, items);
            set(&mut cfg.synth.users, users);
            set(&mut cfg.synth.days, days);
            set(&mut cfg.synth.topics, topics);
            set(&mut cfg.synth.exclusive_fraction, exclusive_fraction);
            set_path(&mut cfg.paths.log, out);
            set_path(&mut cfg.paths.catalog, catalog);
            let cfg = finish_config(cfg)?;
            cmd_synth(&cfg)
        }
        Command::BuildGraph {
            common,
            log,
            catalog,
            out,
            hash_buckets,
            source,
            target,
            no_holdout,
            reports,
        } => {
            let mut cfg = load_config(&common)?;
            set_path(&mut cfg.paths.log, log);
            set_path(&mut cfg.paths.catalog, catalog);
            set_path(&mut cfg.paths.graph, out);
            set_path(&mut cfg.paths.reports, reports);
            set(&mut cfg.graph.hash_buckets, hash_buckets);
            set(&mut cfg.graph.source, source);
            set(&mut cfg.graph.target, target);
            if no_holdout {
                cfg.graph.holdout_last_day = false;
            }
            let cfg = finish_config(cfg)?;
            cmd_build_graph(&cfg)
        }
        Command::Train {
            common,
            graph,
            variant,
            steps,
            batch_size,
            lr,
            negative_strategy,
            fanouts,
            deterministic,
            checkpoint,
            embeddings,
            loss,
        } => {
            let mut cfg = load_config(&common)?;
            set_path(&mut cfg.paths.graph, graph);
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set_path(&mut cfg.paths.embeddings, embeddings);
            set_path(&mut cfg.paths.loss, loss);
            set(&mut cfg.variant, variant);
            set(&mut cfg.train.steps, steps);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.lr, lr);
            set(&mut cfg.train.fanouts, fanouts);
            if let Some(s) = negative_strategy {
                cfg.train.negative_strategy = s.parse().map_err(|e| usage(format!("{e}")))?;
            }
            if deterministic {
                cfg.deterministic = true;
            }
            let cfg = finish_config(cfg)?;
            cmd_train(cfg)
        }
        Command::Evaluate {
            common,
            embeddings,
            log,
            catalog,
            source,
            target,
            no_holdout,
            reports,
            pca,
            tags,
            sample,
        } => {
            let mut cfg = load_config(&common)?;
            set_path(&mut cfg.paths.embeddings, embeddings);
            set_path(&mut cfg.paths.log, log);
            set_path(&mut cfg.paths.catalog, catalog);
            set_path(&mut cfg.paths.reports, reports);
            set(&mut cfg.graph.source, source);
            set(&mut cfg.graph.target, target);
            set(&mut cfg.eval.pca_tags, tags);
            set(&mut cfg.eval.pca_sample, sample);
            if no_holdout {
                cfg.graph.holdout_last_day = false;
            }
            if pca {
                cfg.eval.pca = true;
            }
            let cfg = finish_config(cfg)?;
            cmd_evaluate(&cfg)
        }
    }
}

fn cmd_synth(cfg: &PipelineConfig) -> Outcome {
    let s = &cfg.synth;
    if s.items == 0 || s.users == 0 || s.days == 0 || s.topics == 0 {
        return Err(usage("items, users, days and topics must all be >= 1"));
    }
    if !(0.0..=0.5).contains(&s.exclusive_fraction) {
        return Err(usage("exclusive_fraction must lie in [0, 0.5]"));
    }
    let log_path = output(&cfg.paths.log, "log")?;
    let catalog = generate_catalog(s.items, s.topics, cfg.seed).map_err(|e| usage(e.to_string()))?;
    let profiles = standard_profiles(s.topics, s.exclusive_fraction);
    let records = generate_interactions(&catalog, &profiles, s.users, s.days, cfg.seed).context("generating log")?;

    let mut w = create(log_path)?;
    write_log(&records, &mut w).with_context(|| format!("writing {}", log_path.display()))?;
    w.flush().with_context(|| format!("writing {}", log_path.display()))?;
    let catalog_path = cfg.paths.catalog.clone().unwrap_or_else(|| default_catalog(log_path));
    let mut w = create(&catalog_path)?;
    write_catalog(&catalog, &mut w).with_context(|| format!("writing {}", catalog_path.display()))?;
    w.flush().with_context(|| format!("writing {}", catalog_path.display()))?;
    // both TSV formats are header-less, so the effective config goes next to them
    let meta = log_path.with_extension("config.toml");
    write_text(&meta, &header("synth", cfg), "")?;

    println!("seed: {}", cfg.seed);
    println!("items: {}", catalog.len());
    println!("users: {}", s.users);
    println!("records: {}", records.len());
    for p in &profiles {
        let n = records.iter().filter(|r| r.scenario_id == p.scenario_id).count();
        println!("  {}: {n}", p.scenario_id);
    }
    println!("log: {}", log_path.display());
    println!("catalog: {}", catalog_path.display());
    Ok(())
}

fn print_graph_table(g: &Csmg) {
    println!("{:<16} {:>10} {:>12} {:>14}", "Scenario", "# Nodes", "# Edges", "# Transitions");
    for (name, nodes, edges, weight) in g.scenario_stats() {
        println!("{name:<16} {nodes:>10} {edges:>12} {weight:>14}");
    }
    println!("{:<16} {:>10}", "(all)", g.num_nodes());
}

fn cmd_build_graph(cfg: &PipelineConfig) -> Outcome {
    let log_path = input(&cfg.paths.log, "log")?;
    let catalog_path = input(&cfg.paths.catalog, "catalog")?;
    let out = output(&cfg.paths.graph, "graph")?;
    let records = read_log_file(log_path)?;
    let catalog = read_catalog_file(catalog_path)?;
    let (train, _) = split_log(&records, &catalog, cfg.graph.holdout_last_day);
    let pairs = extract_transition_pairs(&train);
    let mut g = build_csmg(&pairs, &train, &catalog, cfg.graph.hash_buckets).context("building graph")?;
    let head = header("build-graph", cfg);
    g.set_metadata(head.clone());
    write_bytes(out, &graph::serialize(&g))?;

    println!("records: {} cleaned training: {} transition pairs: {}", records.len(), train.len(), pairs.len());
    print_graph_table(&g);
    let (src, tgt) = (&cfg.graph.source, &cfg.graph.target);
    let has = |s: &str| g.scenarios().iter().any(|x| x == s);
    let (text, kv) = if g.num_scenarios() < 2 || !has(src) || !has(tgt) || src == tgt {
        let note = format!(
            "edge classification skipped: needs two distinct scenarios `{src}` and `{tgt}`, graph has [{}]\n",
            g.scenarios().join(", ")
        );
        (note, "classification=skipped\n".to_owned())
    } else {
        let report = classify_edges(&g, src, tgt).context("classifying edges")?;
        (report.to_string(), report.to_kv())
    };
    print!("{text}");
    if let Some(dir) = &cfg.paths.reports {
        write_text(&dir.join("edge_composition.txt"), &head, &text)?;
        write_text(&dir.join("edge_composition.kv"), &head, &kv)?;
    }
    println!("graph: {}", out.display());
    Ok(())
}

fn cmd_train(mut cfg: PipelineConfig) -> Outcome {
    let graph_path = input(&cfg.paths.graph, "graph")?.to_owned();
    let ckpt_path = output(&cfg.paths.checkpoint, "checkpoint")?.to_owned();
    let emb_path = output(&cfg.paths.embeddings, "embeddings")?.to_owned();
    let variant = Variant::parse(&cfg.variant).map_err(Failure::Usage)?;
    let bytes = fs::read(&graph_path).with_context(|| format!("reading {}", graph_path.display()))?;
    let full = graph::deserialize(&bytes).with_context(|| format!("loading graph {}", graph_path.display()))?;

    let g = match &variant {
        Variant::Mgfn => full,
        Variant::MgfnMean => {
            cfg.model.fusion = FusionKind::Mean;
            full
        }
        Variant::MgfnWeighted => {
            cfg.model.fusion = FusionKind::Weighted;
            full
        }
        Variant::MgfnGat => {
            cfg.model.conv = ConvKind::Gat;
            full
        }
        Variant::SingleScenario(s) => {
            let idx = full.scenario_index(s).map_err(|e| usage(e.to_string()))?;
            cfg.model.fusion = FusionKind::Mean;
            full.restrict_to_scenario(idx)
        }
        Variant::DataConcat => {
            cfg.model.fusion = FusionKind::Mean;
            full.collapse_scenarios("all")
        }
    };
    cfg.model.hash_buckets = g.hash_buckets();
    if cfg.train.fanouts.len() != cfg.model.layers {
        return Err(usage(format!(
            "{} fanouts given for a {}-layer model",
            cfg.train.fanouts.len(),
            cfg.model.layers
        )));
    }
    let head = header("train", &cfg);
    println!("seed: {}", cfg.seed);
    println!("variant: {} ({} scenario(s): {})", cfg.variant, g.num_scenarios(), g.scenarios().join(", "));
    let out = train_with_progress(&g, &cfg.model, &cfg.train, &mut |p| {
        println!("step {:>7}  loss {:.6}", p.step, p.loss);
    })
    .context("training")?;

    let ck = Checkpoint {
        metadata: head.clone(),
        params: out.params,
        optimizer: out.optimizer,
    };
    write_bytes(&ckpt_path, &serialize_checkpoint(&ck))?;
    let mut w = create(&emb_path)?;
    out.embeddings
        .write_tsv(&mut w, &head)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", emb_path.display()))?;
    if let Some(p) = &cfg.paths.loss {
        let mut w = create(p)?;
        write_loss_csv(&mut w, &head, &out.loss_curve)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("embeddings: {} ({} items)", emb_path.display(), out.embeddings.len());
    Ok(())
}

/// `<source>-only`, `<target>-only` or `shared` by training watches.
fn source_labels(train: &[InteractionRecord]) -> HashMap<String, String> {
    let mut seen: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in train {
        let v = seen.entry(&r.item_id).or_default();
        if !v.contains(&r.scenario_id.as_str()) {
            v.push(&r.scenario_id);
        }
    }
    seen.into_iter()
        .map(|(id, s)| {
            let label = if s.len() == 1 { format!("{}-only", s[0]) } else { "shared".into() };
            (id.to_owned(), label)
        })
        .collect()
}

fn cmd_evaluate(cfg: &PipelineConfig) -> Outcome {
    let emb_path = input(&cfg.paths.embeddings, "embeddings")?;
    let log_path = input(&cfg.paths.log, "log")?;
    let catalog_path = input(&cfg.paths.catalog, "catalog")?;
    let f = File::open(emb_path).with_context(|| format!("opening {}", emb_path.display()))?;
    let table = EmbeddingTable::read_tsv(BufReader::new(f)).with_context(|| format!("parsing {}", emb_path.display()))?;
    let records = read_log_file(log_path)?;
    let catalog = read_catalog_file(catalog_path)?;
    let (train, validation) = split_log(&records, &catalog, cfg.graph.holdout_last_day);
    let target = cfg.graph.target.as_str();
    let source = Some(cfg.graph.source.as_str()).filter(|s| *s != target);
    let report = evaluate(&EvalInput {
        table: &table,
        train: &train,
        validation: &validation,
        target,
        source,
        retrieval: &cfg.retrieval,
    })
    .context("evaluating")?;
    let head = header("evaluate", cfg);
    print!("{}", report.to_text());
    if let Some(dir) = &cfg.paths.reports {
        write_text(&dir.join("eval.txt"), &head, &report.to_text())?;
        write_text(&dir.join("eval.kv"), &head, &report.to_kv())?;
    }
    if cfg.eval.pca {
        let dir = cfg
            .paths
            .reports
            .as_deref()
            .ok_or_else(|| usage("--pca needs a reports directory"))?;
        let tags: HashMap<String, String> = catalog.iter().map(|m| (m.item_id.clone(), m.tag.clone())).collect();
        let points = pca_project(&table, &tags, &source_labels(&train), cfg.eval.pca_tags, cfg.eval.pca_sample, cfg.seed)
            .context("PCA export")?;
        let path = dir.join("pca.csv");
        let mut w = create(&path)?;
        write_pca_csv(&mut w, &head, &points)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("pca: {} ({} points)", path.display(), points.len());
    }
    Ok(())
}
