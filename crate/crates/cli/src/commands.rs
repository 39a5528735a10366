use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use tripmine::data::{self, SplitSpec, SynthSpec};
use tripmine::eval::{self, EvalReport};
use tripmine::gradcheck;
use tripmine::io::{self, fmt_f64};
use tripmine::model::ModelParams;
use tripmine::optim::{Optimizer, OptimizerKind};
use tripmine::train::{self, LossHistory, TrainConfig};
use tripmine::{
    mine_offline, negative_frequency, outlier_mask, pairwise, EmbeddingSet, ExtremePolicy, LossKind, LossSpec, Metric,
    MetricKind, OutlierMask, Rng, TripletSet,
};

use crate::error::{CliError, CliResult};
use crate::manifest::{Artifact, RunManifest};
use crate::{
    ChordArgs, Command, Common, EmbedArgs, EvalArgs, GenSynthArgs, GradcheckArgs, MetricArgs, MineArgs, ModelArgs,
    OptimArgs, PretrainArgs, RetrieveArgs, SplitArgs, TrainArgs,
};

// Stream ids for model initialization under the run seed.
const STREAM_INIT: u64 = 10;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::Split(a) => split(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Embed(a) => embed(&a),
        Command::Mine(a) => mine(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Retrieve(a) => retrieve(&a),
        Command::Chord(a) => chord(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
    }
}

/// Bookkeeping for one run directory.
struct Run {
    command: &'static str,
    dir: PathBuf,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    start: Instant,
}

impl Run {
    fn start(command: &'static str, common: &Common, args: &impl Serialize) -> CliResult<Self> {
        std::fs::create_dir_all(&common.out)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", common.out.display())))?;
        Ok(Self {
            command,
            dir: common.out.clone(),
            seed: common.seed,
            config: serde_json::to_value(args).expect("arguments serialize"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.inputs.push(Artifact::hash(role, path)?);
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn output(&mut self, role: &str, name: &str) -> CliResult<PathBuf> {
        let path = self.path(name);
        self.outputs.push(Artifact::hash(role, &path)?);
        Ok(path)
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        if let serde_json::Value::Object(map) = &mut self.config {
            map.insert(key.to_string(), serde_json::to_value(value).expect("note serializes"));
        }
    }

    fn finish(self) -> CliResult<()> {
        RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_secs: self.start.elapsed().as_secs_f64(),
        }
        .write(&self.dir)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_dataset(run: &mut Run, role: &str, path: &Path) -> CliResult<EmbeddingSet> {
    run.input(role, path)?;
    Ok(if is_csv(path) { io::load_dataset_csv(path)? } else { io::load_dataset(path)? })
}

fn load_model(run: &mut Run, role: &str, path: &Path) -> CliResult<ModelParams> {
    run.input(role, path)?;
    Ok(io::load_model(path)?)
}

fn load_triplets(run: &mut Run, path: &Path, labels: &[usize]) -> CliResult<TripletSet> {
    run.input("triplets", path)?;
    Ok(if is_csv(path) {
        io::load_triplets_csv(path, labels, run.seed)?
    } else {
        io::load_triplets(path, labels)?
    })
}

/// Loads `input`, embedding it with `model` when one is given.
fn load_embeddings(run: &mut Run, input: &Path, model: Option<&Path>) -> CliResult<EmbeddingSet> {
    let set = load_dataset(run, "input", input)?;
    match model {
        Some(m) => {
            let params = load_model(run, "model", m)?;
            Ok(train::embed_set(&params, &set)?)
        }
        None => Ok(set),
    }
}

fn metric(args: &MetricArgs) -> CliResult<Metric> {
    let kind = MetricKind::from_str(&args.metric)?;
    Ok(Metric::new(kind, args.normalize))
}

fn optimizer(args: &OptimArgs) -> CliResult<Optimizer> {
    if !(args.lr.is_finite() && args.lr >= 0.0) {
        return Err(CliError::usage(format!("learning rate must be finite and non-negative, got {}", args.lr)));
    }
    Ok(Optimizer::new(OptimizerKind::from_str(&args.optimizer)?, args.lr))
}

fn new_model(model: &ModelArgs, input_dim: usize, classes: usize, seed: u64) -> CliResult<ModelParams> {
    let mut rng = Rng::stream(seed, STREAM_INIT);
    Ok(ModelParams::init(input_dim, &model.hidden, model.embedding_dim, classes, &mut rng)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn epoch_summary(history: &LossHistory) -> String {
    let means = history.epoch_means();
    match (means.first(), means.last()) {
        (Some(a), Some(b)) => format!("mean loss: first epoch {a:.6}, last epoch {b:.6}"),
        _ => "no batches".to_string(),
    }
}

fn gen_synth(a: &GenSynthArgs) -> CliResult<()> {
    let mut run = Run::start("gen-synth", &a.common, a)?;
    if a.wide_classes > a.classes {
        return Err(CliError::usage(format!("{} wide classes requested out of {}", a.wide_classes, a.classes)));
    }
    let mut spec = SynthSpec::with_separation(a.classes, a.per_class, a.dim, a.separation, a.common.seed)?;
    for (k, s) in spec.sigmas.iter_mut().enumerate() {
        *s = if k >= a.classes - a.wide_classes { a.wide_factor } else { 1.0 };
    }
    let set = data::gen_synthetic(&spec)?;
    io::save_dataset(run.path("dataset.tmds"), &set)?;
    run.output("dataset", "dataset.tmds")?;
    if a.csv {
        io::save_dataset_csv(run.path("dataset.csv"), &set)?;
        run.output("dataset-csv", "dataset.csv")?;
    }
    println!("{} rows, {} classes, dimension {}", set.len(), set.class_count(), set.dim());
    run.finish()
}

fn split(a: &SplitArgs) -> CliResult<()> {
    let mut run = Run::start("split", &a.common, a)?;
    let set = load_dataset(&mut run, "dataset", &a.input)?;
    let fractions: [f64; 3] = a
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| CliError::usage(format!("expected three fractions, got {}", a.fractions.len())))?;
    let spec = SplitSpec {
        fractions,
        seed: a.common.seed,
        stratified: !a.no_stratify,
    };
    let s = data::split(&set, &spec)?;
    let mut listing = String::from("part,index\n");
    for ((part, idx), name) in s.parts.iter().zip(&s.indices).zip(["x1", "x2", "xt"]) {
        let file = format!("{name}.tmds");
        io::save_dataset(run.path(&file), part)?;
        run.output(name, &file)?;
        for i in idx {
            let _ = writeln!(listing, "{name},{i}");
        }
        println!("{name}: {} rows", part.len());
    }
    write_text(&run.path("split_indices.csv"), &listing)?;
    run.output("indices", "split_indices.csv")?;
    run.finish()
}

fn pretrain(a: &PretrainArgs) -> CliResult<()> {
    let mut run = Run::start("pretrain", &a.common, a)?;
    let set = load_dataset(&mut run, "x1", &a.input)?;
    let mut params = new_model(&a.model, set.dim(), set.class_count(), a.common.seed)?;
    let mut opt = optimizer(&a.optim)?;
    let cfg = TrainConfig {
        epochs: a.optim.epochs,
        batch_size: a.batch_size,
        seed: a.common.seed,
        ..TrainConfig::default()
    };
    let history = train::train_classifier(&set, &mut params, &mut opt, &cfg)?;
    io::save_model(run.path("classifier.tmmp"), &params)?;
    run.output("classifier", "classifier.tmmp")?;
    io::save_history_csv(run.path("history.csv"), &history)?;
    run.output("history", "history.csv")?;
    println!("{}", epoch_summary(&history));
    println!("training accuracy {:.4}", train::classifier_accuracy(&params, &set)?);
    run.finish()
}

fn embed(a: &EmbedArgs) -> CliResult<()> {
    let mut run = Run::start("embed", &a.common, a)?;
    let source = RunManifest::beside(&a.model)?.map(|m| m.command);
    run.note("model_source", &source);
    let params = load_model(&mut run, "model", &a.model)?;
    let set = load_dataset(&mut run, "input", &a.input)?;
    let out = train::embed_set(&params, &set)?;
    io::save_dataset(run.path("embedding.tmds"), &out)?;
    run.output("embedding", "embedding.tmds")?;
    println!("{} rows embedded into dimension {}", out.len(), out.dim());
    run.finish()
}

/// Mining works on the feature space, so its input must come from `embed`
/// applied to a `pretrain` checkpoint.
fn check_feature_provenance(features: &Path) -> CliResult<()> {
    let missing = |what: &str| {
        CliError::usage(format!(
            "missing prerequisite: {} must be the output of `embed` with a `pretrain` checkpoint ({what})",
            features.display()
        ))
    };
    let manifest = RunManifest::beside(features)?.ok_or_else(|| missing("no manifest.json beside it"))?;
    if manifest.command != "embed" {
        return Err(missing(&format!("it was produced by `{}`", manifest.command)));
    }
    if manifest.config.get("model_source").and_then(|v| v.as_str()) != Some("pretrain") {
        return Err(missing("its model was not produced by `pretrain`"));
    }
    Ok(())
}

fn mine(a: &MineArgs) -> CliResult<()> {
    check_feature_provenance(&a.features)?;
    let mut run = Run::start("mine", &a.common, a)?;
    let policy = ExtremePolicy::from_str(&a.policy)?;
    let set = load_dataset(&mut run, "features", &a.features)?;
    let metric = metric(&a.metric)?;
    let dist = pairwise(&set, metric)?;
    let mask = if a.no_outlier_test {
        OutlierMask::none(set.len())
    } else {
        outlier_mask(&dist, a.z_threshold)?
    };
    let outcome = mine_offline(&set, &dist, &mask, policy, &Rng::new(a.common.seed))?;
    io::save_triplets(run.path("triplets.tmts"), &outcome.triplets)?;
    run.output("triplets", "triplets.tmts")?;
    io::save_triplets_csv(run.path("triplets.csv"), &outcome.triplets)?;
    run.output("triplets-csv", "triplets.csv")?;
    io::save_skips_csv(run.path("skips.csv"), &outcome.skips)?;
    run.output("skips", "skips.csv")?;
    println!(
        "{} triplets ({}), {} anchors skipped, {} masked pairs",
        outcome.triplets.len(),
        policy,
        outcome.skips.len(),
        mask.excluded_count()
    );
    run.finish()
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let mut run = Run::start("train", &a.common, a)?;
    let parts = a
        .input
        .iter()
        .map(|p| load_dataset(&mut run, "input", p))
        .collect::<CliResult<Vec<_>>>()?;
    let set = data::concat(&parts.iter().collect::<Vec<_>>())?;
    let mut params = match &a.init {
        Some(p) => load_model(&mut run, "init", p)?.embedding_trunk(),
        None => new_model(&a.model, set.dim(), 0, a.common.seed)?,
    };
    let mut opt = optimizer(&a.optim)?;
    let kind = LossKind::from_str(&a.loss)?;
    let loss = LossSpec {
        margin: a.margin,
        dws_lambda: a.dws_lambda,
        dws_dmin: a.dws_dmin,
        proxy_momentum: a.proxy_momentum,
        metric: metric(&a.metric)?,
        ..LossSpec::new(kind)
    };
    let cfg = TrainConfig {
        epochs: a.optim.epochs,
        batch_size: a.batch_size,
        offline_triplets: a.triplets_per_batch,
        loss,
        seed: a.common.seed,
    };
    let history = match (a.mode.as_str(), &a.triplets) {
        ("offline", Some(t)) => {
            let triplets = load_triplets(&mut run, t, set.labels())?;
            train::train_offline(&triplets, &set, &mut params, &mut opt, &cfg)?
        }
        ("offline", None) => return Err(CliError::usage("offline training needs --triplets")),
        ("online", None) => train::train_online(&set, &mut params, &mut opt, &cfg)?,
        _ => return Err(CliError::usage("--triplets applies to offline training only")),
    };
    io::save_model(run.path("model.tmmp"), &params)?;
    run.output("model", "model.tmmp")?;
    io::save_history_csv(run.path("history.csv"), &history)?;
    run.output("history", "history.csv")?;
    println!("{}", epoch_summary(&history));
    run.finish()
}

fn eval_cmd(a: &EvalArgs) -> CliResult<()> {
    let mut run = Run::start("eval", &a.common, a)?;
    let metric = metric(&a.metric)?;
    let queries = load_embeddings(&mut run, &a.input, a.model.as_deref())?;
    let report: EvalReport = match &a.gallery {
        Some(g) => {
            let gallery = load_embeddings(&mut run, g, a.model.as_deref())?;
            eval::recall_at_k_gallery(&queries, &gallery, &a.recall, metric)?
        }
        None => eval::recall_at_k(&queries, &a.recall, metric)?,
    };
    io::save_eval_csv(run.path("eval.csv"), &report)?;
    run.output("report", "eval.csv")?;
    print!("{}", report.table());
    run.finish()
}

fn retrieve(a: &RetrieveArgs) -> CliResult<()> {
    let mut run = Run::start("retrieve", &a.common, a)?;
    let set = load_embeddings(&mut run, &a.input, a.model.as_deref())?;
    if a.query_index >= set.len() {
        return Err(CliError::usage(format!("query index {} out of range for {} rows", a.query_index, set.len())));
    }
    if a.top >= set.len() {
        return Err(CliError::usage(format!("top-{} needs more than {} rows", a.top, set.len())));
    }
    let query = set.row_slice(a.query_index).to_vec();
    let mut hits = eval::retrieve_topk(&set, &query, a.top + 1, metric(&a.metric)?)?;
    hits.retain(|h| h.index != a.query_index);
    hits.truncate(a.top);
    let mut csv = String::from("rank,index,label,distance\n");
    println!("query {} (label {})", a.query_index, set.label(a.query_index));
    for (r, h) in hits.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{}", r + 1, h.index, h.label, fmt_f64(h.distance));
        println!("{:>3}  index {:>6}  label {:>3}  distance {:.6}", r + 1, h.index, h.label, h.distance);
    }
    write_text(&run.path("retrieval.csv"), &csv)?;
    run.output("retrieval", "retrieval.csv")?;
    run.finish()
}

fn chord(a: &ChordArgs) -> CliResult<()> {
    let mut run = Run::start("chord", &a.common, a)?;
    let set = load_dataset(&mut run, "dataset", &a.input)?;
    let triplets = load_triplets(&mut run, &a.triplets, set.labels())?;
    let freq = negative_frequency(&triplets, &set)?;
    io::save_frequency_csv(run.path("negative_frequency.csv"), &freq)?;
    run.output("frequency", "negative_frequency.csv")?;
    for (i, row) in freq.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("class {i:>3}: {}", cells.join(""));
    }
    run.finish()
}

fn gradcheck_cmd(a: &GradcheckArgs) -> CliResult<()> {
    let mut run = Run::start("gradcheck", &a.common, a)?;
    let rows = if a.model_chain {
        gradcheck::check_all_model_chains(a.common.seed)?
    } else {
        gradcheck::check_all_losses(a.common.seed)?
    };
    let mut csv = String::from("loss,value,max_rel_error,coordinates,passed\n");
    println!("{:<10}{:>16}{:>16}  status", "loss", "value", "max rel err");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.kind.name(),
            fmt_f64(r.value),
            fmt_f64(r.max_rel_error),
            r.coordinates,
            r.passed()
        );
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<10}{:>16.6}{:>16.3e}  {status}", r.kind.name(), r.value, r.max_rel_error);
    }
    write_text(&run.path("gradcheck.csv"), &csv)?;
    run.output("report", "gradcheck.csv")?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.kind.name()).collect();
    run.finish()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "relative error at or above {} for: {}",
            gradcheck::TOLERANCE,
            failed.join(", ")
        )))
    }
}
