//! `topic-adapt`: train topic models, estimate the ASR channel, adapt
//! conversation topic weights, evaluate perplexity and synthesize data.
//!
//! Exit status: 0 on success, 1 when an estimator or metric fails, 2 for
//! usage and input errors.

mod manifest;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use manifest::{beside, float, inside, ManifestBuilder};
use topic_adapt::adapt::{adapted_unigram, fit_batch, EstimatorConfig, FitResult, Variant};
use topic_adapt::channel::{estimate_channel, ChannelModel};
use topic_adapt::corpus::{parse_conversation, Conversation, Vocabulary, DEFAULT_MAX_WORDS, DEFAULT_REL_FLOOR};
use topic_adapt::eval::{constrained_perplexity, perplexity, ReferenceCorpus};
use topic_adapt::numfmt::trimmed_fixed;
use topic_adapt::synth::{sample_all, SynthSpec};
use topic_adapt::topics::{train_topic_model, TopicModel, Unigram, UNK};

#[derive(Parser)]
#[command(name = "topic-adapt", version, about = "Topic-mixture LM adaptation from ASR confusion networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train Witten-Bell topic unigrams from `<dir>/<topic-label>/<file>.txt`.
    TopicsTrain { corpus_dir: PathBuf, out_model: PathBuf },

    /// Estimate the ASR channel from co-occurrences in CNET bins.
    Channel {
        /// Glob pattern matching CNET files.
        cnet_glob: String,
        out_channel: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REL_FLOOR)]
        rel_floor: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
        max_words: usize,
    },

    /// Estimate topic weights for one CNET file or every `*.cnet` in a directory.
    Adapt {
        input: PathBuf,
        topic_model: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        channel: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        map_strength: f64,
        #[arg(long, default_value_t = topic_adapt::adapt::DEFAULT_REL_TOL)]
        tol: f64,
        #[arg(long, default_value_t = topic_adapt::adapt::DEFAULT_MAX_ITERS)]
        max_iters: usize,
        /// LAMBDA output; a directory when the input is a directory.
        #[arg(long)]
        out_lambda: PathBuf,
        /// Adapted unigram output; a directory when the input is a directory.
        #[arg(long)]
        out_unigram: Option<PathBuf>,
        /// JSON diagnostics; a directory when the input is a directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },

    /// Perplexity and constrained perplexity of a unigram on reference text.
    Ppl {
        unigram: PathBuf,
        reference: PathBuf,
        /// Count thresholds; `inf` for none.
        #[arg(long = "thr", value_parser = parse_thr, num_args = 1..,
              default_values = ["1", "2", "3", "4", "5", "inf"])]
        thr: Vec<Threshold>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Write synthetic conversations, models and truth files from a JSON spec.
    Synth {
        spec: PathBuf,
        out_dir: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct Threshold(Option<u64>);

fn parse_thr(s: &str) -> std::result::Result<Threshold, String> {
    if s == "inf" {
        return Ok(Threshold(None));
    }
    match s.parse::<u64>() {
        Ok(n) if n >= 1 => Ok(Threshold(Some(n))),
        _ => Err(format!("threshold must be a positive integer or `inf`, got `{s}`")),
    }
}

impl Threshold {
    fn label(self) -> String {
        self.0.map_or_else(|| "inf".to_string(), |n| n.to_string())
    }
}

/// Bad invocation or input that the user must fix.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let computation = err
        .chain()
        .filter_map(|e| e.downcast_ref::<topic_adapt::Error>())
        .any(|e| e.is_computation_failure());
    if computation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TopicsTrain { corpus_dir, out_model } => topics_train(&corpus_dir, &out_model),
        Command::Channel {
            cnet_glob,
            out_channel,
            rel_floor,
            max_words,
        } => channel(&cnet_glob, &out_channel, rel_floor, max_words),
        Command::Adapt {
            input,
            topic_model,
            variant,
            channel,
            map_strength,
            tol,
            max_iters,
            out_lambda,
            out_unigram,
            report,
        } => adapt(AdaptArgs {
            input,
            topic_model,
            channel,
            cfg: EstimatorConfig::new(variant)
                .with_map_strength(map_strength)
                .with_tolerance(tol, max_iters),
            out_lambda,
            out_unigram,
            report,
        }),
        Command::Ppl {
            unigram,
            reference,
            thr,
            out,
        } => ppl(&unigram, &reference, &thr, out.as_deref()),
        Command::Synth { spec, out_dir, seed } => synth(&spec, &out_dir, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| usage(format!("cannot read directory {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e == ext)
}

fn topics_train(corpus_dir: &Path, out_model: &Path) -> Result<()> {
    let mut corpus: Vec<(String, Vec<String>)> = Vec::new();
    for topic_dir in sorted_entries(corpus_dir)?.into_iter().filter(|p| p.is_dir()) {
        let label = topic_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| usage(format!("topic folder {} is not valid UTF-8", topic_dir.display())))?
            .to_string();
        let mut tokens = Vec::new();
        for file in sorted_entries(&topic_dir)?.into_iter().filter(|p| has_extension(p, "txt")) {
            tokens.extend(read_to_string(&file)?.split_whitespace().map(str::to_string));
        }
        corpus.push((label, tokens));
    }
    if corpus.is_empty() {
        bail!(usage(format!("{} has no topic folders", corpus_dir.display())));
    }
    let mut vocab = Vocabulary::new();
    vocab.intern(UNK);
    let tm = train_topic_model(&corpus, &mut vocab)?;
    write(out_model, &tm.to_text(&vocab))?;
    ManifestBuilder::new("topics-train")
        .input(corpus_dir)
        .finish()
        .write(&beside(out_model))?;
    println!("T={} V={}", tm.num_topics(), tm.vocab_size());
    Ok(())
}

fn load_conversation(path: &Path, vocab: &mut Vocabulary) -> Result<Conversation> {
    parse_conversation(open(path)?, vocab)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn channel(pattern: &str, out: &Path, rel_floor: f64, max_words: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&rel_floor) || max_words == 0 {
        bail!(usage("--rel-floor must lie in [0, 1] and --max-words must be positive"));
    }
    let mut paths = glob::glob(pattern)
        .map_err(|e| usage(format!("bad glob `{pattern}`: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!(usage(format!("`{pattern}` matches no files")));
    }
    let mut vocab = Vocabulary::new();
    let convs = paths
        .iter()
        .map(|p| load_conversation(p, &mut vocab))
        .collect::<Result<Vec<_>>>()?;
    let cm = estimate_channel(&convs, rel_floor, max_words)?;
    write(out, &cm.to_text(&vocab))?;
    let mut m = ManifestBuilder::new("channel")
        .param("rel_floor", rel_floor)
        .param("max_words", max_words);
    for p in &paths {
        m = m.input(p);
    }
    m.finish().write(&beside(out))?;
    println!("conversations={} rows={}", convs.len(), cm.num_rows());
    Ok(())
}

struct AdaptArgs {
    input: PathBuf,
    topic_model: PathBuf,
    channel: Option<PathBuf>,
    cfg: EstimatorConfig,
    out_lambda: PathBuf,
    out_unigram: Option<PathBuf>,
    report: Option<PathBuf>,
}

fn fit_report(conv: &Conversation, cfg: &EstimatorConfig, fit: &FitResult) -> String {
    let report = json!({
        "conversation": conv.id(),
        "variant": cfg.variant.as_str(),
        "map_strength": cfg.map_strength,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "final_objective": float(fit.final_objective()),
        "lambda": fit.weights.lambda(),
        "objective_trace": fit.loglik_trace.iter().map(|&x| float(x)).collect::<Vec<Value>>(),
    });
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

fn adapt(args: AdaptArgs) -> Result<()> {
    let cfg = &args.cfg;
    match (cfg.variant.uses_channel(), &args.channel) {
        (true, None) => bail!(usage(format!("--variant {} needs --channel", cfg.variant))),
        (false, Some(_)) => bail!(usage(format!("--variant {} does not take --channel", cfg.variant))),
        _ => {}
    }
    let (mut tm, mut vocab) = TopicModel::from_text(open(&args.topic_model)?)
        .map_err(|e| usage(format!("{}: {e}", args.topic_model.display())))?;
    let cm = match &args.channel {
        Some(p) => Some(
            ChannelModel::from_text(open(p)?, &mut vocab)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };

    let dir_mode = args.input.is_dir();
    let inputs = if dir_mode {
        let files: Vec<PathBuf> = sorted_entries(&args.input)?
            .into_iter()
            .filter(|p| has_extension(p, "cnet"))
            .collect();
        if files.is_empty() {
            bail!(usage(format!("{} holds no .cnet files", args.input.display())));
        }
        files
    } else {
        vec![args.input.clone()]
    };
    let convs = inputs
        .iter()
        .map(|p| load_conversation(p, &mut vocab))
        .collect::<Result<Vec<_>>>()?;
    tm.extend_vocabulary(vocab.len());

    let target = |base: &Path, conv: &Conversation, ext: &str| -> PathBuf {
        if dir_mode {
            base.join(format!("{}.{ext}", conv.id()))
        } else {
            base.to_path_buf()
        }
    };
    if dir_mode {
        let mut ids: Vec<&str> = convs.iter().map(|c| c.id()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            bail!(usage(format!("conversation id `{}` appears twice", w[0])));
        }
        for dir in [Some(&args.out_lambda), args.out_unigram.as_ref(), args.report.as_ref()]
            .into_iter()
            .flatten()
        {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }

    let results = fit_batch(&convs, &tm, cm.as_ref(), cfg);
    let mut failures = Vec::new();
    for (conv, result) in convs.iter().zip(results) {
        let fit = match result {
            Ok(fit) => fit,
            Err(e) => {
                failures.push(anyhow::Error::new(e).context(format!("conversation {}", conv.id())));
                continue;
            }
        };
        write(
            &target(&args.out_lambda, conv, "lambda"),
            &fit.weights.to_text(conv.id(), tm.labels()),
        )?;
        if let Some(base) = &args.out_unigram {
            write(&target(base, conv, "unigram"), &adapted_unigram(&tm, &fit.weights).to_text(&vocab))?;
        }
        if let Some(base) = &args.report {
            write(&target(base, conv, "json"), &fit_report(conv, cfg, &fit))?;
        }
        println!(
            "{}\titerations={}\tconverged={}\tobjective={}",
            conv.id(),
            fit.iterations,
            fit.converged,
            fit.final_objective()
        );
    }

    let mut m = ManifestBuilder::new("adapt")
        .input(&args.topic_model)
        .param("variant", cfg.variant.as_str())
        .param("map_strength", cfg.map_strength)
        .param("tol", cfg.rel_tol)
        .param("max_iters", cfg.max_iters)
        .param("parallel", topic_adapt::par::is_parallel());
    if let Some(p) = &args.channel {
        m = m.input(p);
    }
    for p in &inputs {
        m = m.input(p);
    }
    let manifest_path = if dir_mode {
        inside(&args.out_lambda)
    } else {
        beside(&args.out_lambda)
    };
    m.finish().write(&manifest_path)?;

    match failures.len() {
        0 => Ok(()),
        n => {
            for e in &failures[1..] {
                eprintln!("error: {e:#}");
            }
            Err(failures.swap_remove(0).context(format!("{n} of {} conversations failed", convs.len())))
        }
    }
}

fn ppl(unigram: &Path, reference: &Path, thrs: &[Threshold], out: Option<&Path>) -> Result<()> {
    let (model, vocab) =
        Unigram::from_text(open(unigram)?).map_err(|e| usage(format!("{}: {e}", unigram.display())))?;
    let corpus = ReferenceCorpus::from_text(open(reference)?, &vocab)?;
    if corpus.is_empty() {
        bail!(usage(format!("{} has no tokens", reference.display())));
    }
    let mut table = format!("ppl\tinf\t{}\n", trimmed_fixed(perplexity(&model, &corpus, Some(&vocab))?, 6));
    for &thr in thrs {
        let qualifying = corpus
            .tokens()
            .iter()
            .any(|w| thr.0.is_none_or(|t| corpus.count(*w) <= t));
        let value = if qualifying {
            trimmed_fixed(constrained_perplexity(&model, &corpus, thr.0, Some(&vocab))?, 6)
        } else {
            "NA".to_string()
        };
        table.push_str(&format!("cppl\t{}\t{value}\n", thr.label()));
    }
    let manifest = ManifestBuilder::new("ppl")
        .input(unigram)
        .input(reference)
        .param("thr", thrs.iter().map(|t| t.label()).collect::<Vec<_>>())
        .finish();
    match out {
        Some(path) => {
            write(path, &table)?;
            manifest.write(&beside(path))?;
        }
        None => {
            print!("{table}");
            eprint!("{}", manifest.to_json());
        }
    }
    Ok(())
}

fn synth(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = serde_json::from_str(&read_to_string(spec_path)?)
        .map_err(|e| usage(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let (world, convs) = sample_all(&spec)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write(&out_dir.join("topics.txt"), &world.topics.to_text(&world.vocab))?;
    write(&out_dir.join("channel.txt"), &world.channel.to_text(&world.vocab))?;
    for (conv, truth) in &convs {
        write(&out_dir.join(format!("{}.cnet", conv.id())), &conv.to_cnet(&world.vocab))?;
        write(&out_dir.join(format!("{}.truth", conv.id())), &truth.to_text(conv.id(), &world.vocab))?;
    }
    ManifestBuilder::new("synth")
        .input(spec_path)
        .param("spec", serde_json::to_value(&spec)?)
        .seed(spec.seed)
        .finish()
        .write(&inside(out_dir))?;
    println!("conversations={} bins={}", convs.len(), spec.bins);
    Ok(())
}
